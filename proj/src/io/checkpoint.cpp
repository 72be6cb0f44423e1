#include "fedseries/io/checkpoint.hpp"

#include "fedseries/io/binary.hpp"

namespace fedseries::io {

namespace {
constexpr const char* kFormat = "fedseries.params.v1";
}

nlohmann::json param_table(const ParamStore<double>& params) {
  nlohmann::json table = nlohmann::json::array();
  Index offset = 0;
  for (const auto& e : params.entries()) {
    table.push_back({{"name", e.name}, {"layer", e.layer}, {"shape", e.shape}, {"offset", offset},
                     {"size", e.size()}});
    offset += e.size();
  }
  return table;
}

void save_params(const ParamStore<double>& params, const std::filesystem::path& dir,
                 const nlohmann::json& meta) {
  std::filesystem::create_directories(dir);
  const VectorXr flat = params.flatten();
  write_array<double>(dir / "params.bin", {flat.data(), static_cast<std::size_t>(flat.size())});
  write_json(dir / "manifest.json", {{"format", kFormat},
                                     {"total", flat.size()},
                                     {"tensors", param_table(params)},
                                     {"meta", meta}});
}

LoadedParams load_params(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw FormatError("missing checkpoint manifest " + manifest_path.string());
  }
  const nlohmann::json m = read_json(manifest_path);
  if (m.value("format", "") != kFormat) {
    throw FormatError(manifest_path.string() + ": not a " + std::string(kFormat) + " manifest");
  }
  const auto total = m.at("total").get<Index>();
  const std::vector<double> flat = read_array<double>(dir / "params.bin", static_cast<std::size_t>(total));

  LoadedParams out;
  Index offset = 0;
  for (const auto& t : m.at("tensors")) {
    const Shape shape = t.at("shape").get<Shape>();
    const Index size = t.at("size").get<Index>();
    if (shape.empty() || t.at("offset").get<Index>() != offset || size != shape_size(shape) || offset + size > total) {
      throw FormatError(manifest_path.string() + ": inconsistent entry for " + t.at("name").get<std::string>());
    }
    const Index rows = shape.size() == 2 ? shape[0] : 1;
    out.params.add(t.at("name").get<std::string>(), t.at("layer").get<std::string>(), shape,
                   Eigen::Map<const MatrixXr>(flat.data() + offset, rows, shape.back()));
    offset += size;
  }
  if (offset != total) throw FormatError(manifest_path.string() + ": tensors do not cover params.bin");
  out.meta = m.value("meta", nlohmann::json::object());
  return out;
}

}  // namespace fedseries::io
