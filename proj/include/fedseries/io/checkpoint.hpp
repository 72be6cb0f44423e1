#pragma once

#include "fedseries/numerics/param_store.hpp"

#include <json.hpp>

#include <filesystem>

namespace fedseries::io {

/// Name, layer tag, shape and offset of every tensor in the flat vector.
nlohmann::json param_table(const ParamStore<double>& params);

/// Writes params.bin (flat little-endian doubles in store order) and
/// manifest.json (tensor table plus caller metadata under "meta").
void save_params(const ParamStore<double>& params, const std::filesystem::path& dir,
                 const nlohmann::json& meta = nlohmann::json::object());

struct LoadedParams {
  ParamStore<double> params;
  nlohmann::json meta;
};

LoadedParams load_params(const std::filesystem::path& dir);

}  // namespace fedseries::io
