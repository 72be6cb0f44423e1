#pragma once

#include "fedseries/numerics/param_store.hpp"
#include "fedseries/numerics/tensor.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <memory>
#include <vector>

namespace fedseries {

/// Handle to a value recorded on a Graph.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode tape over dense matrices.
///
/// Every op evaluates eagerly and records a closure that maps the output
/// gradient onto its inputs. `backward` replays the tape in reverse creation
/// order, so gradient sums are always formed in the same order.
template <typename Scalar>
class Graph {
 public:
  using Mat = Matrix<Scalar>;

  /// With `record = false` no backward closures or caches are kept (inference).
  explicit Graph(bool record = true) : record_(record) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  const Mat& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.external ? *n.external : n.value;
  }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Mat value) { return push(std::move(value), {}, nullptr); }

  /// Leaf bound to a ParamStore entry; backward writes into the entry's gradient slot.
  /// The entry's value is referenced, not copied, so it must outlive the graph unchanged.
  Var parameter(ParamEntry<Scalar>& entry) {
    Var v = push_external(entry.value);
    if (record_) {
      nodes_[v.id].param = &entry;
      nodes_[v.id].needs_grad = true;
    }
    return v;
  }

  /// Leaf referencing a matrix owned elsewhere; no gradient flows into it.
  Var reference(const Mat& value) { return push_external(value); }

  /// As above; `backward` then also clears the gradients of every other entry in `store`.
  Var parameter(ParamStore<Scalar>& store, const std::string& name) {
    if (record_ && std::find(stores_.begin(), stores_.end(), &store) == stores_.end()) {
      stores_.push_back(&store);
    }
    return parameter(store.at(name));
  }

  Var matmul(Var a, Var b) {
    Mat out = fedseries::matmul(value(a), value(b));
    return push(std::move(out), {a, b}, [a, b](Graph& g, const Mat& dy) {
      if (g.needs(a)) g.accumulate(a, dy * g.value(b).transpose());
      if (g.needs(b)) g.accumulate(b, g.value(a).transpose() * dy);
    });
  }

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    Mat out = value(a) + value(b);
    return push(std::move(out), {a, b}, [a, b](Graph& g, const Mat& dy) {
      if (g.needs(a)) g.accumulate(a, dy);
      if (g.needs(b)) g.accumulate(b, dy);
    });
  }

  /// Adds a 1×n row to every row of `a`.
  Var add_row(Var a, Var row) {
    if (value(row).rows() != 1 || value(row).cols() != value(a).cols()) {
      throw ShapeError("add_row: row width does not match");
    }
    Mat out = value(a).rowwise() + value(row).row(0);
    return push(std::move(out), {a, row}, [a, row](Graph& g, const Mat& dy) {
      if (g.needs(a)) g.accumulate(a, dy);
      if (g.needs(row)) g.accumulate(row, dy.colwise().sum());
    });
  }

  Var scale(Var a, Scalar factor) {
    Mat out = value(a) * factor;
    return push(std::move(out), {a}, [a, factor](Graph& g, const Mat& dy) {
      if (g.needs(a)) g.accumulate(a, dy * factor);
    });
  }

  Var square(Var a) {
    Mat out = value(a).array().square().matrix();
    return push(std::move(out), {a}, [a](Graph& g, const Mat& dy) {
      if (g.needs(a)) g.accumulate(a, (dy.array() * g.value(a).array() * Scalar(2)).matrix());
    });
  }

  Var relu(Var a) {
    Mat out = fedseries::relu(value(a));
    return push(std::move(out), {a}, [a](Graph& g, const Mat& dy) {
      if (!g.needs(a)) return;
      g.accumulate(a, (g.value(a).array() > Scalar(0)).select(dy, Scalar(0)).matrix());
    });
  }

  /// Applies sine to columns [first_col, cols); earlier columns pass through.
  Var sin_columns(Var a, Index first_col) {
    const Mat& x = value(a);
    if (first_col < 0 || first_col > x.cols()) throw ShapeError("sin_columns: column out of range");
    Mat out = x;
    const Index n = x.cols() - first_col;
    out.rightCols(n) = x.rightCols(n).array().sin().matrix();
    return push(std::move(out), {a}, [a, first_col, n](Graph& g, const Mat& dy) {
      if (!g.needs(a)) return;
      Mat dx = dy;
      dx.rightCols(n).array() *= g.value(a).rightCols(n).array().cos();
      g.accumulate(a, dx);
    });
  }

  Var concat_cols(Var a, Var b) {
    const Mat& x = value(a);
    const Mat& y = value(b);
    if (x.rows() != y.rows()) throw ShapeError("concat_cols: row counts differ");
    Mat out(x.rows(), x.cols() + y.cols());
    out << x, y;
    const Index split = x.cols();
    return push(std::move(out), {a, b}, [a, b, split](Graph& g, const Mat& dy) {
      if (g.needs(a)) g.accumulate(a, dy.leftCols(split));
      if (g.needs(b)) g.accumulate(b, dy.rightCols(dy.cols() - split));
    });
  }

  /// Averages consecutive groups of `group` rows: (n·group)×d → n×d.
  Var mean_pool(Var a, Index group) {
    const Mat& x = value(a);
    if (group <= 0 || x.rows() % group != 0) throw ShapeError("mean_pool: rows not divisible by group");
    const Index n = x.rows() / group;
    Mat out(n, x.cols());
    for (Index i = 0; i < n; ++i) out.row(i) = x.middleRows(i * group, group).colwise().sum() / Scalar(group);
    return push(std::move(out), {a}, [a, group, n](Graph& g, const Mat& dy) {
      if (!g.needs(a)) return;
      Mat dx(n * group, dy.cols());
      for (Index i = 0; i < n; ++i) {
        dx.middleRows(i * group, group) = dy.row(i).replicate(group, 1) / Scalar(group);
      }
      g.accumulate(a, dx);
    });
  }

  Var sum(Var a) {
    Mat out(1, 1);
    out(0, 0) = value(a).sum();
    return push(std::move(out), {a}, [a](Graph& g, const Mat& dy) {
      if (!g.needs(a)) return;
      const Mat& x = g.value(a);
      g.accumulate(a, Mat::Constant(x.rows(), x.cols(), dy(0, 0)));
    });
  }

  /// Mean squared difference between `prediction` and a fixed target of the same shape.
  Var mse(Var prediction, const Mat& target) {
    const Mat& p = value(prediction);
    if (p.rows() != target.rows() || p.cols() != target.cols()) throw ShapeError("mse: shape mismatch");
    if (p.size() == 0) throw std::invalid_argument("mse: empty input");
    Mat residual = p - target;
    Mat out(1, 1);
    out(0, 0) = residual.squaredNorm() / Scalar(p.size());
    auto cache = std::make_shared<Mat>(std::move(residual));
    return push(std::move(out), {prediction}, [prediction, cache](Graph& g, const Mat& dy) {
      if (!g.needs(prediction)) return;
      g.accumulate(prediction, *cache * (Scalar(2) * dy(0, 0) / Scalar(cache->size())));
    });
  }

  Var softmax_rows(Var a) {
    Mat out = fedseries::softmax_rows(value(a));
    const std::size_t self = nodes_.size();
    return push(std::move(out), {a}, [a, self](Graph& g, const Mat& dy) {
      if (g.needs(a)) g.accumulate(a, softmax_rows_backward<Scalar>(g.nodes_[self].value, dy));
    });
  }

  Var layer_norm(Var x, Var gain, Var bias, Scalar eps = Scalar(1e-5)) {
    auto cache = std::make_shared<LayerNormCache<Scalar>>();
    Mat out = fedseries::layer_norm<Scalar>(value(x), value(gain).row(0), value(bias).row(0), eps,
                                            cache.get());
    if (!record_) cache.reset();
    return push(std::move(out), {x, gain, bias}, [x, gain, bias, cache](Graph& g, const Mat& dy) {
      const Mat& xhat = cache->normalized;
      if (g.needs(gain)) g.accumulate(gain, (dy.array() * xhat.array()).colwise().sum().matrix());
      if (g.needs(bias)) g.accumulate(bias, dy.colwise().sum());
      if (!g.needs(x)) return;
      const Scalar d = Scalar(xhat.cols());
      const Mat dxhat = dy.array().rowwise() * g.value(gain).row(0).array();
      Mat dx(xhat.rows(), xhat.cols());
      for (Index r = 0; r < xhat.rows(); ++r) {
        const Scalar s1 = dxhat.row(r).sum();
        const Scalar s2 = dxhat.row(r).dot(xhat.row(r));
        dx.row(r) = ((dxhat.row(r).array() * d - s1 - xhat.row(r).array() * s2) *
                     (cache->inv_std(r) / d)).matrix();
      }
      g.accumulate(x, dx);
    });
  }

  /// Batched multi-head scaled dot-product attention.
  ///
  /// q, k, v are (batch·seq)×(heads·d_head); rows of one sample are contiguous
  /// and the columns of head h are [h·d_head, (h+1)·d_head). The output has the
  /// same layout, i.e. the per-head results already concatenated.
  Var attention(Var q, Var k, Var v, Index batch, Index seq, Index heads, Index d_head) {
    const Mat& Q = value(q);
    const Mat& K = value(k);
    const Mat& V = value(v);
    for (const Mat* m : {&Q, &K, &V}) {
      if (m->rows() != batch * seq || m->cols() != heads * d_head) {
        throw ShapeError("attention: expected " + std::to_string(batch * seq) + "x" +
                         std::to_string(heads * d_head) + " inputs");
      }
    }
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(d_head));
    auto weights = std::make_shared<Mat>(batch * heads * seq, seq);
    Mat out(batch * seq, heads * d_head);
    Mat scores(seq, seq);
    for (Index b = 0; b < batch; ++b) {
      for (Index h = 0; h < heads; ++h) {
        const auto qb = Q.block(b * seq, h * d_head, seq, d_head);
        const auto kb = K.block(b * seq, h * d_head, seq, d_head);
        const auto vb = V.block(b * seq, h * d_head, seq, d_head);
        scores.noalias() = (qb * kb.transpose()) * scale;
        auto w = weights->middleRows((b * heads + h) * seq, seq);
        w = fedseries::softmax_rows(scores);
        out.block(b * seq, h * d_head, seq, d_head).noalias() = w * vb;
      }
    }
    const std::size_t self = nodes_.size();
    attention_weights_.emplace(self, weights);
    return push(std::move(out), {q, k, v},
                [q, k, v, batch, seq, heads, d_head, scale, weights](Graph& g, const Mat& dy) {
                  const Mat& Q = g.value(q);
                  const Mat& K = g.value(k);
                  const Mat& V = g.value(v);
                  Mat dq = Mat::Zero(Q.rows(), Q.cols());
                  Mat dk = Mat::Zero(K.rows(), K.cols());
                  Mat dv = Mat::Zero(V.rows(), V.cols());
                  Mat dw(seq, seq);
                  Mat ds(seq, seq);
                  for (Index b = 0; b < batch; ++b) {
                    for (Index h = 0; h < heads; ++h) {
                      const Index r0 = b * seq;
                      const Index c0 = h * d_head;
                      const Mat w = weights->middleRows((b * heads + h) * seq, seq);
                      const auto dout = dy.block(r0, c0, seq, d_head);
                      dv.block(r0, c0, seq, d_head).noalias() = w.transpose() * dout;
                      dw.noalias() = dout * V.block(r0, c0, seq, d_head).transpose();
                      ds = softmax_rows_backward<Scalar>(w, dw) * scale;
                      dq.block(r0, c0, seq, d_head).noalias() = ds * K.block(r0, c0, seq, d_head);
                      dk.block(r0, c0, seq, d_head).noalias() =
                          ds.transpose() * Q.block(r0, c0, seq, d_head);
                    }
                  }
                  if (g.needs(q)) g.accumulate(q, dq);
                  if (g.needs(k)) g.accumulate(k, dk);
                  if (g.needs(v)) g.accumulate(v, dv);
                });
  }

  /// Attention probabilities recorded by an `attention` node, (batch·heads·seq)×seq.
  const Mat& attention_weights(Var node) const { return *attention_weights_.at(node.id); }

  /// Back-propagates from a 1×1 loss into the gradient slots of all parameter leaves.
  /// Slots are overwritten unless `accumulate` is set.
  void backward(Var loss, bool accumulate = false) {
    if (!record_) throw std::logic_error("backward: graph was built without recording");
    const Mat& l = value(loss);
    if (l.rows() != 1 || l.cols() != 1) {
      throw ShapeError("backward: loss must be a scalar, got " + std::to_string(l.rows()) + "x" +
                       std::to_string(l.cols()));
    }
    if (!accumulate) {
      for (auto* store : stores_) store->zero_grads();
      for (auto& n : nodes_) {
        if (n.param) n.param->grad.setZero();
      }
    }
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[loss.id].grad = Mat::Ones(1, 1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      if (n.backward) {
        n.backward(*this, n.grad);
      }
      n.grad.resize(0, 0);
    }
  }

 private:
  using Backward = std::function<void(Graph&, const Mat&)>;

  struct Node {
    Mat value;
    const Mat* external = nullptr;
    Mat grad;
    Backward backward;
    ParamEntry<Scalar>* param = nullptr;
    bool needs_grad = false;
  };

  Var push(Mat value, std::initializer_list<Var> inputs, Backward backward) {
    if (!value.allFinite()) {
      throw std::domain_error("graph: non-finite value produced at node " +
                              std::to_string(nodes_.size()));
    }
    Node n;
    n.value = std::move(value);
    if (record_) {
      for (Var in : inputs) n.needs_grad = n.needs_grad || nodes_[in.id].needs_grad;
      if (n.needs_grad) n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var push_external(const Mat& value) {
    if (!value.allFinite()) {
      throw std::domain_error("graph: non-finite value bound at node " + std::to_string(nodes_.size()));
    }
    Node n;
    n.external = &value;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  bool needs(Var v) const { return nodes_[v.id].needs_grad; }

  // Parameter leaves sum straight into the store's gradient slot, which
  // `backward` has already cleared.
  template <typename Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id];
    if (n.param) {
      n.param->grad.noalias() += g;
      return;
    }
    Mat& slot = n.grad;
    if (slot.size() == 0) {
      slot.resize(g.rows(), g.cols());
      slot.noalias() = g;
    } else {
      slot.noalias() += g;
    }
  }

  void check_same(Var a, Var b, const char* op) const {
    const Mat& x = value(a);
    const Mat& y = value(b);
    if (x.rows() != y.rows() || x.cols() != y.cols()) {
      throw ShapeError(std::string(op) + ": shape mismatch");
    }
  }

  bool record_;
  std::vector<Node> nodes_;
  std::vector<ParamStore<Scalar>*> stores_;
  std::map<std::size_t, std::shared_ptr<Mat>> attention_weights_;
};

}  // namespace fedseries
