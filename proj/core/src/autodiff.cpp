#include "jointseq/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "jointseq/error.hpp"
#include "jointseq/rng.hpp"

namespace jointseq {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StrideC = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using StrideM = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

MapC as_mat(const Tensor& t) {
  return MapC(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
MapM as_mat(Tensor& t) {
  return MapM(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

// Columns [c0, c0 + n) of a row-major matrix.
StrideC col_block(const Tensor& t, std::size_t c0, std::size_t n) {
  return StrideC(t.data() + c0, static_cast<Eigen::Index>(t.rows()),
                 static_cast<Eigen::Index>(n), Eigen::OuterStride<>(t.cols()));
}
StrideM col_block(Tensor& t, std::size_t c0, std::size_t n) {
  return StrideM(t.data() + c0, static_cast<Eigen::Index>(t.rows()),
                 static_cast<Eigen::Index>(n), Eigen::OuterStride<>(t.cols()));
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw Error(ErrorCode::kShapeMismatch,
                std::string(what) + ": expected a matrix, got " + shape_string(t.shape()));
  }
}

void require_cols(const Tensor& t, std::size_t n, const char* what) {
  if (t.size() != n) {
    throw Error(ErrorCode::kShapeMismatch, std::string(what) + ": expected " +
                                               std::to_string(n) + " values, got " +
                                               shape_string(t.shape()));
  }
}

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Keys j of query i split as [0, lo) clipped to -clip, [lo, hi) inside the
// window and [hi, lk) clipped to +clip.
struct RelWindow {
  std::size_t lo, hi;
};

RelWindow rel_window(std::size_t i, std::size_t lk, long clip) {
  const long n = static_cast<long>(lk);
  const long lo = std::clamp(static_cast<long>(i) - clip, 0L, n);
  const long hi = std::clamp(static_cast<long>(i) + clip + 1, lo, n);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

Tape::Node& Tape::node(Var v) {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw Error(ErrorCode::kOutOfRange, "tape variable " + std::to_string(v.id));
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw Error(ErrorCode::kOutOfRange, "tape variable " + std::to_string(v.id));
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::parameter(const Tensor& value, std::size_t slot) {
  Node n;
  n.external = &value;
  n.param_slot = static_cast<int>(slot);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::push(Tensor value, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  if (record_) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const {
  const Node& n = node(v);
  return n.external ? *n.external : n.value;
}

Tensor& Tape::grad(Var v) {
  Node& n = node(v);
  if (n.grad.empty()) {
    const Tensor& val = n.external ? *n.external : n.value;
    n.grad = Tensor(val.shape(), 0.0);
  }
  return n.grad;
}

bool Tape::has_grad(Var v) const { return !node(v).grad.empty(); }

void Tape::backward(Var root, double seed) {
  if (!record_) {
    throw Error(ErrorCode::kStaleTape, "tape was built without gradient recording");
  }
  if (value(root).size() != 1) {
    throw Error(ErrorCode::kShapeMismatch, "backward root must be a scalar");
  }
  grad(root)[0] += seed;
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, Var{i});
  }
}

// ---------------------------------------------------------------------------
// Ops

namespace ops {

Var linear(Tape& t, Var x, Var w, Var b) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  require_matrix(xv, "linear input");
  require_matrix(wv, "linear weight");
  if (xv.cols() != wv.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "linear: " + shape_string(xv.shape()) + " . " +
                                               shape_string(wv.shape()));
  }
  Tensor out = Tensor::matrix(xv.rows(), wv.cols());
  as_mat(out).noalias() = as_mat(xv) * as_mat(wv);
  if (b.valid()) {
    const Tensor& bv = t.value(b);
    require_cols(bv, wv.cols(), "linear bias");
    auto bias = Eigen::Map<const Eigen::RowVectorXd>(bv.data(), static_cast<Eigen::Index>(bv.size()));
    as_mat(out).rowwise() += bias;
  }
  return t.push(std::move(out), [x, w, b](Tape& tp, Var self) {
    const Tensor& dy = tp.grad(self);
    as_mat(tp.grad(x)).noalias() += as_mat(dy) * as_mat(tp.value(w)).transpose();
    as_mat(tp.grad(w)).noalias() += as_mat(tp.value(x)).transpose() * as_mat(dy);
    if (b.valid()) {
      Tensor& db = tp.grad(b);
      Eigen::Map<Eigen::RowVectorXd>(db.data(), static_cast<Eigen::Index>(db.size())) +=
          as_mat(dy).colwise().sum();
    }
  });
}

Var matmul(Tape& t, Var a, Var b) { return linear(t, a, b, Var{}); }

Var matmul_nt(Tape& t, Var a, Var b, double scale) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_matrix(av, "matmul_nt lhs");
  require_matrix(bv, "matmul_nt rhs");
  if (av.cols() != bv.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "matmul_nt: " + shape_string(av.shape()) +
                                               " . " + shape_string(bv.shape()) + "^T");
  }
  Tensor out = Tensor::matrix(av.rows(), bv.rows());
  as_mat(out).noalias() = scale * (as_mat(av) * as_mat(bv).transpose());
  return t.push(std::move(out), [a, b, scale](Tape& tp, Var self) {
    const Tensor& dy = tp.grad(self);
    as_mat(tp.grad(a)).noalias() += scale * (as_mat(dy) * as_mat(tp.value(b)));
    as_mat(tp.grad(b)).noalias() += scale * (as_mat(dy).transpose() * as_mat(tp.value(a)));
  });
}

Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (!av.same_shape(bv)) {
    throw Error(ErrorCode::kShapeMismatch,
                "add: " + shape_string(av.shape()) + " + " + shape_string(bv.shape()));
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return t.push(std::move(out), [a, b](Tape& tp, Var self) {
    const Tensor& dy = tp.grad(self);
    Tensor& da = tp.grad(a);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    Tensor& db = tp.grad(b);
    for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
  });
}

Var scale(Tape& t, Var a, double s) {
  Tensor out = t.value(a);
  for (double& v : out.values()) v *= s;
  return t.push(std::move(out), [a, s](Tape& tp, Var self) {
    const Tensor& dy = tp.grad(self);
    Tensor& da = tp.grad(a);
    for (std::size_t i = 0; i < dy.size(); ++i) da[i] += s * dy[i];
  });
}

Var dot(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.size() != bv.size()) {
    throw Error(ErrorCode::kShapeMismatch, "dot: size mismatch");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return t.push(Tensor::scalar(s), [a, b](Tape& tp, Var self) {
    const double g = tp.grad(self)[0];
    // Read both values before touching gradients; a and b may alias.
    const Tensor av2 = tp.value(a);
    const Tensor bv2 = tp.value(b);
    Tensor& da = tp.grad(a);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += g * bv2[i];
    Tensor& db = tp.grad(b);
    for (std::size_t i = 0; i < db.size(); ++i) db[i] += g * av2[i];
  });
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = t.value(x);
  require_matrix(xv, "layer_norm input");
  const std::size_t n = xv.rows();
  const std::size_t d = xv.cols();
  const Tensor& g = t.value(gain);
  const Tensor& b = t.value(bias);
  require_cols(g, d, "layer_norm gain");
  require_cols(b, d, "layer_norm bias");

  Tensor out = Tensor::matrix(n, d);
  Tensor xhat = Tensor::matrix(n, d);
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = xv.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    auto xh = xhat.row(r);
    auto o = out.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      xh[c] = (row[c] - mean) * is;
      o[c] = xh[c] * g[c] + b[c];
    }
  }
  return t.push(std::move(out), [x, gain, bias, xhat = std::move(xhat),
                                 inv_std = std::move(inv_std)](Tape& tp, Var self) {
    const Tensor& dy = tp.grad(self);
    const Tensor& gv = tp.value(gain);
    Tensor& dg = tp.grad(gain);
    Tensor& db = tp.grad(bias);
    Tensor& dx = tp.grad(x);
    const std::size_t rows = dy.rows();
    const std::size_t d = dy.cols();
    std::vector<double> dxhat(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto dyr = dy.row(r);
      const auto xh = xhat.row(r);
      double mean_dxhat = 0.0;
      double mean_dxhat_xhat = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        dg[c] += dyr[c] * xh[c];
        db[c] += dyr[c];
        dxhat[c] = dyr[c] * gv[c];
        mean_dxhat += dxhat[c];
        mean_dxhat_xhat += dxhat[c] * xh[c];
      }
      mean_dxhat /= static_cast<double>(d);
      mean_dxhat_xhat /= static_cast<double>(d);
      auto dxr = dx.row(r);
      for (std::size_t c = 0; c < d; ++c) {
        dxr[c] += inv_std[r] * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
      }
    }
  });
}

Var gelu(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * inv_sqrt2));
  }
  return t.push(std::move(out), [x](Tape& tp, Var self) {
    const Tensor& dy = tp.grad(self);
    const Tensor& xv = tp.value(x);
    Tensor& dx = tp.grad(x);
    const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
      dx[i] += dy[i] * (cdf + v * pdf);
    }
  });
}

Var dropout(Tape& t, Var x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  const Tensor& xv = t.value(x);
  Tensor mask(xv.shape());
  const double keep_scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double u = uniform01(rng);
    mask[i] = u >= p ? keep_scale : 0.0;
  }
  Tensor out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return t.push(std::move(out), [x, mask = std::move(mask)](Tape& tp, Var self) {
    const Tensor& dy = tp.grad(self);
    Tensor& dx = tp.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * mask[i];
  });
}

Var gather_rows(Tape& t, Var table, std::span<const std::int32_t> ids) {
  const Tensor& tv = t.value(table);
  require_matrix(tv, "gather_rows table");
  const std::size_t d = tv.cols();
  Tensor out = Tensor::matrix(ids.size(), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0) continue;
    if (static_cast<std::size_t>(ids[i]) >= tv.rows()) {
      throw Error(ErrorCode::kOutOfRange, "row id " + std::to_string(ids[i]));
    }
    std::copy_n(tv.row(static_cast<std::size_t>(ids[i])).data(), d, out.row(i).data());
  }
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  return t.push(std::move(out), [table, idv = std::move(idv)](Tape& tp, Var self) {
    const Tensor& dy = tp.grad(self);
    Tensor& dt = tp.grad(table);
    const std::size_t d = dy.cols();
    for (std::size_t i = 0; i < idv.size(); ++i) {
      if (idv[i] < 0) continue;
      auto dst = dt.row(static_cast<std::size_t>(idv[i]));
      const auto src = dy.row(i);
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  });
}

Var scatter_rows(Tape& t, Var src, std::span<const std::size_t> positions,
                 std::size_t n_rows) {
  const Tensor& sv = t.value(src);
  require_matrix(sv, "scatter_rows source");
  if (sv.rows() != positions.size()) {
    throw Error(ErrorCode::kShapeMismatch, "scatter_rows: row count vs positions");
  }
  const std::size_t d = sv.cols();
  Tensor out = Tensor::matrix(n_rows, d);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] >= n_rows) throw Error(ErrorCode::kOutOfRange, "scatter position");
    std::copy_n(sv.row(i).data(), d, out.row(positions[i]).data());
  }
  std::vector<std::size_t> pos(positions.begin(), positions.end());
  return t.push(std::move(out), [src, pos = std::move(pos)](Tape& tp, Var self) {
    const Tensor& dy = tp.grad(self);
    Tensor& ds = tp.grad(src);
    const std::size_t d = dy.cols();
    for (std::size_t i = 0; i < pos.size(); ++i) {
      const auto from = dy.row(pos[i]);
      auto to = ds.row(i);
      for (std::size_t c = 0; c < d; ++c) to[c] += from[c];
    }
  });
}

Var attention(Tape& t, Var q, Var k, Var v, Var head_scale, Var rel_bias,
              const AttentionSpec& spec) {
  AttentionResult res = attention_forward(
      t.value(q), t.value(k), t.value(v), head_scale.valid() ? &t.value(head_scale) : nullptr,
      rel_bias.valid() ? &t.value(rel_bias) : nullptr, spec);
  Tensor out = std::move(res.output);
  if (!t.recording()) return t.push(std::move(out), nullptr);

  return t.push(std::move(out), [q, k, v, head_scale, rel_bias, spec,
                                 context = std::move(res.context),
                                 probs = std::move(res.probs)](Tape& tp, Var self) {
    const Tensor& dy = tp.grad(self);
    const Tensor& qv = tp.value(q);
    const Tensor& kv = tp.value(k);
    const Tensor& vv = tp.value(v);
    const std::size_t lq = qv.rows();
    const std::size_t lk = kv.rows();
    const std::size_t d = qv.cols();
    const std::size_t heads = static_cast<std::size_t>(spec.n_heads);
    const std::size_t dh = d / heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor& dq = tp.grad(q);
    Tensor& dk = tp.grad(k);
    Tensor& dv = tp.grad(v);

    RowMat dctx(static_cast<Eigen::Index>(lq), static_cast<Eigen::Index>(dh));
    RowMat ds(static_cast<Eigen::Index>(lq), static_cast<Eigen::Index>(lk));
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dh;
      const double hs = head_scale.valid() ? tp.value(head_scale)[h] : 1.0;
      const auto dy_h = col_block(dy, c0, dh);
      if (head_scale.valid()) {
        tp.grad(head_scale)[h] += (dy_h.array() * col_block(context, c0, dh).array()).sum();
      }
      dctx = hs * dy_h;
      const MapC p(probs[h].data(), static_cast<Eigen::Index>(lq), static_cast<Eigen::Index>(lk));
      // dP = dctx V^T, then the softmax Jacobian row by row.
      ds.noalias() = dctx * col_block(vv, c0, dh).transpose();
      col_block(dv, c0, dh).noalias() += p.transpose() * dctx;
      for (Eigen::Index i = 0; i < ds.rows(); ++i) {
        const double s = ds.row(i).dot(p.row(i));
        ds.row(i) = (p.row(i).array() * (ds.row(i).array() - s)).matrix();
      }
      if (rel_bias.valid()) {
        Tensor& db = tp.grad(rel_bias);
        const std::size_t width = static_cast<std::size_t>(2 * spec.rel_clip + 1);
        double* row_db = db.data() + h * width;
        const long clip = spec.rel_clip;
        for (std::size_t i = 0; i < lq; ++i) {
          const RelWindow w = rel_window(i, lk, clip);
          const double* dsr = ds.data() + i * lk;
          double left = 0.0;
          for (std::size_t j = 0; j < w.lo; ++j) left += dsr[j];
          row_db[0] += left;
          double* centre = row_db + clip - static_cast<long>(i);
          for (std::size_t j = w.lo; j < w.hi; ++j) centre[j] += dsr[j];
          double right = 0.0;
          for (std::size_t j = w.hi; j < lk; ++j) right += dsr[j];
          row_db[2 * clip] += right;
        }
      }
      col_block(dq, c0, dh).noalias() += inv * (ds * col_block(kv, c0, dh));
      col_block(dk, c0, dh).noalias() += inv * (ds.transpose() * col_block(qv, c0, dh));
    }
  });
}

Var smoothed_cross_entropy(Tape& t, Var logits, std::span<const std::int32_t> targets,
                           double eps, std::int32_t pad_id) {
  const Tensor& lv = t.value(logits);
  require_matrix(lv, "cross_entropy logits");
  if (lv.rows() != targets.size()) {
    throw Error(ErrorCode::kShapeMismatch, "cross_entropy: logits rows vs targets");
  }
  const std::size_t n = lv.rows();
  const std::size_t vsize = lv.cols();
  std::size_t valid = 0;
  for (auto tok : targets) {
    if (tok != pad_id) ++valid;
    if (tok < 0 || static_cast<std::size_t>(tok) >= vsize) {
      throw Error(ErrorCode::kOutOfRange, "target id " + std::to_string(tok));
    }
  }
  if (valid == 0) throw Error(ErrorCode::kEmptyTarget, "no non-PAD target positions");

  const double uniform = eps / static_cast<double>(vsize);
  Tensor probs = Tensor::matrix(n, vsize);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] == pad_id) continue;
    const auto row = Eigen::Map<const Eigen::ArrayXd>(lv.row(r).data(), static_cast<Eigen::Index>(vsize));
    const double mx = row.maxCoeff();
    auto pr = Eigen::Map<Eigen::ArrayXd>(probs.row(r).data(), static_cast<Eigen::Index>(vsize));
    pr = (row - mx).exp();
    const double z = pr.sum();
    pr /= z;
    const double log_z = mx + std::log(z);
    // -sum_k q_k (l_k - log_z) with sum_k q_k = 1
    const double mean_logit = row.sum() / static_cast<double>(vsize);
    const double target_logit = row[targets[r]];
    total += log_z - (1.0 - eps) * target_logit - eps * mean_logit;
  }
  const double inv_valid = 1.0 / static_cast<double>(valid);
  std::vector<std::int32_t> tv(targets.begin(), targets.end());
  return t.push(Tensor::scalar(total * inv_valid),
                [logits, tv = std::move(tv), probs = std::move(probs), eps, uniform, inv_valid,
                 pad_id](Tape& tp, Var self) {
                  const double g = tp.grad(self)[0] * inv_valid;
                  Tensor& dl = tp.grad(logits);
                  const std::size_t vsize = dl.cols();
                  for (std::size_t r = 0; r < tv.size(); ++r) {
                    if (tv[r] == pad_id) continue;
                    auto d = dl.row(r);
                    const auto p = probs.row(r);
                    for (std::size_t c = 0; c < vsize; ++c) d[c] += g * (p[c] - uniform);
                    d[static_cast<std::size_t>(tv[r])] -= g * (1.0 - eps);
                  }
                });
}

}  // namespace ops

AttentionResult attention_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                                  const Tensor* head_scale, const Tensor* rel_bias,
                                  const ops::AttentionSpec& spec) {
  require_matrix(q, "attention q");
  require_matrix(k, "attention k");
  require_matrix(v, "attention v");
  const std::size_t lq = q.rows();
  const std::size_t lk = k.rows();
  const std::size_t d = q.cols();
  if (spec.n_heads <= 0 || d % static_cast<std::size_t>(spec.n_heads) != 0) {
    throw Error(ErrorCode::kShapeMismatch, "attention: heads do not divide width");
  }
  if (k.cols() != d || v.cols() != d || v.rows() != lk) {
    throw Error(ErrorCode::kShapeMismatch, "attention: q/k/v shapes " + shape_string(q.shape()) +
                                               " " + shape_string(k.shape()) + " " +
                                               shape_string(v.shape()));
  }
  if (!spec.key_valid.empty() && spec.key_valid.size() != lk) {
    throw Error(ErrorCode::kShapeMismatch, "attention: key mask length");
  }
  const std::size_t heads = static_cast<std::size_t>(spec.n_heads);
  const std::size_t dh = d / heads;
  const std::size_t width = static_cast<std::size_t>(2 * spec.rel_clip + 1);
  if (head_scale) require_cols(*head_scale, heads, "attention head scale");
  if (rel_bias) require_cols(*rel_bias, heads * width, "attention relative bias");
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));

  AttentionResult res;
  res.output = Tensor::matrix(lq, d);
  res.context = Tensor::matrix(lq, d);
  res.probs.reserve(heads);
  const long clip = spec.rel_clip;
  std::vector<std::size_t> masked;
  for (std::size_t j = 0; j < spec.key_valid.size(); ++j) {
    if (!spec.key_valid[j]) masked.push_back(j);
  }

  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * dh;
    Tensor p = Tensor::matrix(lq, lk);
    MapM s = as_mat(p);
    s.noalias() = inv * (col_block(q, c0, dh) * col_block(k, c0, dh).transpose());
    const double* bias = rel_bias ? rel_bias->data() + h * width : nullptr;
    for (std::size_t i = 0; i < lq; ++i) {
      double* row = p.row(i).data();
      if (bias) {
        const RelWindow w = rel_window(i, lk, clip);
        for (std::size_t j = 0; j < w.lo; ++j) row[j] += bias[0];
        const double* centre = bias + clip - static_cast<long>(i);
        for (std::size_t j = w.lo; j < w.hi; ++j) row[j] += centre[j];
        for (std::size_t j = w.hi; j < lk; ++j) row[j] += bias[2 * clip];
      }
      if (spec.mask == ops::MaskKind::kCausal) {
        for (std::size_t j = i + 1; j < lk; ++j) row[j] = kNegInf;
      }
      for (std::size_t j : masked) row[j] = kNegInf;
      auto r = Eigen::Map<Eigen::ArrayXd>(row, static_cast<Eigen::Index>(lk));
      const double mx = r.maxCoeff();
      if (mx == kNegInf) {
        r.setZero();
        continue;
      }
      r = (r - mx).exp();
      r /= r.sum();
    }
    col_block(res.context, c0, dh).noalias() = s * col_block(v, c0, dh);
    const double hs = head_scale ? (*head_scale)[h] : 1.0;
    col_block(res.output, c0, dh) = hs * col_block(res.context, c0, dh);
    res.probs.push_back(std::move(p));
  }
  return res;
}

}  // namespace jointseq
