#include "mlnmt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>

namespace mlnmt {

namespace {

std::string shape_of(const std::vector<std::size_t>& dims) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) out << " x ";
    out << dims[i];
  }
  out << ']';
  return out.str();
}

[[noreturn]] void shape_error(const char* op, const std::vector<std::size_t>& a,
                              const std::vector<std::size_t>& b) {
  throw Error(std::string(op) + ": shape mismatch " + shape_of(a) + " vs " + shape_of(b));
}

template <typename T>
using Mat = typename Tensor<T>::Matrix;

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

template <typename T>
Tensor<T>::Tensor(std::vector<std::size_t> dims, T fill) : dims_(std::move(dims)) {
  if (dims_.empty() || dims_.size() > 2) throw Error("Tensor: rank must be 1 or 2");
  std::size_t n = 1;
  for (auto d : dims_) n *= d;
  data_.assign(n, fill);
}

template <typename T>
Tensor<T> Tensor<T>::from_rows(std::initializer_list<std::initializer_list<T>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  Tensor out = matrix(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw Error("Tensor::from_rows: ragged rows");
    for (T v : row) out.data_[i++] = v;
  }
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::from_values(std::vector<std::size_t> dims, std::vector<T> values) {
  Tensor out(std::move(dims));
  if (values.size() != out.size()) {
    throw Error("Tensor::from_values: " + std::to_string(values.size()) +
                " values for shape " + out.shape_string());
  }
  out.data_ = std::move(values);
  return out;
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
std::string Tensor<T>::shape_string() const {
  return shape_of(dims_);
}

// ---------------------------------------------------------------------------
// Var / Tape

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
Tensor<T> Var<T>::grad() const {
  return tape_->grad(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad && grad_enabled_;
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs,
                       BackwardFn backward) {
  bool needs = false;
  if (grad_enabled_) {
    for (const auto& in : inputs) {
      if (&in.tape() != this) throw Error("Tape::record: input from another tape");
      needs = needs || nodes_[in.id()].requires_grad;
    }
  }
  Node node;
  node.value = std::move(value);
  node.requires_grad = needs;
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Tensor<T> Tape<T>::grad(std::size_t id) const {
  const Node& node = nodes_.at(id);
  if (node.has_grad) return node.grad;
  return Tensor<T>(node.value.dims(), T(0));
}

template <typename T>
Tensor<T>* Tape<T>::accumulator(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.requires_grad) return nullptr;
  if (!node.has_grad) {
    node.grad = Tensor<T>(node.value.dims(), T(0));
    node.has_grad = true;
  }
  return &node.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> root) {
  if (&root.tape() != this) throw Error("Tape::backward: root from another tape");
  if (backward_done_) throw Error("Tape::backward: already run on this tape");
  backward_done_ = true;
  if (nodes_[root.id()].value.size() != 1) {
    throw Error("Tape::backward: root must be a scalar, got " +
                nodes_[root.id()].value.shape_string());
  }
  Tensor<T>* seed = accumulator(root.id());
  if (!seed) return;
  (*seed)[0] = T(1);
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.requires_grad && node.has_grad && node.backward) node.backward(*this, i);
  }
}

// ---------------------------------------------------------------------------
// Ops

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.cols() != bv.rows()) shape_error("matmul", av.dims(), bv.dims());
  Tensor<T> out = Tensor<T>::matrix(av.rows(), bv.cols());
  out.mat().noalias() = av.mat() * bv.mat();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto& g = t.incoming(self);
    if (auto* ga = t.accumulator(ia)) ga->mat().noalias() += g.mat() * t.value(ib).mat().transpose();
    if (auto* gb = t.accumulator(ib)) gb->mat().noalias() += t.value(ia).mat().transpose() * g.mat();
  });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.cols() != bv.cols()) shape_error("matmul_nt", av.dims(), bv.dims());
  Tensor<T> out = Tensor<T>::matrix(av.rows(), bv.rows());
  out.mat().noalias() = av.mat() * bv.mat().transpose();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto& g = t.incoming(self);
    if (auto* ga = t.accumulator(ia)) ga->mat().noalias() += g.mat() * t.value(ib).mat();
    if (auto* gb = t.accumulator(ib)) gb->mat().noalias() += g.mat().transpose() * t.value(ia).mat();
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (!av.same_shape(bv)) shape_error("add", av.dims(), bv.dims());
  Tensor<T> out = av;
  out.mat() += bv.mat();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto& g = t.incoming(self);
    if (auto* ga = t.accumulator(ia)) ga->mat() += g.mat();
    if (auto* gb = t.accumulator(ib)) gb->mat() += g.mat();
  });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
  const auto& av = a.value();
  const auto& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) shape_error("add_row", av.dims(), rv.dims());
  Tensor<T> out = av;
  out.mat().rowwise() += rv.mat().row(0);
  const std::size_t ia = a.id(), ir = row.id();
  return a.tape().record(std::move(out), {a, row}, [ia, ir](Tape<T>& t, std::size_t self) {
    const auto& g = t.incoming(self);
    if (auto* ga = t.accumulator(ia)) ga->mat() += g.mat();
    if (auto* gr = t.accumulator(ir)) gr->mat().row(0) += g.mat().colwise().sum();
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (!av.same_shape(bv)) shape_error("mul", av.dims(), bv.dims());
  Tensor<T> out = av;
  out.mat().array() *= bv.mat().array();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto& g = t.incoming(self);
    if (auto* ga = t.accumulator(ia)) ga->mat().array() += g.mat().array() * t.value(ib).mat().array();
    if (auto* gb = t.accumulator(ib)) gb->mat().array() += g.mat().array() * t.value(ia).mat().array();
  });
}

template <typename T>
Var<T> scale(Var<T> a, double factor) {
  Tensor<T> out = a.value();
  const T f = static_cast<T>(factor);
  out.mat() *= f;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, f](Tape<T>& t, std::size_t self) {
    if (auto* ga = t.accumulator(ia)) ga->mat() += f * t.incoming(self).mat();
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape<T>& t, std::size_t self) {
    auto* ga = t.accumulator(ia);
    if (!ga) return;
    const auto& x = t.value(ia);
    const auto& g = t.incoming(self);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > T(0)) (*ga)[i] += g[i];
    }
  });
}

template <typename T>
Var<T> softmax_rows(Var<T> a) {
  Tensor<T> out = a.value();
  const std::size_t cols = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    T mx = -std::numeric_limits<T>::infinity();
    for (T v : row) mx = std::max(mx, v);
    if (!std::isfinite(mx)) {
      // Fully masked row: no mass anywhere.
      std::fill(row.begin(), row.end(), T(0));
      continue;
    }
    T total = 0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      total += v;
    }
    for (auto& v : row) v /= total;
  }
  const std::size_t ia = a.id();
  const std::size_t self_cols = cols;
  return a.tape().record(std::move(out), {a}, [ia, self_cols](Tape<T>& t, std::size_t self) {
    auto* ga = t.accumulator(ia);
    if (!ga) return;
    const auto& y = t.value(self);
    const auto& g = t.incoming(self);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      T dot = 0;
      for (std::size_t c = 0; c < self_cols; ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < self_cols; ++c) (*ga)(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> a, Var<T> gain, Var<T> bias, double eps) {
  const auto& x = a.value();
  const std::size_t n = x.cols();
  if (gain.value().size() != n) shape_error("layer_norm(gain)", x.dims(), gain.value().dims());
  if (bias.value().size() != n) shape_error("layer_norm(bias)", x.dims(), bias.value().dims());
  auto xhat = std::make_shared<Tensor<T>>(x.dims());
  auto inv_std = std::make_shared<std::vector<T>>(x.rows());
  Tensor<T> out(x.dims());
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    T mean = 0;
    for (std::size_t c = 0; c < n; ++c) mean += x(r, c);
    mean /= static_cast<T>(n);
    T var = 0;
    for (std::size_t c = 0; c < n; ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const T h = (x(r, c) - mean) * is;
      (*xhat)(r, c) = h;
      out(r, c) = gv[c] * h + bv[c];
    }
  }
  const std::size_t ia = a.id(), ig = gain.id(), ib = bias.id();
  return a.tape().record(std::move(out), {a, gain, bias},
                         [ia, ig, ib, xhat, inv_std, n](Tape<T>& t, std::size_t self) {
    const auto& g = t.incoming(self);
    const auto& gv = t.value(ig);
    auto* ga = t.accumulator(ia);
    auto* gg = t.accumulator(ig);
    auto* gb = t.accumulator(ib);
    const auto& h = *xhat;
    std::vector<T> dh(n);
    for (std::size_t r = 0; r < h.rows(); ++r) {
      T mean_dh = 0, mean_dh_h = 0;
      for (std::size_t c = 0; c < n; ++c) {
        if (gg) (*gg)[c] += g(r, c) * h(r, c);
        if (gb) (*gb)[c] += g(r, c);
        dh[c] = g(r, c) * gv[c];
        mean_dh += dh[c];
        mean_dh_h += dh[c] * h(r, c);
      }
      if (!ga) continue;
      mean_dh /= static_cast<T>(n);
      mean_dh_h /= static_cast<T>(n);
      const T is = (*inv_std)[r];
      for (std::size_t c = 0; c < n; ++c) {
        (*ga)(r, c) += is * (dh[c] - mean_dh - h(r, c) * mean_dh_h);
      }
    }
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T total = 0;
  for (T v : a.value().values()) total += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor<T>::scalar(total), {a}, [ia](Tape<T>& t, std::size_t self) {
    if (auto* ga = t.accumulator(ia)) ga->mat().array() += t.incoming(self)[0];
  });
}

template <typename T>
Var<T> gather_rows(Var<T> table, std::span<const int> ids) {
  const auto& tv = table.value();
  const std::size_t d = tv.cols();
  Tensor<T> out = Tensor<T>::matrix(ids.size(), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= tv.rows()) {
      throw Error("gather_rows: id " + std::to_string(id) + " out of range for table " +
                  tv.shape_string());
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(id) * d, d, out.data() + i * d);
  }
  auto kept = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
  const std::size_t it = table.id();
  return table.tape().record(std::move(out), {table}, [it, kept, d](Tape<T>& t, std::size_t self) {
    auto* gt = t.accumulator(it);
    if (!gt) return;
    const auto& g = t.incoming(self);
    for (std::size_t i = 0; i < kept->size(); ++i) {
      T* dst = gt->data() + static_cast<std::size_t>((*kept)[i]) * d;
      const T* src = g.data() + i * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  });
}

template <typename T>
Var<T> shift_rows(Var<T> x, const std::vector<bool>& selected, std::span<const T> mean) {
  const auto& xv = x.value();
  if (selected.size() != xv.rows()) {
    throw Error("shift_rows: " + std::to_string(selected.size()) + " flags for " +
                xv.shape_string());
  }
  if (mean.size() != xv.cols()) shape_error("shift_rows", xv.dims(), {mean.size()});
  Tensor<T> out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    if (!selected[r]) continue;
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = row[c] + (row[c] - mean[c]);
  }
  auto flags = std::make_shared<std::vector<bool>>(selected);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, flags](Tape<T>& t, std::size_t self) {
    auto* gx = t.accumulator(ix);
    if (!gx) return;
    const auto& g = t.incoming(self);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const T f = (*flags)[r] ? T(2) : T(1);
      auto dst = gx->row(r);
      auto src = g.row(r);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += f * src[c];
    }
  });
}

template <typename T>
Var<T> dropout(Var<T> a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw Error("dropout: probability must be < 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(a.value().size());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < p ? T(0) : keep_scale;
    out[i] *= (*mask)[i];
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, mask](Tape<T>& t, std::size_t self) {
    auto* ga = t.accumulator(ia);
    if (!ga) return;
    const auto& g = t.incoming(self);
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (*mask)[i];
  });
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const AttentionLayout& layout) {
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  const std::size_t B = layout.batch, Lq = layout.query_len, Lk = layout.key_len,
                    H = layout.heads;
  const std::size_t d = qv.cols();
  if (H == 0 || d % H != 0) throw Error("attention: width " + std::to_string(d) +
                                        " not divisible by " + std::to_string(H) + " heads");
  if (qv.rows() != B * Lq) shape_error("attention(query)", qv.dims(), {B * Lq, d});
  if (kv.rows() != B * Lk || kv.cols() != d) shape_error("attention(key)", kv.dims(), {B * Lk, d});
  if (!vv.same_shape(kv)) shape_error("attention(value)", vv.dims(), kv.dims());
  if (!layout.key_lengths.empty() && layout.key_lengths.size() != B) {
    throw Error("attention: key_lengths has " + std::to_string(layout.key_lengths.size()) +
                " entries for batch " + std::to_string(B));
  }
  const std::size_t dh = d / H;
  const T s = static_cast<T>(layout.scale);
  auto probs = std::make_shared<std::vector<Mat<T>>>(B * H);
  Tensor<T> out = Tensor<T>::matrix(B * Lq, d);
  auto om = out.mat();
  const auto qm = qv.mat();
  const auto km = kv.mat();
  const auto vm = vv.mat();
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t klen = layout.key_lengths.empty() ? Lk : std::min(Lk, layout.key_lengths[b]);
    for (std::size_t h = 0; h < H; ++h) {
      const auto Qb = qm.block(b * Lq, h * dh, Lq, dh);
      const auto Kb = km.block(b * Lk, h * dh, Lk, dh);
      const auto Vb = vm.block(b * Lk, h * dh, Lk, dh);
      Mat<T> P = (Qb * Kb.transpose()) * s;
      for (std::size_t i = 0; i < Lq; ++i) {
        const std::size_t limit = layout.causal ? std::min(klen, i + 1) : klen;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < limit; ++j) mx = std::max(mx, P(i, j));
        T total = 0;
        for (std::size_t j = 0; j < Lk; ++j) {
          if (j < limit) {
            P(i, j) = std::exp(P(i, j) - mx);
            total += P(i, j);
          } else {
            P(i, j) = 0;
          }
        }
        if (total > T(0)) P.row(i) /= total;
      }
      om.block(b * Lq, h * dh, Lq, dh).noalias() = P * Vb;
      (*probs)[b * H + h] = std::move(P);
    }
  }
  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape().record(std::move(out), {q, k, v},
                         [iq, ik, iv, probs, B, Lq, Lk, H, dh, s](Tape<T>& t, std::size_t self) {
    const auto gm = t.incoming(self).mat();
    const auto qm = t.value(iq).mat();
    const auto km = t.value(ik).mat();
    const auto vm = t.value(iv).mat();
    auto* gq = t.accumulator(iq);
    auto* gk = t.accumulator(ik);
    auto* gv = t.accumulator(iv);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < H; ++h) {
        const Mat<T>& P = (*probs)[b * H + h];
        const auto dO = gm.block(b * Lq, h * dh, Lq, dh);
        if (gv) gv->mat().block(b * Lk, h * dh, Lk, dh).noalias() += P.transpose() * dO;
        if (!gq && !gk) continue;
        const auto Vb = vm.block(b * Lk, h * dh, Lk, dh);
        Mat<T> dS = dO * Vb.transpose();
        for (std::size_t i = 0; i < Lq; ++i) {
          const T dot = (dS.row(i).array() * P.row(i).array()).sum();
          dS.row(i) = (P.row(i).array() * (dS.row(i).array() - dot)).matrix();
        }
        if (gq) {
          gq->mat().block(b * Lq, h * dh, Lq, dh).noalias() +=
              (dS * km.block(b * Lk, h * dh, Lk, dh)) * s;
        }
        if (gk) {
          gk->mat().block(b * Lk, h * dh, Lk, dh).noalias() +=
              (dS.transpose() * qm.block(b * Lq, h * dh, Lq, dh)) * s;
        }
      }
    }
  });
}

template <typename T>
std::vector<double> log_softmax_row(std::span<const T> row) {
  double mx = -std::numeric_limits<double>::infinity();
  for (T v : row) mx = std::max(mx, static_cast<double>(v));
  double total = 0;
  for (T v : row) total += std::exp(static_cast<double>(v) - mx);
  const double lse = mx + std::log(total);
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = static_cast<double>(row[i]) - lse;
  return out;
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> targets, int ignore_id,
                     double smoothing, LossStats* stats) {
  const auto& lv = logits.value();
  const std::size_t N = lv.rows(), V = lv.cols();
  if (targets.size() != N) shape_error("cross_entropy", lv.dims(), {targets.size()});
  if (smoothing < 0.0 || smoothing >= 1.0) throw Error("cross_entropy: smoothing must be in [0,1)");
  std::size_t count = 0;
  for (int y : targets) {
    if (y == ignore_id) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= V) {
      throw Error("cross_entropy: target " + std::to_string(y) + " out of range " +
                  std::to_string(V));
    }
    ++count;
  }
  if (count == 0) throw Error("cross_entropy: every target position is padding");
  auto dlogits = std::make_shared<Tensor<T>>(lv.dims());
  double loss = 0, nll = 0;
  const double uniform = smoothing / static_cast<double>(V);
  const double inv_count = 1.0 / static_cast<double>(count);
  for (std::size_t r = 0; r < N; ++r) {
    const int y = targets[r];
    if (y == ignore_id) continue;
    const auto lp = log_softmax_row<T>(lv.row(r));
    double row_loss = -(1.0 - smoothing) * lp[static_cast<std::size_t>(y)];
    if (smoothing > 0.0) {
      double all = 0;
      for (double x : lp) all += x;
      row_loss -= uniform * all;
    }
    loss += row_loss;
    nll -= lp[static_cast<std::size_t>(y)];
    auto grow = dlogits->row(r);
    for (std::size_t c = 0; c < V; ++c) {
      double target_mass = uniform + (static_cast<int>(c) == y ? 1.0 - smoothing : 0.0);
      grow[c] = static_cast<T>((std::exp(lp[c]) - target_mass) * inv_count);
    }
  }
  if (stats) {
    stats->nll_sum = nll;
    stats->count = count;
  }
  const std::size_t il = logits.id();
  return logits.tape().record(Tensor<T>::scalar(static_cast<T>(loss * inv_count)), {logits},
                              [il, dlogits](Tape<T>& t, std::size_t self) {
    if (auto* gl = t.accumulator(il)) gl->mat() += t.incoming(self)[0] * dlogits->mat();
  });
}

template <typename T>
GradCheckResult grad_check(const ScalarFunction<T>& f, std::vector<Tensor<T>>& params,
                           double eps, std::size_t max_coords, std::uint64_t seed) {
  if (eps <= 0.0) throw Error("grad_check: eps must be positive");
  auto evaluate = [&](bool with_grad, std::vector<Tensor<T>>* grads) {
    Tape<T> tape(with_grad);
    std::vector<Var<T>> leaves;
    leaves.reserve(params.size());
    for (const auto& p : params) leaves.push_back(tape.leaf(p, true));
    Var<T> out = f(tape, leaves);
    if (out.value().size() != 1) throw Error("grad_check: function must return a scalar");
    const double value = static_cast<double>(out.value()[0]);
    if (!std::isfinite(value)) throw Error("grad_check: function value is not finite");
    if (grads) {
      tape.backward(out);
      grads->clear();
      for (const auto& leaf : leaves) grads->push_back(leaf.grad());
    }
    return value;
  };

  std::vector<Tensor<T>> analytic;
  evaluate(true, &analytic);

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) coords.emplace_back(p, i);
  }
  if (coords.size() > max_coords) {
    Rng rng(seed, 0x67726164ULL);
    for (std::size_t i = 0; i < max_coords; ++i) {
      const std::size_t j = i + rng.below(coords.size() - i);
      std::swap(coords[i], coords[j]);
    }
    coords.resize(max_coords);
  }

  GradCheckResult result;
  for (const auto& [p, i] : coords) {
    const T original = params[p][i];
    params[p][i] = static_cast<T>(static_cast<double>(original) + eps);
    const double up = evaluate(false, nullptr);
    params[p][i] = static_cast<T>(static_cast<double>(original) - eps);
    const double down = evaluate(false, nullptr);
    params[p][i] = original;
    const double numeric = (up - down) / (2.0 * eps);
    const double exact = static_cast<double>(analytic[p][i]);
    const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
    const double rel = std::abs(exact - numeric) / denom;
    if (rel > result.max_rel_error || result.coordinates == 0) {
      result.max_rel_error = rel;
      result.worst_tensor = p;
      result.worst_index = i;
      result.worst_analytic = exact;
      result.worst_numeric = numeric;
    }
    ++result.coordinates;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Instantiations

#define MLNMT_INSTANTIATE(T)                                                                \
  template class Tensor<T>;                                                                 \
  template class Var<T>;                                                                    \
  template class Tape<T>;                                                                   \
  template Var<T> matmul(Var<T>, Var<T>);                                                   \
  template Var<T> matmul_nt(Var<T>, Var<T>);                                                \
  template Var<T> add(Var<T>, Var<T>);                                                      \
  template Var<T> add_row(Var<T>, Var<T>);                                                  \
  template Var<T> mul(Var<T>, Var<T>);                                                      \
  template Var<T> scale(Var<T>, double);                                                    \
  template Var<T> relu(Var<T>);                                                             \
  template Var<T> softmax_rows(Var<T>);                                                     \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, double);                               \
  template Var<T> sum(Var<T>);                                                              \
  template Var<T> gather_rows(Var<T>, std::span<const int>);                                \
  template Var<T> shift_rows(Var<T>, const std::vector<bool>&, std::span<const T>);         \
  template Var<T> dropout(Var<T>, double, Rng&);                                            \
  template Var<T> attention(Var<T>, Var<T>, Var<T>, const AttentionLayout&);                \
  template Var<T> cross_entropy(Var<T>, std::span<const int>, int, double, LossStats*);     \
  template std::vector<double> log_softmax_row(std::span<const T>);                         \
  template GradCheckResult grad_check(const ScalarFunction<T>&, std::vector<Tensor<T>>&,    \
                                      double, std::size_t, std::uint64_t);

MLNMT_INSTANTIATE(float)
MLNMT_INSTANTIATE(double)

#undef MLNMT_INSTANTIATE

}  // namespace mlnmt
