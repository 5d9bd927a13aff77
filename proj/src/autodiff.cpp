#include "fct/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fct {

namespace {
thread_local FlopCounter* g_flops = nullptr;
}

FlopScope::FlopScope(FlopCounter& counter) : previous_(g_flops) { g_flops = &counter; }
FlopScope::~FlopScope() { g_flops = previous_; }
FlopCounter* active_flop_counter() { return g_flops; }

void count_flops(std::int64_t FlopCounter::*category, std::int64_t flops) {
  if (g_flops) g_flops->*category += flops;
}

// --- tape -------------------------------------------------------------------

std::size_t Tape::new_node(const Tensor& value) {
  shapes_.push_back(value.shape());
  dtypes_.push_back(value.dtype());
  grads_.emplace_back();
  has_grad_.push_back(false);
  return grads_.size() - 1;
}

Var Tape::leaf(Tensor value) {
  if (value.is_meta()) throw ValueError("meta tensors cannot be tape leaves");
  Var v(std::move(value));
  v.tape_ = this;
  v.node_ = new_node(v.value_);
  return v;
}

Var Tape::record(const char* op, Tensor value, const std::vector<Var>& inputs, Backward backward) {
  if (!value.all_finite()) throw NumericalError(std::string(op) + ": non-finite value in output " + shape_str(value.shape()));
  Tape* tape = nullptr;
  for (const auto& in : inputs) {
    if (!in.tape_) continue;
    if (tape && tape != in.tape_) throw ValueError(std::string(op) + ": inputs recorded on different tapes");
    tape = in.tape_;
  }
  Var out(std::move(value));
  if (!tape) return out;
  if (tape->consumed_) throw ValueError(std::string(op) + ": tape already ran backward");
  Op rec;
  rec.inputs.reserve(inputs.size());
  rec.needs.reserve(inputs.size());
  for (const auto& in : inputs) {
    rec.inputs.push_back(in.tape_ ? in.node_ : 0);
    rec.needs.push_back(in.tape_ != nullptr);
  }
  out.tape_ = tape;
  out.node_ = tape->new_node(out.value_);
  rec.output = out.node_;
  rec.backward = std::move(backward);
  tape->ops_.push_back(std::move(rec));
  return out;
}

void Tape::accumulate(std::size_t node, Tensor g) {
  if (g.shape() != shapes_[node])
    throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match node shape " + shape_str(shapes_[node]));
  if (g.dtype() != dtypes_[node]) g = g.to(dtypes_[node]);
  if (!has_grad_[node]) {
    grads_[node] = std::move(g);
    has_grad_[node] = true;
    return;
  }
  dispatch(g.dtype(), [&]<typename T>() {
    auto dst = grads_[node].mutable_data<T>();
    auto src = g.data<T>();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  });
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this) throw ValueError("backward: loss is not recorded on this tape (detached?)");
  if (loss.value().numel() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (consumed_) throw ValueError("backward: tape already consumed");
  consumed_ = true;
  accumulate(loss.node_, Tensor::full(loss.shape(), 1.0, loss.dtype()));
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    if (!has_grad_[it->output]) continue;
    if (std::none_of(it->needs.begin(), it->needs.end(), [](bool b) { return b; })) continue;
    auto in_grads = it->backward(grads_[it->output], it->needs);
    for (std::size_t i = 0; i < it->inputs.size(); ++i)
      if (it->needs[i]) accumulate(it->inputs[i], std::move(in_grads[i]));
    // intermediate grads are no longer needed; leaves keep theirs
    grads_[it->output] = Tensor();
    has_grad_[it->output] = false;
  }
  ops_.clear();
}

Tensor Tape::grad(const Var& v) const {
  if (v.tape_ != this) throw ValueError("grad: variable is not on this tape");
  if (has_grad_[v.node_]) return grads_[v.node_];
  return Tensor::zeros(shapes_[v.node_], dtypes_[v.node_]);
}

bool Tape::has_grad(const Var& v) const { return v.tape_ == this && has_grad_[v.node_]; }

// --- helpers ------------------------------------------------------------

namespace {

bool any_meta(std::initializer_list<const Var*> vars) {
  return std::any_of(vars.begin(), vars.end(), [](const Var* v) { return v->is_meta(); });
}

void require_same_dtype(const char* op, const Var& a, const Var& b) {
  if (a.dtype() != b.dtype())
    throw ValueError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " + dtype_name(b.dtype()));
}

enum class Broadcast { same, scalar, channel };

Broadcast classify(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::same;
  if (shape_numel(b) == 1 && b.size() <= 1) return Broadcast::scalar;
  if (b.size() == 1 && !a.empty() && a.back() == b[0]) return Broadcast::channel;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
}

// Sums a full-shape gradient down to the shape of a broadcast operand.
template <typename T>
Tensor reduce_broadcast(std::span<const T> g, Broadcast mode, const Shape& b_shape) {
  if (mode == Broadcast::same) return Tensor::from(b_shape, std::vector<T>(g.begin(), g.end()));
  if (mode == Broadcast::scalar) {
    T s = 0;
    for (T v : g) s += v;
    return Tensor::from(b_shape, std::vector<T>{s});
  }
  const auto c = static_cast<std::size_t>(b_shape[0]);
  std::vector<T> out(c, T(0));
  for (std::size_t i = 0; i < g.size(); ++i) out[i % c] += g[i];
  return Tensor::from(b_shape, std::move(out));
}

template <typename T>
inline T bval(std::span<const T> b, Broadcast mode, std::size_t i) {
  switch (mode) {
    case Broadcast::same: return b[i];
    case Broadcast::scalar: return b[0];
    default: return b[i % b.size()];
  }
}

enum class Arith { add, sub, mul, div };

Var elementwise(const char* op, const Var& a, const Var& b, Arith kind) {
  require_same_dtype(op, a, b);
  const Broadcast mode = classify(op, a.shape(), b.shape());
  if (any_meta({&a, &b})) return Var(Tensor::meta(a.shape(), a.dtype()));
  Tensor out = dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.value().data<T>();
    auto y = b.value().data<T>();
    if (kind == Arith::div)
      for (T v : y)
        if (v == T(0)) throw ValueError("div: divisor contains zero");
    std::vector<T> r(x.size());
    // channel broadcast is the hot path (bias adds), keep it branch-free
    if (mode == Broadcast::channel) {
      const std::size_t c = y.size();
      for (std::size_t base = 0; base < x.size(); base += c)
        for (std::size_t j = 0; j < c; ++j) {
          const T u = x[base + j], w = y[j];
          r[base + j] = kind == Arith::add ? u + w : kind == Arith::sub ? u - w : kind == Arith::mul ? u * w : u / w;
        }
    } else {
      for (std::size_t i = 0; i < x.size(); ++i) {
        const T u = x[i], w = bval(y, mode, i);
        r[i] = kind == Arith::add ? u + w : kind == Arith::sub ? u - w : kind == Arith::mul ? u * w : u / w;
      }
    }
    return Tensor::from(a.shape(), std::move(r));
  });
  Tensor av = a.value(), bv = b.value();
  return Tape::record(op, std::move(out), {a, b},
                      [av, bv, mode, kind](const Tensor& g, const std::vector<bool>& needs) {
                        return dispatch(g.dtype(), [&]<typename T>() {
                          std::vector<Tensor> res(2);
                          auto gd = g.data<T>();
                          auto x = av.data<T>();
                          auto y = bv.data<T>();
                          if (needs[0]) {
                            std::vector<T> ga(gd.size());
                            for (std::size_t i = 0; i < gd.size(); ++i) {
                              const T w = bval(y, mode, i);
                              ga[i] = kind == Arith::mul ? gd[i] * w : kind == Arith::div ? gd[i] / w : gd[i];
                            }
                            res[0] = Tensor::from(av.shape(), std::move(ga));
                          }
                          if (needs[1]) {
                            std::vector<T> gb(gd.size());
                            for (std::size_t i = 0; i < gd.size(); ++i) {
                              const T w = bval(y, mode, i);
                              switch (kind) {
                                case Arith::add: gb[i] = gd[i]; break;
                                case Arith::sub: gb[i] = -gd[i]; break;
                                case Arith::mul: gb[i] = gd[i] * x[i]; break;
                                case Arith::div: gb[i] = -gd[i] * x[i] / (w * w); break;
                              }
                            }
                            res[1] = reduce_broadcast<T>(gb, mode, bv.shape());
                          }
                          return res;
                        });
                      });
}

}  // namespace

Var add(const Var& a, const Var& b) { return elementwise("add", a, b, Arith::add); }
Var sub(const Var& a, const Var& b) { return elementwise("sub", a, b, Arith::sub); }
Var mul(const Var& a, const Var& b) { return elementwise("mul", a, b, Arith::mul); }
Var div(const Var& a, const Var& b) { return elementwise("div", a, b, Arith::div); }

Var add_scalar(const Var& a, double s) {
  if (a.is_meta()) return Var(Tensor::meta(a.shape(), a.dtype()));
  Tensor out = dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.value().data<T>();
    std::vector<T> r(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] + static_cast<T>(s);
    return Tensor::from(a.shape(), std::move(r));
  });
  return Tape::record("add_scalar", std::move(out), {a},
                      [](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{g}; });
}

Var mul_scalar(const Var& a, double s) {
  if (a.is_meta()) return Var(Tensor::meta(a.shape(), a.dtype()));
  auto scale = [s](const Tensor& t) {
    return dispatch(t.dtype(), [&]<typename T>() {
      auto x = t.data<T>();
      std::vector<T> r(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] * static_cast<T>(s);
      return Tensor::from(t.shape(), std::move(r));
    });
  };
  return Tape::record("mul_scalar", scale(a.value()), {a},
                      [scale](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{scale(g)}; });
}

// --- matmul -----------------------------------------------------------------

namespace {

struct MatDims {
  std::int64_t batch, m, k, p;
};

// C[b] (+)= op(A[b]) * op(B[b]) with optional transposes, row-major.
template <typename T>
void batched_gemm(std::span<const T> a, std::span<const T> b, std::span<T> c, std::int64_t batch, std::int64_t m,
                  std::int64_t k, std::int64_t p, bool trans_a, bool trans_b) {
  for (std::int64_t bi = 0; bi < batch; ++bi) {
    const T* A = a.data() + bi * m * k;
    const T* B = b.data() + bi * k * p;
    T* C = c.data() + bi * m * p;
    for (std::int64_t i = 0; i < m; ++i) {
      T* crow = C + i * p;
      for (std::int64_t kk = 0; kk < k; ++kk) {
        const T av = trans_a ? A[kk * m + i] : A[i * k + kk];
        if (!trans_b) {
          const T* brow = B + kk * p;
          for (std::int64_t j = 0; j < p; ++j) crow[j] += av * brow[j];
        } else {
          for (std::int64_t j = 0; j < p; ++j) crow[j] += av * B[j * k + kk];
        }
      }
    }
  }
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  require_same_dtype("matmul", a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() != sa.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin()) ||
      sa[sa.size() - 1] != sb[sb.size() - 2])
    throw ShapeError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  const std::int64_t m = sa[sa.size() - 2], k = sa.back(), p = sb.back();
  const std::int64_t batch = shape_numel(Shape(sa.begin(), sa.end() - 2));
  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(p);
  count_flops(&FlopCounter::matmul, 2 * batch * m * k * p);
  if (any_meta({&a, &b})) return Var(Tensor::meta(out_shape, a.dtype()));
  Tensor out = dispatch(a.dtype(), [&]<typename T>() {
    std::vector<T> c(static_cast<std::size_t>(batch * m * p), T(0));
    batched_gemm<T>(a.value().data<T>(), b.value().data<T>(), c, batch, m, k, p, false, false);
    return Tensor::from(out_shape, std::move(c));
  });
  Tensor av = a.value(), bv = b.value();
  return Tape::record("matmul", std::move(out), {a, b},
                      [av, bv, batch, m, k, p](const Tensor& g, const std::vector<bool>& needs) {
                        return dispatch(g.dtype(), [&]<typename T>() {
                          std::vector<Tensor> res(2);
                          if (needs[0]) {
                            // dA = dC * B^T : (m x p)(p x k)
                            std::vector<T> ga(static_cast<std::size_t>(batch * m * k), T(0));
                            for (std::int64_t bi = 0; bi < batch; ++bi) {
                              const T* G = g.data<T>().data() + bi * m * p;
                              const T* B = bv.data<T>().data() + bi * k * p;
                              T* GA = ga.data() + bi * m * k;
                              for (std::int64_t i = 0; i < m; ++i)
                                for (std::int64_t kk = 0; kk < k; ++kk) {
                                  T s = 0;
                                  for (std::int64_t j = 0; j < p; ++j) s += G[i * p + j] * B[kk * p + j];
                                  GA[i * k + kk] = s;
                                }
                            }
                            res[0] = Tensor::from(av.shape(), std::move(ga));
                          }
                          if (needs[1]) {
                            // dB = A^T * dC : (k x m)(m x p)
                            std::vector<T> gb(static_cast<std::size_t>(batch * k * p), T(0));
                            batched_gemm<T>(av.data<T>(), g.data<T>(), gb, batch, k, m, p, true, false);
                            res[1] = Tensor::from(bv.shape(), std::move(gb));
                          }
                          return res;
                        });
                      });
}

// --- reductions ---------------------------------------------------------

namespace {

std::vector<int> normalize_axes(const char* op, std::vector<int> axes, std::size_t rank) {
  for (auto& ax : axes) {
    const int r = static_cast<int>(rank);
    if (ax < -r || ax >= r) throw ShapeError(std::string(op) + ": axis " + std::to_string(ax) + " out of range for rank " + std::to_string(rank));
    if (ax < 0) ax += r;
  }
  std::vector<int> sorted = axes;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ShapeError(std::string(op) + ": repeated axis");
  return sorted;
}

// For each input flat index, the flat index of the output element it reduces into.
std::vector<std::int64_t> reduction_map(const Shape& in, const std::vector<bool>& reduced) {
  const std::size_t rank = in.size();
  Shape out_strides(rank, 0);
  std::int64_t stride = 1;
  for (std::size_t i = rank; i-- > 0;) {
    if (!reduced[i]) {
      out_strides[i] = stride;
      stride *= in[i];
    }
  }
  const auto n = shape_numel(in);
  std::vector<std::int64_t> map(static_cast<std::size_t>(n));
  Shape idx(rank, 0);
  for (std::int64_t f = 0; f < n; ++f) {
    std::int64_t o = 0;
    for (std::size_t i = 0; i < rank; ++i) o += idx[i] * out_strides[i];
    map[static_cast<std::size_t>(f)] = o;
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < in[i]) break;
      idx[i] = 0;
    }
  }
  return map;
}

}  // namespace

Var reduce(const Var& a, std::vector<int> axes_in, ReduceKind kind) {
  const char* op = kind == ReduceKind::sum ? "sum" : kind == ReduceKind::mean ? "mean" : "max";
  const auto axes = normalize_axes(op, std::move(axes_in), a.shape().size());
  if (axes.empty()) return a;
  std::vector<bool> reduced(a.shape().size(), false);
  Shape out_shape;
  std::int64_t count = 1;
  for (int ax : axes) reduced[static_cast<std::size_t>(ax)] = true;
  for (std::size_t i = 0; i < a.shape().size(); ++i) {
    if (reduced[i])
      count *= a.shape()[i];
    else
      out_shape.push_back(a.shape()[i]);
  }
  if (kind == ReduceKind::max && count == 0) throw ShapeError("max: reduction over an empty axis");
  if (a.is_meta()) return Var(Tensor::meta(out_shape, a.dtype()));
  auto map = std::make_shared<std::vector<std::int64_t>>(reduction_map(a.shape(), reduced));
  const auto out_n = static_cast<std::size_t>(shape_numel(out_shape));
  auto argmax = std::make_shared<std::vector<std::int64_t>>();
  Tensor out = dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.value().data<T>();
    std::vector<T> r(out_n, T(0));
    if (kind == ReduceKind::max) {
      argmax->assign(out_n, -1);
      for (std::size_t f = 0; f < x.size(); ++f) {
        const auto o = static_cast<std::size_t>((*map)[f]);
        // strict comparison keeps the lowest flat index on ties
        if ((*argmax)[o] < 0 || x[f] > r[o]) {
          r[o] = x[f];
          (*argmax)[o] = static_cast<std::int64_t>(f);
        }
      }
    } else {
      for (std::size_t f = 0; f < x.size(); ++f) r[static_cast<std::size_t>((*map)[f])] += x[f];
      if (kind == ReduceKind::mean)
        for (auto& v : r) v /= static_cast<T>(count);
    }
    return Tensor::from(out_shape, std::move(r));
  });
  Shape in_shape = a.shape();
  return Tape::record(op, std::move(out), {a},
                      [in_shape, map, argmax, kind, count](const Tensor& g, const std::vector<bool>&) {
                        return dispatch(g.dtype(), [&]<typename T>() {
                          auto gd = g.data<T>();
                          std::vector<T> gi(map->size(), T(0));
                          if (kind == ReduceKind::max) {
                            for (std::size_t o = 0; o < gd.size(); ++o) gi[static_cast<std::size_t>((*argmax)[o])] = gd[o];
                          } else {
                            const T scale = kind == ReduceKind::mean ? T(1) / static_cast<T>(count) : T(1);
                            for (std::size_t f = 0; f < gi.size(); ++f) gi[f] = gd[static_cast<std::size_t>((*map)[f])] * scale;
                          }
                          return std::vector<Tensor>{Tensor::from(in_shape, std::move(gi))};
                        });
                      });
}

Var sum(const Var& a, std::vector<int> axes) { return reduce(a, std::move(axes), ReduceKind::sum); }
Var mean(const Var& a, std::vector<int> axes) { return reduce(a, std::move(axes), ReduceKind::mean); }
Var max(const Var& a, std::vector<int> axes) { return reduce(a, std::move(axes), ReduceKind::max); }

namespace {
std::vector<int> all_axes(const Var& a) {
  std::vector<int> axes(a.shape().size());
  std::iota(axes.begin(), axes.end(), 0);
  return axes;
}
}  // namespace

Var sum_all(const Var& a) { return a.shape().empty() ? a : sum(a, all_axes(a)); }
Var mean_all(const Var& a) { return a.shape().empty() ? a : mean(a, all_axes(a)); }

// --- reshape / permute ------------------------------------------------------

Var reshape(const Var& a, Shape shape) {
  if (shape_numel(shape) != a.value().numel())
    throw ShapeError("reshape: element count differs between " + shape_str(a.shape()) + " and " + shape_str(shape));
  if (a.is_meta()) return Var(Tensor::meta(std::move(shape), a.dtype()));
  Shape in_shape = a.shape();
  return Tape::record("reshape", a.value().reshaped(std::move(shape)), {a},
                      [in_shape](const Tensor& g, const std::vector<bool>&) {
                        return std::vector<Tensor>{g.reshaped(in_shape)};
                      });
}

namespace {

template <typename T>
std::vector<T> permute_data(std::span<const T> x, const Shape& in, const std::vector<int>& order) {
  const std::size_t rank = in.size();
  Shape in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];
  Shape out(rank), src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out[i] = in[static_cast<std::size_t>(order[i])];
    src_stride[i] = in_strides[static_cast<std::size_t>(order[i])];
  }
  std::vector<T> r(x.size());
  if (r.empty()) return r;
  Shape idx(rank, 0);
  std::int64_t src = 0;
  const std::int64_t inner = rank ? out[rank - 1] : 1;
  const std::int64_t inner_stride = rank ? src_stride[rank - 1] : 1;
  for (std::size_t f = 0; f < r.size();) {
    for (std::int64_t j = 0; j < inner; ++j) r[f++] = x[static_cast<std::size_t>(src + j * inner_stride)];
    if (rank < 2) break;
    for (std::size_t i = rank - 1; i-- > 0;) {
      src += src_stride[i];
      if (++idx[i] < out[i]) break;
      src -= src_stride[i] * out[i];
      idx[i] = 0;
    }
  }
  return r;
}

}  // namespace

Var permute(const Var& a, std::vector<int> order) {
  const std::size_t rank = a.shape().size();
  std::vector<int> check = order;
  std::sort(check.begin(), check.end());
  for (std::size_t i = 0; i < check.size(); ++i)
    if (check.size() != rank || check[i] != static_cast<int>(i))
      throw ShapeError("permute: axis order is not a permutation of rank " + std::to_string(rank));
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = a.shape()[static_cast<std::size_t>(order[i])];
  if (a.is_meta()) return Var(Tensor::meta(out_shape, a.dtype()));
  std::vector<int> inverse(rank);
  for (std::size_t i = 0; i < rank; ++i) inverse[static_cast<std::size_t>(order[i])] = static_cast<int>(i);
  Tensor out = dispatch(a.dtype(), [&]<typename T>() {
    return Tensor::from(out_shape, permute_data<T>(a.value().data<T>(), a.shape(), order));
  });
  return Tape::record("permute", std::move(out), {a},
                      [out_shape, inverse](const Tensor& g, const std::vector<bool>&) {
                        return dispatch(g.dtype(), [&]<typename T>() {
                          Shape in_shape(out_shape.size());
                          for (std::size_t i = 0; i < in_shape.size(); ++i)
                            in_shape[i] = out_shape[static_cast<std::size_t>(inverse[i])];
                          return std::vector<Tensor>{Tensor::from(in_shape, permute_data<T>(g.data<T>(), out_shape, inverse))};
                        });
                      });
}

}  // namespace fct
