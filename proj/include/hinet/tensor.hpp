#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <utility>
#include <vector>

#include "hinet/common.hpp"

namespace hinet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily, zero-filled
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

struct TapeEntry {
  std::shared_ptr<TensorNode> out;
  std::function<void()> backward;
};

}  // namespace detail

class Tape;
inline Tape*& active_tape_slot() {
  thread_local Tape* slot = nullptr;
  return slot;
}

// Dense row-major tensor handle. Copying a Tensor shares the underlying
// node; ops build fresh nodes and record backward closures on the active
// tape when any input requires grad.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), 0.0, requires_grad);
  }

  static Tensor filled(Shape shape, double v, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode>();
    t.node_->shape = std::move(shape);
    t.node_->value.assign(shape_numel(t.node_->shape), v);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw ShapeError("data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<detail::TensorNode>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  static Tensor vector(std::vector<double> data, bool requires_grad = false) {
    Shape s{data.size()};
    return from(std::move(s), std::move(data), requires_grad);
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false) {
    std::size_t r = rows.size();
    std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix initializer");
      data.insert(data.end(), row.begin(), row.end());
    }
    return from({r, c}, std::move(data), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  // Row/column view: rank-1 tensors count as a single row.
  std::size_t rows() const { return rank() == 2 ? node_->shape[0] : 1; }
  std::size_t cols() const { return rank() == 2 ? node_->shape[1] : size(); }

  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }

  double at(std::size_t i) const { return node_->value.at(i); }
  double at(std::size_t r, std::size_t c) const { return node_->value.at(r * cols() + c); }

  double item() const {
    if (size() != 1) throw ContractError("item() on tensor of size " + std::to_string(size()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    node_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::vector<double>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const std::vector<double>& grad_view() const { return node_->grad; }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Ordered log of executed primitive ops. backward() replays the recorded
// closures in exact reverse execution order and then drops them, so one
// forward pass feeds one backward pass. Parameter grads accumulate across
// passes until zero_grad.
class Tape {
 public:
  class Scope {
   public:
    explicit Scope(Tape& tape) : prev_(active_tape_slot()) { active_tape_slot() = &tape; }
    ~Scope() { active_tape_slot() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* active() { return active_tape_slot(); }

  void record(std::shared_ptr<detail::TensorNode> out, std::function<void()> fn) {
    entries_.push_back({std::move(out), std::move(fn)});
  }

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  void backward(const Tensor& loss) {
    if (loss.size() != 1) throw ContractError("backward requires a scalar loss, got shape " +
                                              shape_str(loss.shape()));
    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->out->grad.empty()) continue;  // not on any path from a seeded loss
      it->backward();
    }
    entries_.clear();
  }

 private:
  std::vector<detail::TapeEntry> entries_;
};

inline void backward(const Tensor& loss) {
  Tape* t = Tape::active();
  if (!t) throw ContractError("backward called with no active tape");
  t->backward(loss);
}

namespace detail {

inline bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

inline Tensor make_result(Shape shape, std::vector<double> value, bool requires_grad) {
  Tensor t = Tensor::from(std::move(shape), std::move(value));
  t.set_requires_grad(requires_grad);
  return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive ops
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul needs rank-2 operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw ShapeError("matmul inner dims differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      if (s == 0.0) continue;
      const double* brow = bv + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += s * brow[j];
    }

  bool rec = detail::should_record({&a, &b});
  Tensor c = detail::make_result({m, n}, std::move(out), rec);
  if (rec) {
    auto an = a.node(), bn = b.node(), cn = c.node();
    Tape::active()->record(cn, [an, bn, cn, m, k, n] {
      const double* dc = cn->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        // dA += dC * B^T
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            const double* dcrow = dc + i * n;
            const double* brow = bn->value.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) s += dcrow[j] * brow[j];
            an->grad[i * k + p] += s;
          }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        // dB += A^T * dC
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double s = an->value[i * k + p];
            if (s == 0.0) continue;
            const double* dcrow = dc + i * n;
            double* grow = bn->grad.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) grow[j] += s * dcrow[j];
          }
      }
    });
  }
  return c;
}

// a * b^T; the gating layers keep their weight matrices in the documented
// [outputs x inputs] orientation, so batched logits come out of this form.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul_nt needs rank-2 operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k)
    throw ShapeError("matmul_nt inner dims differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double* arow = a.values().data() + i * k;
      const double* brow = b.values().data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      out[i * n + j] = s;
    }

  bool rec = detail::should_record({&a, &b});
  Tensor c = detail::make_result({m, n}, std::move(out), rec);
  if (rec) {
    auto an = a.node(), bn = b.node(), cn = c.node();
    Tape::active()->record(cn, [an, bn, cn, m, k, n] {
      const double* dc = cn->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        // dA += dC * B
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double s = dc[i * n + j];
            if (s == 0.0) continue;
            const double* brow = bn->value.data() + j * k;
            double* grow = an->grad.data() + i * k;
            for (std::size_t p = 0; p < k; ++p) grow[p] += s * brow[p];
          }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        // dB += dC^T * A
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double s = dc[i * n + j];
            if (s == 0.0) continue;
            const double* arow = an->value.data() + i * k;
            double* grow = bn->grad.data() + j * k;
            for (std::size_t p = 0; p < k; ++p) grow[p] += s * arow[p];
          }
      }
    });
  }
  return c;
}

// x[m,k] * w[k,n] + b[n] broadcast over rows.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2)
    throw ShapeError("linear needs rank-2 x and w, got " + shape_str(x.shape()) + " and " +
                     shape_str(w.shape()));
  const std::size_t m = x.shape()[0], k = x.shape()[1], n = w.shape()[1];
  if (w.shape()[0] != k)
    throw ShapeError("linear inner dims differ: " + shape_str(x.shape()) + " vs " +
                     shape_str(w.shape()));
  if (b.size() != n)
    throw ShapeError("linear bias length " + std::to_string(b.size()) + " != " +
                     std::to_string(n));
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    std::copy(b.values().begin(), b.values().end(), out.begin() + i * n);
  const double* xv = x.values().data();
  const double* wv = w.values().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double s = xv[i * k + p];
      if (s == 0.0) continue;
      const double* wrow = wv + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += s * wrow[j];
    }

  bool rec = detail::should_record({&x, &w, &b});
  Tensor c = detail::make_result({m, n}, std::move(out), rec);
  if (rec) {
    auto xn = x.node(), wn = w.node(), bn = b.node(), cn = c.node();
    Tape::active()->record(cn, [xn, wn, bn, cn, m, k, n] {
      const double* dc = cn->grad.data();
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            const double* dcrow = dc + i * n;
            const double* wrow = wn->value.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) s += dcrow[j] * wrow[j];
            xn->grad[i * k + p] += s;
          }
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double s = xn->value[i * k + p];
            if (s == 0.0) continue;
            const double* dcrow = dc + i * n;
            double* grow = wn->grad.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) grow[j] += s * dcrow[j];
          }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
          const double* dcrow = dc + i * n;
          for (std::size_t j = 0; j < n; ++j) bn->grad[j] += dcrow[j];
        }
      }
    });
  }
  return c;
}

// Gathers table rows by id; backward scatter-adds into the table.
inline Tensor embed_rows(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw ShapeError("embed_rows needs a rank-2 table");
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  std::vector<double> out(ids.size() * d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= v)
      throw IndexError("embedding id " + std::to_string(ids[r]) + " out of vocab " +
                       std::to_string(v));
    std::copy_n(table.values().data() + static_cast<std::size_t>(ids[r]) * d, d,
                out.data() + r * d);
  }

  bool rec = detail::should_record({&table});
  Tensor c = detail::make_result({ids.size(), d}, std::move(out), rec);
  if (rec) {
    auto tn = table.node(), cn = c.node();
    Tape::active()->record(cn, [tn, cn, ids, d] {
      tn->ensure_grad();
      for (std::size_t r = 0; r < ids.size(); ++r) {
        const double* dcrow = cn->grad.data() + r * d;
        double* grow = tn->grad.data() + static_cast<std::size_t>(ids[r]) * d;
        for (std::size_t j = 0; j < d; ++j) grow[j] += dcrow[j];
      }
    });
  }
  return c;
}

// Softmax over the last dimension (each row of a matrix, the whole of a
// vector), computed with max-subtraction.
inline Tensor softmax(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  if (n == 0) throw ShapeError("softmax on empty tensor");
  for (double v : x.values())
    if (!is_finite(v)) throw NumericError("softmax input is not finite");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.values().data() + i * n;
    double* orow = out.data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      total += orow[j];
    }
    for (std::size_t j = 0; j < n; ++j) orow[j] /= total;
  }

  bool rec = detail::should_record({&x});
  Tensor c = detail::make_result(x.shape(), std::move(out), rec);
  if (rec) {
    auto xn = x.node(), cn = c.node();
    Tape::active()->record(cn, [xn, cn, m, n] {
      xn->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double* y = cn->value.data() + i * n;
        const double* dy = cn->grad.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
        double* gx = xn->grad.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) gx[j] += y[j] * (dy[j] - dot);
      }
    });
  }
  return c;
}

namespace detail {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& x, Fwd fwd, Bwd make_backward) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x.values()[i]);
  bool rec = should_record({&x});
  Tensor c = make_result(x.shape(), std::move(out), rec);
  if (rec) Tape::active()->record(c.node(), make_backward(x.node(), c.node()));
  return c;
}

}  // namespace detail

inline Tensor relu(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](auto xn, auto cn) {
        return [xn, cn] {
          xn->ensure_grad();
          for (std::size_t i = 0; i < xn->value.size(); ++i)
            if (xn->value[i] > 0.0) xn->grad[i] += cn->grad[i];
        };
      });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary_op(
      x,
      [](double v) {
        // split on sign to avoid exp overflow; keep the result strictly
        // inside (0,1) even where exp underflows
        const double y =
            v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        return std::min(std::max(y, std::numeric_limits<double>::denorm_min()),
                        std::nextafter(1.0, 0.0));
      },
      [](auto xn, auto cn) {
        return [xn, cn] {
          xn->ensure_grad();
          for (std::size_t i = 0; i < xn->value.size(); ++i) {
            const double y = cn->value[i];
            xn->grad[i] += cn->grad[i] * y * (1.0 - y);
          }
        };
      });
}

inline Tensor log(const Tensor& x) {
  for (double v : x.values())
    if (!(v > 0.0)) throw NumericError("log of non-positive value " + str(v));
  return detail::unary_op(
      x, [](double v) { return std::log(v); },
      [](auto xn, auto cn) {
        return [xn, cn] {
          xn->ensure_grad();
          for (std::size_t i = 0; i < xn->value.size(); ++i)
            xn->grad[i] += cn->grad[i] / xn->value[i];
        };
      });
}

inline Tensor neg(const Tensor& x) {
  return detail::unary_op(
      x, [](double v) { return -v; },
      [](auto xn, auto cn) {
        return [xn, cn] {
          xn->ensure_grad();
          for (std::size_t i = 0; i < xn->value.size(); ++i) xn->grad[i] -= cn->grad[i];
        };
      });
}

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary_op(
      x, [c](double v) { return c * v; },
      [c](auto xn, auto cn) {
        return [xn, cn, c] {
          xn->ensure_grad();
          for (std::size_t i = 0; i < xn->value.size(); ++i) xn->grad[i] += c * cn->grad[i];
        };
      });
}

inline Tensor add_const(const Tensor& x, double c) {
  return detail::unary_op(
      x, [c](double v) { return v + c; },
      [](auto xn, auto cn) {
        return [xn, cn] {
          xn->ensure_grad();
          for (std::size_t i = 0; i < xn->value.size(); ++i) xn->grad[i] += cn->grad[i];
        };
      });
}

// Pass-through gradient strictly inside (lo, hi), zero where clamped.
inline Tensor clamp(const Tensor& x, double lo, double hi) {
  return detail::unary_op(
      x, [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](auto xn, auto cn) {
        return [xn, cn, lo, hi] {
          xn->ensure_grad();
          for (std::size_t i = 0; i < xn->value.size(); ++i) {
            const double v = xn->value[i];
            if (v > lo && v < hi) xn->grad[i] += cn->grad[i];
          }
        };
      });
}

namespace detail {

enum class BinKind { kAdd, kSub, kMul };

inline Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind) {
  const bool a_scalar = a.size() == 1;
  const bool b_scalar = b.size() == 1;
  if (!(a.shape() == b.shape() || a_scalar || b_scalar))
    throw ShapeError("elementwise op on " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()) + " (only matching shapes or scalar broadcast)");
  const Shape& out_shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(out_shape);
  std::vector<double> out(n);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[a_scalar ? 0 : i];
    const double y = bv[b_scalar ? 0 : i];
    out[i] = kind == BinKind::kAdd ? x + y : kind == BinKind::kSub ? x - y : x * y;
  }

  bool rec = should_record({&a, &b});
  Tensor c = make_result(out_shape, std::move(out), rec);
  if (rec) {
    auto an = a.node(), bn = b.node(), cn = c.node();
    Tape::active()->record(cn, [an, bn, cn, kind, a_scalar, b_scalar, n] {
      const double* dc = cn->grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          double g = dc[i];
          if (kind == BinKind::kMul) g *= bn->value[b_scalar ? 0 : i];
          an->grad[a_scalar ? 0 : i] += g;
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          double g = dc[i];
          if (kind == BinKind::kMul)
            g *= an->value[a_scalar ? 0 : i];
          else if (kind == BinKind::kSub)
            g = -g;
          bn->grad[b_scalar ? 0 : i] += g;
        }
      }
    });
  }
  return c;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(a, b, detail::BinKind::kAdd);
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(a, b, detail::BinKind::kSub);
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(a, b, detail::BinKind::kMul);
}

// Last-dim concatenation; leading dims must agree.
inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat of zero parts");
  const std::size_t m = parts[0].rows();
  const std::size_t rank = parts[0].rank();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != rank || p.rows() != m)
      throw ShapeError("concat leading dims differ: " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(p.values().data() + i * w, w, out.data() + i * total + off);
    off += w;
  }

  bool rec = false;
  if (Tape::active())
    for (const Tensor& p : parts)
      if (p.requires_grad()) rec = true;
  Shape out_shape = rank == 2 ? Shape{m, total} : Shape{total};
  Tensor c = detail::make_result(std::move(out_shape), std::move(out), rec);
  if (rec) {
    std::vector<std::shared_ptr<detail::TensorNode>> nodes;
    std::vector<std::size_t> widths;
    for (const Tensor& p : parts) {
      nodes.push_back(p.node());
      widths.push_back(p.cols());
    }
    auto cn = c.node();
    Tape::active()->record(cn, [nodes, widths, cn, m, total] {
      std::size_t off = 0;
      for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
        const std::size_t w = widths[pi];
        if (nodes[pi]->requires_grad) {
          nodes[pi]->ensure_grad();
          for (std::size_t i = 0; i < m; ++i) {
            const double* src = cn->grad.data() + i * total + off;
            double* dst = nodes[pi]->grad.data() + i * w;
            for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
          }
        }
        off += w;
      }
    });
  }
  return c;
}

// Single column as an [m,1] tensor.
inline Tensor column(const Tensor& x, std::size_t j) {
  const std::size_t m = x.rows(), n = x.cols();
  if (j >= n) throw IndexError("column " + std::to_string(j) + " out of " + std::to_string(n));
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) out[i] = x.values()[i * n + j];

  bool rec = detail::should_record({&x});
  Tensor c = detail::make_result({m, 1}, std::move(out), rec);
  if (rec) {
    auto xn = x.node(), cn = c.node();
    Tape::active()->record(cn, [xn, cn, j, m, n] {
      xn->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) xn->grad[i * n + j] += cn->grad[i];
    });
  }
  return c;
}

// Multiplies row i of x by s[i]; s has shape [m] or [m,1].
inline Tensor scale_rows(const Tensor& x, const Tensor& s) {
  const std::size_t m = x.rows(), n = x.cols();
  if (s.size() != m)
    throw ShapeError("scale_rows weights " + shape_str(s.shape()) + " for " +
                     std::to_string(m) + " rows");
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double w = s.values()[i];
    const double* row = x.values().data() + i * n;
    double* orow = out.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) orow[j] = w * row[j];
  }

  bool rec = detail::should_record({&x, &s});
  Tensor c = detail::make_result(x.shape(), std::move(out), rec);
  if (rec) {
    auto xn = x.node(), sn = s.node(), cn = c.node();
    Tape::active()->record(cn, [xn, sn, cn, m, n] {
      if (xn->requires_grad) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
          const double w = sn->value[i];
          const double* dcrow = cn->grad.data() + i * n;
          double* grow = xn->grad.data() + i * n;
          for (std::size_t j = 0; j < n; ++j) grow[j] += w * dcrow[j];
        }
      }
      if (sn->requires_grad) {
        sn->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
          const double* dcrow = cn->grad.data() + i * n;
          const double* xrow = xn->value.data() + i * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += dcrow[j] * xrow[j];
          sn->grad[i] += s;
        }
      }
    });
  }
  return c;
}

inline Tensor sum(const Tensor& x) {
  double total = std::accumulate(x.values().begin(), x.values().end(), 0.0);
  bool rec = detail::should_record({&x});
  Tensor c = detail::make_result({1}, {total}, rec);
  if (rec) {
    auto xn = x.node(), cn = c.node();
    Tape::active()->record(cn, [xn, cn] {
      xn->ensure_grad();
      const double g = cn->grad[0];
      for (double& v : xn->grad) v += g;
    });
  }
  return c;
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

// ---------------------------------------------------------------------------
// Composites
// ---------------------------------------------------------------------------

inline constexpr double kProbClampLo = 1e-7;
inline constexpr double kProbClampHi = 1.0 - 1e-7;

// Summed binary cross-entropy; probabilities are clamped before the log.
inline Tensor bce_sum(const Tensor& prob, const Tensor& label) {
  if (prob.shape() != label.shape())
    throw ShapeError("bce_sum shapes differ: " + shape_str(prob.shape()) + " vs " +
                     shape_str(label.shape()));
  Tensor p = clamp(prob, kProbClampLo, kProbClampHi);
  Tensor pos = mul(label, log(p));
  Tensor negterm = mul(add_const(neg(label), 1.0), log(add_const(neg(p), 1.0)));
  return neg(sum(add(pos, negterm)));
}

}  // namespace hinet
