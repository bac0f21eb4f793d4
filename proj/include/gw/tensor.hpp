#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gw::nn {

// ---------------------------------------------------------------------------
// Shapes and dense arrays
// ---------------------------------------------------------------------------

struct Shape {
  std::array<int, 4> dim{1, 1, 1, 1};
  int ndim = 0;

  static Shape scalar() { return Shape{{1, 1, 1, 1}, 1}; }
  static Shape vec(int n) { return Shape{{n, 1, 1, 1}, 1}; }
  static Shape mat(int r, int c) { return Shape{{r, c, 1, 1}, 2}; }

  int numel() const {
    int n = 1;
    for (int i = 0; i < ndim; ++i) n *= dim[i];
    return n;
  }
  int rows() const { return dim[0]; }
  int cols() const { return ndim >= 2 ? dim[1] : 1; }

  bool operator==(const Shape& o) const { return ndim == o.ndim && dim == o.dim; }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string to_string() const {
    std::string s = "(";
    for (int i = 0; i < ndim; ++i) s += (i ? "," : "") + std::to_string(dim[i]);
    return s + ")";
  }
};

template <typename T>
struct Array {
  Shape shape;
  std::vector<T> v;

  Array() = default;
  explicit Array(Shape s) : shape(s), v(static_cast<std::size_t>(s.numel()), T(0)) {}
  Array(Shape s, std::vector<T> data) : shape(s), v(std::move(data)) {
    if (static_cast<int>(v.size()) != shape.numel())
      throw std::invalid_argument("array payload does not match shape " + shape.to_string());
  }

  static Array zeros(Shape s) { return Array(s); }
  static Array full(Shape s, T value) {
    Array a(s);
    std::fill(a.v.begin(), a.v.end(), value);
    return a;
  }

  int rows() const { return shape.rows(); }
  int cols() const { return shape.cols(); }
  int numel() const { return shape.numel(); }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  T& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols() + c]; }
  T at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols() + c]; }

  bool all_finite() const {
    for (T x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }
};

template <typename T>
Array<T> randn(std::mt19937_64& rng, Shape s, double stddev) {
  Array<T> a(s);
  std::normal_distribution<double> dist(0.0, stddev);
  for (T& x : a.v) x = static_cast<T>(dist(rng));
  return a;
}

// In-place unit L2 rows; zero rows are left untouched.
template <typename T>
void renormalize_rows(Array<T>& a) {
  for (int r = 0; r < a.rows(); ++r) {
    double s = 0;
    for (int c = 0; c < a.cols(); ++c) s += double(a.at(r, c)) * double(a.at(r, c));
    if (s <= 0) continue;
    double inv = 1.0 / std::sqrt(s);
    for (int c = 0; c < a.cols(); ++c) a.at(r, c) = static_cast<T>(a.at(r, c) * inv);
  }
}

template <typename T>
int argmax_index(const T* x, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (x[i] > x[best]) best = i;
  return best;
}

struct BoolMat {
  int rows = 0;
  int cols = 0;
  std::vector<char> v;

  BoolMat() = default;
  BoolMat(int r, int c, bool fill = false) : rows(r), cols(c), v(std::size_t(r) * c, fill ? 1 : 0) {}
  void set(int r, int c, bool b) { v[std::size_t(r) * cols + c] = b ? 1 : 0; }
  bool get(int r, int c) const { return v[std::size_t(r) * cols + c] != 0; }
  bool operator==(const BoolMat& o) const { return rows == o.rows && cols == o.cols && v == o.v; }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename T>
struct Parameter {
  std::string name;
  Array<T> value;
  Array<T> grad;

  Parameter() = default;
  Parameter(std::string n, Array<T> init)
      : name(std::move(n)), value(std::move(init)), grad(value.shape) {}

  void zero_grad() { std::fill(grad.v.begin(), grad.v.end(), T(0)); }
};

// ---------------------------------------------------------------------------
// Raw matmul kernels (row-major)
// ---------------------------------------------------------------------------

namespace detail {

// C[m,n] += A[m,k] * B[k,n]
template <typename T>
void mm_nn_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* ai = a + std::size_t(i) * k;
    T* ci = c + std::size_t(i) * n;
    for (int p = 0; p < k; ++p) {
      T aip = ai[p];
      if (aip == T(0)) continue;
      const T* bp = b + std::size_t(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <typename T>
void mm_nt_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* ai = a + std::size_t(i) * k;
    T* ci = c + std::size_t(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* bj = b + std::size_t(j) * k;
      T acc = T(0);
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
template <typename T>
void mm_tn_acc(const T* a, const T* b, T* c, int k, int m, int n) {
  for (int p = 0; p < k; ++p) {
    const T* ap = a + std::size_t(p) * m;
    const T* bp = b + std::size_t(p) * n;
    for (int i = 0; i < m; ++i) {
      T api = ap[i];
      if (api == T(0)) continue;
      T* ci = c + std::size_t(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Reverse-mode tape
// ---------------------------------------------------------------------------

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Array<T>& val() const;
  Shape shape() const { return val().shape; }
  T scalar() const {
    if (val().numel() != 1) throw std::invalid_argument("scalar() on non-scalar var");
    return val().v[0];
  }
};

template <typename T>
class Tape {
public:
  struct Node {
    Array<T> value;
    Array<T> grad;
    bool needs_grad = false;
    Parameter<T>* origin = nullptr;
    std::function<void(Tape&, int)> pull;  // propagate grad to parents
  };

  bool check_finite = false;

  const Node& node(int id) const { return nodes_[id]; }
  Node& node(int id) { return nodes_[id]; }
  Array<T>& grad_of(int id) { return nodes_[id].grad; }
  int size() const { return static_cast<int>(nodes_.size()); }

  Var<T> constant(Array<T> value) { return push(std::move(value), false, nullptr, {}); }

  Var<T> param(Parameter<T>& p) {
    auto it = param_ids_.find(&p);
    if (it != param_ids_.end()) return {this, it->second};
    Var<T> v = push(p.value, true, &p, {});
    param_ids_[&p] = v.id;
    return v;
  }

  // loss must be scalar; parameter gradients accumulate additively.
  void backward(Var<T> loss) {
    if (loss.tape != this) throw std::invalid_argument("loss var from another tape");
    if (nodes_[loss.id].value.numel() != 1)
      throw std::invalid_argument("backward requires a scalar loss");
    nodes_[loss.id].grad.v[0] = T(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.needs_grad) continue;
      if (n.pull) n.pull(*this, id);
      if (n.origin) {
        for (std::size_t i = 0; i < n.grad.v.size(); ++i) n.origin->grad.v[i] += n.grad.v[i];
      }
    }
  }

  // --- op implementations (free functions below call into these) ---

  Var<T> push(Array<T> value, bool needs_grad, Parameter<T>* origin,
              std::function<void(Tape&, int)> pull) {
    if (check_finite && !value.all_finite())
      throw std::runtime_error("non-finite values produced on tape");
    Node n;
    n.value = std::move(value);
    n.grad = Array<T>(n.value.shape);
    n.needs_grad = needs_grad;
    n.origin = origin;
    n.pull = std::move(pull);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

private:
  std::vector<Node> nodes_;
  std::map<Parameter<T>*, int> param_ids_;
};

template <typename T>
const Array<T>& Var<T>::val() const {
  return tape->node(id).value;
}

namespace detail {

template <typename T>
Tape<T>& same_tape(Var<T> a, Var<T> b) {
  if (a.tape == nullptr || a.tape != b.tape)
    throw std::invalid_argument("vars must share a tape");
  return *a.tape;
}

template <typename T>
void require_shape(Var<T> v, Shape s, const char* what) {
  if (v.shape() != s)
    throw std::invalid_argument(std::string(what) + ": shape " + v.shape().to_string() +
                                " does not match " + s.to_string());
}

}  // namespace detail

// --- elementwise ---

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  detail::require_shape(b, a.shape(), "add");
  Array<T> out = a.val();
  const Array<T>& bv = b.val();
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += bv.v[i];
  bool ng = t.node(a.id).needs_grad || t.node(b.id).needs_grad;
  return t.push(std::move(out), ng, nullptr, [a, b](Tape<T>& tp, int self) {
    const Array<T>& g = tp.grad_of(self);
    if (tp.node(a.id).needs_grad) {
      Array<T>& ga = tp.grad_of(a.id);
      for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i];
    }
    if (tp.node(b.id).needs_grad) {
      Array<T>& gb = tp.grad_of(b.id);
      for (std::size_t i = 0; i < g.v.size(); ++i) gb.v[i] += g.v[i];
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  detail::require_shape(b, a.shape(), "sub");
  Array<T> out = a.val();
  const Array<T>& bv = b.val();
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] -= bv.v[i];
  bool ng = t.node(a.id).needs_grad || t.node(b.id).needs_grad;
  return t.push(std::move(out), ng, nullptr, [a, b](Tape<T>& tp, int self) {
    const Array<T>& g = tp.grad_of(self);
    if (tp.node(a.id).needs_grad) {
      Array<T>& ga = tp.grad_of(a.id);
      for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i];
    }
    if (tp.node(b.id).needs_grad) {
      Array<T>& gb = tp.grad_of(b.id);
      for (std::size_t i = 0; i < g.v.size(); ++i) gb.v[i] -= g.v[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  detail::require_shape(b, a.shape(), "mul");
  Array<T> out = a.val();
  const Array<T>& bv = b.val();
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= bv.v[i];
  bool ng = t.node(a.id).needs_grad || t.node(b.id).needs_grad;
  return t.push(std::move(out), ng, nullptr, [a, b](Tape<T>& tp, int self) {
    const Array<T>& g = tp.grad_of(self);
    const Array<T>& av = tp.node(a.id).value;
    const Array<T>& bv2 = tp.node(b.id).value;
    if (tp.node(a.id).needs_grad) {
      Array<T>& ga = tp.grad_of(a.id);
      for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i] * bv2.v[i];
    }
    if (tp.node(b.id).needs_grad) {
      Array<T>& gb = tp.grad_of(b.id);
      for (std::size_t i = 0; i < g.v.size(); ++i) gb.v[i] += g.v[i] * av.v[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tape<T>& t = *a.tape;
  Array<T> out = a.val();
  for (T& x : out.v) x *= factor;
  bool ng = t.node(a.id).needs_grad;
  return t.push(std::move(out), ng, nullptr, [a, factor](Tape<T>& tp, int self) {
    const Array<T>& g = tp.grad_of(self);
    Array<T>& ga = tp.grad_of(a.id);
    for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i] * factor;
  });
}

template <typename T>
Var<T> abs(Var<T> a) {
  Tape<T>& t = *a.tape;
  Array<T> out = a.val();
  for (T& x : out.v) x = x < T(0) ? -x : x;
  bool ng = t.node(a.id).needs_grad;
  return t.push(std::move(out), ng, nullptr, [a](Tape<T>& tp, int self) {
    const Array<T>& g = tp.grad_of(self);
    const Array<T>& av = tp.node(a.id).value;
    Array<T>& ga = tp.grad_of(a.id);
    for (std::size_t i = 0; i < g.v.size(); ++i) {
      T s = av.v[i] > T(0) ? T(1) : (av.v[i] < T(0) ? T(-1) : T(0));
      ga.v[i] += g.v[i] * s;
    }
  });
}

// swish(x) = x * sigmoid(x)
template <typename T>
Var<T> swish(Var<T> a) {
  Tape<T>& t = *a.tape;
  Array<T> out = a.val();
  for (T& x : out.v) {
    T s = T(1) / (T(1) + std::exp(-x));
    x = x * s;
  }
  bool ng = t.node(a.id).needs_grad;
  return t.push(std::move(out), ng, nullptr, [a](Tape<T>& tp, int self) {
    const Array<T>& g = tp.grad_of(self);
    const Array<T>& av = tp.node(a.id).value;
    Array<T>& ga = tp.grad_of(a.id);
    for (std::size_t i = 0; i < g.v.size(); ++i) {
      T x = av.v[i];
      T s = T(1) / (T(1) + std::exp(-x));
      ga.v[i] += g.v[i] * s * (T(1) + x * (T(1) - s));
    }
  });
}

// [m,n] + row vector [n]
template <typename T>
Var<T> add_rowvec(Var<T> m, Var<T> row) {
  Tape<T>& t = detail::same_tape(m, row);
  if (row.val().numel() != m.val().cols())
    throw std::invalid_argument("add_rowvec: width mismatch");
  Array<T> out = m.val();
  const Array<T>& rv = row.val();
  int cols = out.cols();
  for (int r = 0; r < out.rows(); ++r)
    for (int c = 0; c < cols; ++c) out.at(r, c) += rv.v[c];
  bool ng = t.node(m.id).needs_grad || t.node(row.id).needs_grad;
  return t.push(std::move(out), ng, nullptr, [m, row](Tape<T>& tp, int self) {
    const Array<T>& g = tp.grad_of(self);
    if (tp.node(m.id).needs_grad) {
      Array<T>& gm = tp.grad_of(m.id);
      for (std::size_t i = 0; i < g.v.size(); ++i) gm.v[i] += g.v[i];
    }
    if (tp.node(row.id).needs_grad) {
      Array<T>& gr = tp.grad_of(row.id);
      int cols = g.cols();
      for (int r = 0; r < g.rows(); ++r)
        for (int c = 0; c < cols; ++c) gr.v[c] += g.at(r, c);
    }
  });
}

// --- matrix products ---

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  const Array<T>& av = a.val();
  const Array<T>& bv = b.val();
  if (av.cols() != bv.rows())
    throw std::invalid_argument("matmul: inner dimensions differ: " + av.shape.to_string() +
                                " x " + bv.shape.to_string());
  Array<T> out(Shape::mat(av.rows(), bv.cols()));
  detail::mm_nn_acc(av.data(), bv.data(), out.data(), av.rows(), av.cols(), bv.cols());
  bool ng = t.node(a.id).needs_grad || t.node(b.id).needs_grad;
  return t.push(std::move(out), ng, nullptr, [a, b](Tape<T>& tp, int self) {
    const Array<T>& g = tp.grad_of(self);
    const Array<T>& av2 = tp.node(a.id).value;
    const Array<T>& bv2 = tp.node(b.id).value;
    if (tp.node(a.id).needs_grad)
      detail::mm_nt_acc(g.data(), bv2.data(), tp.grad_of(a.id).data(), g.rows(), g.cols(),
                        av2.cols());
    if (tp.node(b.id).needs_grad)
      detail::mm_tn_acc(av2.data(), g.data(), tp.grad_of(b.id).data(), av2.rows(), av2.cols(),
                        g.cols());
  });
}

// a [m,k] x b[n,k]^T -> [m,n]
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  Tape<T>& t = detail::same_tape(a, b);
  const Array<T>& av = a.val();
  const Array<T>& bv = b.val();
  if (av.cols() != bv.cols())
    throw std::invalid_argument("matmul_nt: inner dimensions differ");
  Array<T> out(Shape::mat(av.rows(), bv.rows()));
  detail::mm_nt_acc(av.data(), bv.data(), out.data(), av.rows(), av.cols(), bv.rows());
  bool ng = t.node(a.id).needs_grad || t.node(b.id).needs_grad;
  return t.push(std::move(out), ng, nullptr, [a, b](Tape<T>& tp, int self) {
    const Array<T>& g = tp.grad_of(self);
    const Array<T>& av2 = tp.node(a.id).value;
    const Array<T>& bv2 = tp.node(b.id).value;
    // d a += g * b ; d b += g^T * a
    if (tp.node(a.id).needs_grad)
      detail::mm_nn_acc(g.data(), bv2.data(), tp.grad_of(a.id).data(), g.rows(), g.cols(),
                        av2.cols());
    if (tp.node(b.id).needs_grad)
      detail::mm_tn_acc(g.data(), av2.data(), tp.grad_of(b.id).data(), g.rows(), g.cols(),
                        av2.cols());
  });
}

// --- gather / slicing / concatenation ---

// Row gather; also serves as embedding lookup.
template <typename T>
Var<T> rows(Var<T> table, std::vector<int> ids) {
  Tape<T>& t = *table.tape;
  const Array<T>& tv = table.val();
  int n = static_cast<int>(ids.size());
  Array<T> out(Shape::mat(n, tv.cols()));
  for (int r = 0; r < n; ++r) {
    int src = ids[r];
    if (src < 0 || src >= tv.rows()) throw std::invalid_argument("rows: index out of range");
    std::copy_n(tv.data() + std::size_t(src) * tv.cols(), tv.cols(),
                out.data() + std::size_t(r) * tv.cols());
  }
  bool ng = t.node(table.id).needs_grad;
  return t.push(std::move(out), ng, nullptr,
                [table, ids = std::move(ids)](Tape<T>& tp, int self) {
                  const Array<T>& g = tp.grad_of(self);
                  Array<T>& gt = tp.grad_of(table.id);
                  int cols = g.cols();
                  for (std::size_t r = 0; r < ids.size(); ++r) {
                    T* dst = gt.data() + std::size_t(ids[r]) * cols;
                    const T* src = g.data() + r * cols;
                    for (int c = 0; c < cols; ++c) dst[c] += src[c];
                  }
                });
}

template <typename T>
Var<T> slice_rows(Var<T> a, int start, int len) {
  Tape<T>& t = *a.tape;
  const Array<T>& av = a.val();
  if (start < 0 || len < 0 || start + len > av.rows())
    throw std::invalid_argument("slice_rows out of range");
  Array<T> out(Shape::mat(len, av.cols()));
  std::copy_n(av.data() + std::size_t(start) * av.cols(), std::size_t(len) * av.cols(),
              out.data());
  bool ng = t.node(a.id).needs_grad;
  return t.push(std::move(out), ng, nullptr, [a, start](Tape<T>& tp, int self) {
    const Array<T>& g = tp.grad_of(self);
    Array<T>& ga = tp.grad_of(a.id);
    T* dst = ga.data() + std::size_t(start) * g.cols();
    for (std::size_t i = 0; i < g.v.size(); ++i) dst[i] += g.v[i];
  });
}

template <typename T>
Var<T> slice_cols(Var<T> a, int start, int len) {
  Tape<T>& t = *a.tape;
  const Array<T>& av = a.val();
  if (start < 0 || len < 0 || start + len > av.cols())
    throw std::invalid_argument("slice_cols out of range");
  Array<T> out(Shape::mat(av.rows(), len));
  for (int r = 0; r < av.rows(); ++r)
    std::copy_n(av.data() + std::size_t(r) * av.cols() + start, len,
                out.data() + std::size_t(r) * len);
  bool ng = t.node(a.id).needs_grad;
  return t.push(std::move(out), ng, nullptr, [a, start, len](Tape<T>& tp, int self) {
    const Array<T>& g = tp.grad_of(self);
    Array<T>& ga = tp.grad_of(a.id);
    int acols = ga.cols();
    for (int r = 0; r < g.rows(); ++r)
      for (int c = 0; c < len; ++c) ga.v[std::size_t(r) * acols + start + c] += g.at(r, c);
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Tape<T>& t = *parts[0].tape;
  int cols = parts[0].val().cols();
  int total = 0;
  bool ng = false;
  for (const Var<T>& p : parts) {
    if (p.tape != &t) throw std::invalid_argument("vars must share a tape");
    if (p.val().cols() != cols) throw std::invalid_argument("concat_rows: width mismatch");
    total += p.val().rows();
    ng = ng || t.node(p.id).needs_grad;
  }
  Array<T> out(Shape::mat(total, cols));
  int at = 0;
  for (const Var<T>& p : parts) {
    std::copy_n(p.val().data(), p.val().v.size(), out.data() + std::size_t(at) * cols);
    at += p.val().rows();
  }
  return t.push(std::move(out), ng, nullptr, [parts](Tape<T>& tp, int self) {
    const Array<T>& g = tp.grad_of(self);
    int cols = g.cols();
    int at = 0;
    for (const Var<T>& p : parts) {
      int r = tp.node(p.id).value.rows();
      if (tp.node(p.id).needs_grad) {
        Array<T>& gp = tp.grad_of(p.id);
        const T* src = g.data() + std::size_t(at) * cols;
        for (std::size_t i = 0; i < gp.v.size(); ++i) gp.v[i] += src[i];
      }
      at += r;
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Tape<T>& t = *parts[0].tape;
  int rows_n = parts[0].val().rows();
  int total = 0;
  bool ng = false;
  for (const Var<T>& p : parts) {
    if (p.tape != &t) throw std::invalid_argument("vars must share a tape");
    if (p.val().rows() != rows_n) throw std::invalid_argument("concat_cols: height mismatch");
    total += p.val().cols();
    ng = ng || t.node(p.id).needs_grad;
  }
  Array<T> out(Shape::mat(rows_n, total));
  int at = 0;
  for (const Var<T>& p : parts) {
    const Array<T>& pv = p.val();
    for (int r = 0; r < rows_n; ++r)
      std::copy_n(pv.data() + std::size_t(r) * pv.cols(), pv.cols(),
                  out.data() + std::size_t(r) * total + at);
    at += pv.cols();
  }
  return t.push(std::move(out), ng, nullptr, [parts](Tape<T>& tp, int self) {
    const Array<T>& g = tp.grad_of(self);
    int total = g.cols();
    int at = 0;
    for (const Var<T>& p : parts) {
      Array<T>& gp = tp.grad_of(p.id);
      int pc = tp.node(p.id).value.cols();
      if (tp.node(p.id).needs_grad) {
        for (int r = 0; r < g.rows(); ++r)
          for (int c = 0; c < pc; ++c)
            gp.v[std::size_t(r) * pc + c] += g.v[std::size_t(r) * total + at + c];
      }
      at += pc;
    }
  });
}

// --- reductions ---

template <typename T>
Var<T> sum(Var<T> a) {
  Tape<T>& t = *a.tape;
  T s = T(0);
  for (T x : a.val().v) s += x;
  Array<T> out(Shape::scalar());
  out.v[0] = s;
  bool ng = t.node(a.id).needs_grad;
  return t.push(std::move(out), ng, nullptr, [a](Tape<T>& tp, int self) {
    T g = tp.grad_of(self).v[0];
    Array<T>& ga = tp.grad_of(a.id);
    for (T& x : ga.v) x += g;
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  int n = a.val().numel();
  return scale(sum(a), T(1) / T(n));
}

template <typename T>
Var<T> add_n(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("add_n: empty");
  Var<T> acc = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, parts[i]);
  return acc;
}

// --- normalization ---

// Row-wise RMS normalization with learned gain; eps = 1e-6.
template <typename T>
Var<T> rmsnorm(Var<T> x, Var<T> gain) {
  Tape<T>& t = detail::same_tape(x, gain);
  const Array<T>& xv = x.val();
  const Array<T>& gv = gain.val();
  if (gv.numel() != xv.cols()) throw std::invalid_argument("rmsnorm: gain width mismatch");
  const T eps = T(1e-6);
  int rows_n = xv.rows(), cols = xv.cols();
  Array<T> out(xv.shape);
  std::vector<T> inv(rows_n);
  for (int r = 0; r < rows_n; ++r) {
    T ms = T(0);
    for (int c = 0; c < cols; ++c) ms += xv.at(r, c) * xv.at(r, c);
    ms /= T(cols);
    inv[r] = T(1) / std::sqrt(ms + eps);
    for (int c = 0; c < cols; ++c) out.at(r, c) = xv.at(r, c) * inv[r] * gv.v[c];
  }
  bool ng = t.node(x.id).needs_grad || t.node(gain.id).needs_grad;
  return t.push(std::move(out), ng, nullptr,
                [x, gain, inv = std::move(inv)](Tape<T>& tp, int self) {
                  const Array<T>& g = tp.grad_of(self);
                  const Array<T>& xv2 = tp.node(x.id).value;
                  const Array<T>& gv2 = tp.node(gain.id).value;
                  int rows_n = xv2.rows(), cols = xv2.cols();
                  if (tp.node(x.id).needs_grad) {
                    Array<T>& gx = tp.grad_of(x.id);
                    for (int r = 0; r < rows_n; ++r) {
                      T dot = T(0);
                      for (int c = 0; c < cols; ++c)
                        dot += g.at(r, c) * gv2.v[c] * xv2.at(r, c);
                      T k = inv[r] * inv[r] * inv[r] * dot / T(cols);
                      for (int c = 0; c < cols; ++c)
                        gx.at(r, c) += g.at(r, c) * gv2.v[c] * inv[r] - xv2.at(r, c) * k;
                    }
                  }
                  if (tp.node(gain.id).needs_grad) {
                    Array<T>& gg = tp.grad_of(gain.id);
                    for (int r = 0; r < rows_n; ++r)
                      for (int c = 0; c < cols; ++c)
                        gg.v[c] += g.at(r, c) * xv2.at(r, c) * inv[r];
                  }
                });
}

// Rows scaled to unit L2 norm (smoothed by a tiny epsilon inside the root).
template <typename T>
Var<T> l2_normalize_rows(Var<T> x) {
  Tape<T>& t = *x.tape;
  const Array<T>& xv = x.val();
  int rows_n = xv.rows(), cols = xv.cols();
  Array<T> out(xv.shape);
  std::vector<T> inv(rows_n);
  for (int r = 0; r < rows_n; ++r) {
    T s = T(0);
    for (int c = 0; c < cols; ++c) s += xv.at(r, c) * xv.at(r, c);
    inv[r] = T(1) / std::sqrt(s + T(1e-24));
    for (int c = 0; c < cols; ++c) out.at(r, c) = xv.at(r, c) * inv[r];
  }
  bool ng = t.node(x.id).needs_grad;
  return t.push(std::move(out), ng, nullptr, [x, inv = std::move(inv)](Tape<T>& tp, int self) {
    const Array<T>& g = tp.grad_of(self);
    const Array<T>& yv = tp.node(self).value;
    Array<T>& gx = tp.grad_of(x.id);
    int rows_n = yv.rows(), cols = yv.cols();
    for (int r = 0; r < rows_n; ++r) {
      T dot = T(0);
      for (int c = 0; c < cols; ++c) dot += g.at(r, c) * yv.at(r, c);
      for (int c = 0; c < cols; ++c) gx.at(r, c) += (g.at(r, c) - yv.at(r, c) * dot) * inv[r];
    }
  });
}

// --- softmax family ---

template <typename T>
Var<T> softmax_rows(Var<T> x) {
  Tape<T>& t = *x.tape;
  const Array<T>& xv = x.val();
  int rows_n = xv.rows(), cols = xv.cols();
  Array<T> out(xv.shape);
  for (int r = 0; r < rows_n; ++r) {
    T mx = xv.at(r, 0);
    for (int c = 1; c < cols; ++c) mx = std::max(mx, xv.at(r, c));
    T z = T(0);
    for (int c = 0; c < cols; ++c) {
      out.at(r, c) = std::exp(xv.at(r, c) - mx);
      z += out.at(r, c);
    }
    for (int c = 0; c < cols; ++c) out.at(r, c) /= z;
  }
  bool ng = t.node(x.id).needs_grad;
  return t.push(std::move(out), ng, nullptr, [x](Tape<T>& tp, int self) {
    const Array<T>& g = tp.grad_of(self);
    const Array<T>& p = tp.node(self).value;
    Array<T>& gx = tp.grad_of(x.id);
    int rows_n = p.rows(), cols = p.cols();
    for (int r = 0; r < rows_n; ++r) {
      T dot = T(0);
      for (int c = 0; c < cols; ++c) dot += g.at(r, c) * p.at(r, c);
      for (int c = 0; c < cols; ++c) gx.at(r, c) += p.at(r, c) * (g.at(r, c) - dot);
    }
  });
}

// Masked positions receive exactly zero probability; a fully-masked row is an
// error (malformed mask).
template <typename T>
Var<T> masked_softmax_rows(Var<T> x, const BoolMat& mask) {
  Tape<T>& t = *x.tape;
  const Array<T>& xv = x.val();
  int rows_n = xv.rows(), cols = xv.cols();
  if (mask.rows != rows_n || mask.cols != cols)
    throw std::invalid_argument("masked_softmax: mask shape mismatch");
  Array<T> out(xv.shape);
  for (int r = 0; r < rows_n; ++r) {
    bool any = false;
    T mx = T(0);
    for (int c = 0; c < cols; ++c) {
      if (!mask.get(r, c)) continue;
      mx = any ? std::max(mx, xv.at(r, c)) : xv.at(r, c);
      any = true;
    }
    if (!any) throw std::invalid_argument("masked_softmax: fully masked attention row");
    T z = T(0);
    for (int c = 0; c < cols; ++c) {
      if (mask.get(r, c)) {
        out.at(r, c) = std::exp(xv.at(r, c) - mx);
        z += out.at(r, c);
      } else {
        out.at(r, c) = T(0);
      }
    }
    for (int c = 0; c < cols; ++c)
      if (mask.get(r, c)) out.at(r, c) /= z;
  }
  bool ng = t.node(x.id).needs_grad;
  return t.push(std::move(out), ng, nullptr, [x](Tape<T>& tp, int self) {
    const Array<T>& g = tp.grad_of(self);
    const Array<T>& p = tp.node(self).value;
    Array<T>& gx = tp.grad_of(x.id);
    int rows_n = p.rows(), cols = p.cols();
    for (int r = 0; r < rows_n; ++r) {
      T dot = T(0);
      for (int c = 0; c < cols; ++c) dot += g.at(r, c) * p.at(r, c);
      for (int c = 0; c < cols; ++c)
        if (p.at(r, c) != T(0) || g.at(r, c) != T(0))
          gx.at(r, c) += p.at(r, c) * (g.at(r, c) - dot);
    }
  });
}

// Cross entropy summed over rows: sum_r (logsumexp(l_r) - l_r[target_r]).
template <typename T>
Var<T> cross_entropy_sum(Var<T> logits, std::vector<int> targets) {
  Tape<T>& t = *logits.tape;
  const Array<T>& lv = logits.val();
  int rows_n = lv.rows(), cols = lv.cols();
  if (static_cast<int>(targets.size()) != rows_n)
    throw std::invalid_argument("cross_entropy: target count mismatch");
  Array<T> probs(lv.shape);
  T loss = T(0);
  for (int r = 0; r < rows_n; ++r) {
    int tgt = targets[r];
    if (tgt < 0 || tgt >= cols) throw std::invalid_argument("cross_entropy: target out of range");
    T mx = lv.at(r, 0);
    for (int c = 1; c < cols; ++c) mx = std::max(mx, lv.at(r, c));
    T z = T(0);
    for (int c = 0; c < cols; ++c) {
      probs.at(r, c) = std::exp(lv.at(r, c) - mx);
      z += probs.at(r, c);
    }
    for (int c = 0; c < cols; ++c) probs.at(r, c) /= z;
    loss += mx + std::log(z) - lv.at(r, tgt);
  }
  Array<T> out(Shape::scalar());
  out.v[0] = loss;
  bool ng = t.node(logits.id).needs_grad;
  return t.push(std::move(out), ng, nullptr,
                [logits, targets = std::move(targets), probs = std::move(probs)](Tape<T>& tp,
                                                                                 int self) {
                  T g = tp.grad_of(self).v[0];
                  Array<T>& gl = tp.grad_of(logits.id);
                  int rows_n = probs.rows(), cols = probs.cols();
                  for (int r = 0; r < rows_n; ++r) {
                    for (int c = 0; c < cols; ++c) gl.at(r, c) += g * probs.at(r, c);
                    gl.at(r, targets[r]) -= g;
                  }
                });
}

// --- composites ---

template <typename T>
Var<T> linear(Var<T> x, Parameter<T>& w, Parameter<T>& b) {
  Tape<T>& t = *x.tape;
  return add_rowvec(matmul(x, t.param(w)), t.param(b));
}

// Single-head scaled dot-product attention with a boolean mask (true = attend).
template <typename T>
Var<T> masked_attention(Var<T> q, Var<T> k, Var<T> v, const BoolMat& mask) {
  T factor = T(1) / std::sqrt(static_cast<T>(q.val().cols()));
  Var<T> scores = scale(matmul_nt(q, k), factor);
  Var<T> weights = masked_softmax_rows(scores, mask);
  return matmul(weights, v);
}

// ---------------------------------------------------------------------------
// Optimizer and schedule
// ---------------------------------------------------------------------------

// Linear warmup to lr_max, then cosine decay to lr_min at `total`.
inline double cosine_warmup_lr(long step, long warmup, long total, double lr_max, double lr_min) {
  if (step < 0 || warmup >= total) throw std::invalid_argument("bad schedule arguments");
  if (step < warmup) return lr_max * static_cast<double>(step) / static_cast<double>(warmup);
  if (step >= total) return lr_min;
  double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return lr_min + (lr_max - lr_min) * 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846));
}

template <typename T>
class AdamW {
public:
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;

  explicit AdamW(double wd = 0.1) : weight_decay(wd) {}

  long step_count() const { return step_; }

  // Decoupled weight decay; moments kept in double.
  void step(const std::vector<Parameter<T>*>& params, double lr) {
    if (slots_.empty()) {
      slots_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        slots_[i].m.assign(params[i]->value.v.size(), 0.0);
        slots_[i].v.assign(params[i]->value.v.size(), 0.0);
      }
    }
    if (slots_.size() != params.size())
      throw std::invalid_argument("optimizer bound to a different parameter set");
    ++step_;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter<T>& p = *params[i];
      auto& slot = slots_[i];
      if (slot.m.size() != p.value.v.size())
        throw std::invalid_argument("parameter shape changed under optimizer");
      for (std::size_t j = 0; j < p.value.v.size(); ++j) {
        double g = static_cast<double>(p.grad.v[j]);
        slot.m[j] = beta1 * slot.m[j] + (1.0 - beta1) * g;
        slot.v[j] = beta2 * slot.v[j] + (1.0 - beta2) * g * g;
        double mhat = slot.m[j] / bc1;
        double vhat = slot.v[j] / bc2;
        double x = static_cast<double>(p.value.v[j]);
        x -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * x);
        p.value.v[j] = static_cast<T>(x);
      }
    }
  }

private:
  struct Slot {
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  long step_ = 0;
};

}  // namespace gw::nn
