#include "ampattn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ampattn {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

namespace {
void check_shape(const Shape& s) {
  if (s.empty()) throw std::invalid_argument("tensor shape must have rank >= 1");
  for (int d : s)
    if (d <= 0) throw std::invalid_argument("tensor extents must be positive, got " + shape_str(s));
}
}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  check_shape(shape);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  impl->shape = std::move(shape);
  impl->requires_grad = impl->needs_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.impl()->data) v = value;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = impl->needs_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::uniform(Shape shape, double bound, Rng& rng, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.impl()->data) v = rng.uniform(-bound, bound);
  return t;
}

double Tensor::at2(int i, int j) const {
  return impl_->data[static_cast<size_t>(i) * impl_->shape[1] + j];
}
double& Tensor::at2(int i, int j) {
  return impl_->data[static_cast<size_t>(i) * impl_->shape[1] + j];
}

double Tensor::value() const {
  if (size() != 1)
    throw std::invalid_argument("value() requires a single-element tensor, got " + shape_str(shape()));
  return impl_->data[0];
}

void Tensor::set_requires_grad(bool rg) {
  impl_->requires_grad = rg;
  impl_->needs_grad = rg || impl_->needs_grad;
}

std::span<double> Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::clone() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->requires_grad = impl_->requires_grad;
  impl->needs_grad = impl_->needs_grad;
  return Tensor(std::move(impl));
}

void Tensor::copy_from(const Tensor& other) {
  if (shape() != other.shape())
    throw std::invalid_argument("copy_from shape mismatch " + shape_str(shape()) + " vs " +
                                shape_str(other.shape()));
  impl_->data = other.impl()->data;
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

namespace {

bool any_needs_grad(const std::vector<Tensor>& ts) {
  for (const auto& t : ts)
    if (t.needs_grad()) return true;
  return false;
}

struct Bcast {
  Shape out;
  std::vector<int64_t> stride_a, stride_b;  // per out-axis element strides; 0 where broadcast
};

Bcast broadcast_plan(const char* kind, const Shape& a, const Shape& b) {
  int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  int r = std::max(ra, rb);
  Bcast p;
  p.out.assign(r, 0);
  p.stride_a.assign(r, 0);
  p.stride_b.assign(r, 0);
  for (int k = 0; k < r; ++k) {
    int ax = r - 1 - k;
    int da = k < ra ? a[ra - 1 - k] : 1;
    int db = k < rb ? b[rb - 1 - k] : 1;
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument(std::string(kind) + ": shapes not broadcastable " + shape_str(a) +
                                  " vs " + shape_str(b));
    p.out[ax] = std::max(da, db);
  }
  int64_t sa = 1, sb = 1;
  for (int k = 0; k < r; ++k) {
    int ax = r - 1 - k;
    int da = k < ra ? a[ra - 1 - k] : 1;
    int db = k < rb ? b[rb - 1 - k] : 1;
    p.stride_a[ax] = (da == 1 && p.out[ax] != 1) ? 0 : sa;
    p.stride_b[ax] = (db == 1 && p.out[ax] != 1) ? 0 : sb;
    sa *= da;
    sb *= db;
  }
  return p;
}

/// Iterate a broadcast output, calling fn(out_index, a_offset, b_offset).
template <typename Fn>
void bcast_for_each(const Bcast& p, Fn&& fn) {
  int r = static_cast<int>(p.out.size());
  int64_t n = shape_numel(p.out);
  std::vector<int> ctr(r, 0);
  int64_t oa = 0, ob = 0;
  for (int64_t i = 0; i < n; ++i) {
    fn(i, oa, ob);
    for (int ax = r - 1; ax >= 0; --ax) {
      ++ctr[ax];
      oa += p.stride_a[ax];
      ob += p.stride_b[ax];
      if (ctr[ax] < p.out[ax]) break;
      oa -= p.stride_a[ax] * p.out[ax];
      ob -= p.stride_b[ax] * p.out[ax];
      ctr[ax] = 0;
    }
  }
}

}  // namespace

Tensor Graph::make_op(const char* kind, std::vector<Tensor> inputs, Tensor output,
                      std::function<void()> backward) {
  bool needs = any_needs_grad(inputs);
  output.impl()->needs_grad = needs;
  if (needs)
    nodes_.push_back(Node{kind, std::move(inputs), output, std::move(backward)});
  return output;
}

Tensor Graph::unary(const char* kind, const Tensor& a, const std::function<double(double)>& f,
                    const std::function<double(double, double)>& df) {
  Tensor y = Tensor::zeros(a.shape());
  auto xs = a.data();
  auto ys = y.data();
  for (int64_t i = 0; i < a.size(); ++i) ys[i] = f(xs[i]);
  Tensor ac = a;  // keep handle for closure
  return make_op(kind, {a}, y, [ac, y, df]() mutable {
    if (!ac.needs_grad()) return;
    auto g = ac.grad();
    auto gy = y.grad();
    auto xs = ac.data();
    auto ys = y.data();
    for (int64_t i = 0; i < ac.size(); ++i) g[i] += df(xs[i], ys[i]) * gy[i];
  });
}

Tensor Graph::binary(const char* kind, const Tensor& a, const Tensor& b,
                     const std::function<double(double, double)>& f,
                     const std::function<double(double, double, double)>& dfa,
                     const std::function<double(double, double, double)>& dfb) {
  if (a.shape() == b.shape()) {
    Tensor y = Tensor::zeros(a.shape());
    auto as = a.data();
    auto bs = b.data();
    auto ys = y.data();
    for (int64_t i = 0; i < a.size(); ++i) ys[i] = f(as[i], bs[i]);
    Tensor ac = a, bc = b;
    return make_op(kind, {a, b}, y, [ac, bc, y, dfa, dfb]() mutable {
      auto gy = y.grad();
      auto as = ac.data();
      auto bs = bc.data();
      auto ys = y.data();
      if (ac.needs_grad()) {
        auto ga = ac.grad();
        for (int64_t i = 0; i < ac.size(); ++i) ga[i] += dfa(as[i], bs[i], ys[i]) * gy[i];
      }
      if (bc.needs_grad()) {
        auto gb = bc.grad();
        for (int64_t i = 0; i < bc.size(); ++i) gb[i] += dfb(as[i], bs[i], ys[i]) * gy[i];
      }
    });
  }
  Bcast plan = broadcast_plan(kind, a.shape(), b.shape());
  Tensor y = Tensor::zeros(plan.out);
  {
    auto as = a.data();
    auto bs = b.data();
    auto ys = y.data();
    bcast_for_each(plan, [&](int64_t i, int64_t oa, int64_t ob) { ys[i] = f(as[oa], bs[ob]); });
  }
  Tensor ac = a, bc = b;
  return make_op(kind, {a, b}, y, [ac, bc, y, plan, dfa, dfb]() mutable {
    auto gy = y.grad();
    auto as = ac.data();
    auto bs = bc.data();
    auto ys = y.data();
    bool na = ac.needs_grad(), nb = bc.needs_grad();
    auto ga = na ? ac.grad() : std::span<double>{};
    auto gb = nb ? bc.grad() : std::span<double>{};
    bcast_for_each(plan, [&](int64_t i, int64_t oa, int64_t ob) {
      if (na) ga[oa] += dfa(as[oa], bs[ob], ys[i]) * gy[i];
      if (nb) gb[ob] += dfb(as[oa], bs[ob], ys[i]) * gy[i];
    });
  });
}

// --- matrix ops ---

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0))
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  int p = a.extent(0), q = a.extent(1), r = b.extent(1);
  Tensor y = Tensor::zeros({p, r});
  {
    auto as = a.data();
    auto bs = b.data();
    auto ys = y.data();
    for (int i = 0; i < p; ++i)
      for (int k = 0; k < q; ++k) {
        double av = as[static_cast<size_t>(i) * q + k];
        if (av == 0.0) continue;
        const double* brow = &bs[static_cast<size_t>(k) * r];
        double* yrow = &ys[static_cast<size_t>(i) * r];
        for (int j = 0; j < r; ++j) yrow[j] += av * brow[j];
      }
  }
  Tensor ac = a, bc = b;
  return make_op("matmul", {a, b}, y, [ac, bc, y, p, q, r]() mutable {
    auto gy = y.grad();
    auto as = ac.data();
    auto bs = bc.data();
    if (ac.needs_grad()) {  // dA = dC . B^T
      auto ga = ac.grad();
      for (int i = 0; i < p; ++i)
        for (int k = 0; k < q; ++k) {
          const double* gyrow = &gy[static_cast<size_t>(i) * r];
          const double* brow = &bs[static_cast<size_t>(k) * r];
          double acc = 0.0;
          for (int j = 0; j < r; ++j) acc += gyrow[j] * brow[j];
          ga[static_cast<size_t>(i) * q + k] += acc;
        }
    }
    if (bc.needs_grad()) {  // dB = A^T . dC
      auto gb = bc.grad();
      for (int k = 0; k < q; ++k)
        for (int i = 0; i < p; ++i) {
          double av = as[static_cast<size_t>(i) * q + k];
          if (av == 0.0) continue;
          const double* gyrow = &gy[static_cast<size_t>(i) * r];
          double* gbrow = &gb[static_cast<size_t>(k) * r];
          for (int j = 0; j < r; ++j) gbrow[j] += av * gyrow[j];
        }
    }
  });
}

Tensor Graph::transpose(const Tensor& a) {
  if (a.rank() != 2)
    throw std::invalid_argument("transpose needs rank 2, got " + shape_str(a.shape()));
  int m = a.extent(0), n = a.extent(1);
  Tensor y = Tensor::zeros({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) y.at2(j, i) = a.at2(i, j);
  Tensor ac = a;
  return make_op("transpose", {a}, y, [ac, y, m, n]() mutable {
    if (!ac.needs_grad()) return;
    auto ga = ac.grad();
    auto gy = y.grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ga[static_cast<size_t>(i) * n + j] += gy[static_cast<size_t>(j) * m + i];
  });
}

Tensor Graph::concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  int m = parts[0].extent(0);
  int total = 0;
  for (const auto& t : parts) {
    if (t.rank() != 2 || t.extent(0) != m)
      throw std::invalid_argument("concat_cols: row mismatch " + shape_str(parts[0].shape()) +
                                  " vs " + shape_str(t.shape()));
    total += t.extent(1);
  }
  Tensor y = Tensor::zeros({m, total});
  int off = 0;
  for (const auto& t : parts) {
    int n = t.extent(1);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) y.at2(i, off + j) = t.at2(i, j);
    off += n;
  }
  std::vector<Tensor> inputs = parts;
  return make_op("concat_cols", inputs, y, [inputs, y, m, total]() mutable {
    auto gy = y.grad();
    int off = 0;
    for (auto& t : inputs) {
      int n = t.extent(1);
      if (t.needs_grad()) {
        auto gt = t.grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            gt[static_cast<size_t>(i) * n + j] += gy[static_cast<size_t>(i) * total + off + j];
      }
      off += n;
    }
  });
}

Tensor Graph::concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  int n = parts[0].extent(1);
  int total = 0;
  for (const auto& t : parts) {
    if (t.rank() != 2 || t.extent(1) != n)
      throw std::invalid_argument("concat_rows: column mismatch " + shape_str(parts[0].shape()) +
                                  " vs " + shape_str(t.shape()));
    total += t.extent(0);
  }
  Tensor y = Tensor::zeros({total, n});
  int off = 0;
  for (const auto& t : parts) {
    int m = t.extent(0);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) y.at2(off + i, j) = t.at2(i, j);
    off += m;
  }
  std::vector<Tensor> inputs = parts;
  return make_op("concat_rows", inputs, y, [inputs, y, n]() mutable {
    auto gy = y.grad();
    int off = 0;
    for (auto& t : inputs) {
      int m = t.extent(0);
      if (t.needs_grad()) {
        auto gt = t.grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            gt[static_cast<size_t>(i) * n + j] += gy[static_cast<size_t>(off + i) * n + j];
      }
      off += m;
    }
  });
}

Tensor Graph::rows(const Tensor& a, int r0, int r1) {
  if (a.rank() != 2) throw std::invalid_argument("rows needs rank 2, got " + shape_str(a.shape()));
  if (r0 < 0 || r1 > a.extent(0) || r0 >= r1)
    throw std::invalid_argument("rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) +
                                ") for " + shape_str(a.shape()));
  int n = a.extent(1);
  Tensor y = Tensor::zeros({r1 - r0, n});
  auto as = a.data();
  auto ys = y.data();
  std::copy(as.begin() + static_cast<size_t>(r0) * n, as.begin() + static_cast<size_t>(r1) * n,
            ys.begin());
  Tensor ac = a;
  return make_op("rows", {a}, y, [ac, y, r0, n]() mutable {
    if (!ac.needs_grad()) return;
    auto ga = ac.grad();
    auto gy = y.grad();
    for (int64_t i = 0; i < y.size(); ++i) ga[static_cast<size_t>(r0) * n + i] += gy[i];
  });
}

Tensor Graph::reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                shape_str(shape));
  Tensor y = Tensor::zeros(shape);
  auto as = a.data();
  std::copy(as.begin(), as.end(), y.data().begin());
  Tensor ac = a;
  return make_op("reshape", {a}, y, [ac, y]() mutable {
    if (!ac.needs_grad()) return;
    auto ga = ac.grad();
    auto gy = y.grad();
    for (int64_t i = 0; i < ac.size(); ++i) ga[i] += gy[i];
  });
}

// --- elementwise ---

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  return binary("add", a, b, [](double x, double y) { return x + y; },
                [](double, double, double) { return 1.0; },
                [](double, double, double) { return 1.0; });
}

Tensor Graph::sub(const Tensor& a, const Tensor& b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; },
                [](double, double, double) { return 1.0; },
                [](double, double, double) { return -1.0; });
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; },
                [](double, double y, double) { return y; },
                [](double x, double, double) { return x; });
}

Tensor Graph::div(const Tensor& a, const Tensor& b) {
  return binary("div", a, b, [](double x, double y) { return x / y; },
                [](double, double y, double) { return 1.0 / y; },
                [](double, double y, double out) { return -out / y; });
}

Tensor Graph::scale(const Tensor& a, double c) {
  return unary("scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor Graph::add_scalar(const Tensor& a, double c) {
  return unary("add_scalar", a, [c](double x) { return x + c; },
               [](double, double) { return 1.0; });
}

Tensor Graph::neg(const Tensor& a) {
  return unary("neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor Graph::square(const Tensor& a) {
  return unary("square", a, [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Tensor Graph::tanh(const Tensor& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor Graph::sigmoid(const Tensor& a) {
  return unary("sigmoid", a,
               [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                            : std::exp(x) / (1.0 + std::exp(x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor Graph::relu(const Tensor& a) {
  return unary("relu", a, [](double x) { return x > 0 ? x : 0.0; },
               [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor Graph::exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor Graph::log(const Tensor& a) {
  return unary("log", a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Tensor Graph::clamp_min(const Tensor& a, double lo) {
  return unary("clamp_min", a, [lo](double x) { return x > lo ? x : lo; },
               [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

// --- softmax / loss ---

Tensor Graph::softmax_rows(const Tensor& a) {
  int n = a.extent(a.rank() - 1);
  if (n < 1) throw std::invalid_argument("softmax_rows: empty last axis");
  int64_t nrows = a.size() / n;
  Tensor y = Tensor::zeros(a.shape());
  auto xs = a.data();
  auto ys = y.data();
  for (int64_t r = 0; r < nrows; ++r) {
    const double* x = &xs[r * n];
    double* out = &ys[r * n];
    double mx = x[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double denom = 0.0;
    for (int j = 0; j < n; ++j) {
      out[j] = std::exp(x[j] - mx);
      denom += out[j];
    }
    for (int j = 0; j < n; ++j) out[j] /= denom;
  }
  Tensor ac = a;
  return make_op("softmax_rows", {a}, y, [ac, y, n, nrows]() mutable {
    if (!ac.needs_grad()) return;
    auto ga = ac.grad();
    auto gy = y.grad();
    auto ys = y.data();
    for (int64_t r = 0; r < nrows; ++r) {
      const double* yr = &ys[r * n];
      const double* gr = &gy[r * n];
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += yr[j] * gr[j];
      for (int j = 0; j < n; ++j) ga[r * n + j] += yr[j] * (gr[j] - dot);
    }
  });
}

Tensor Graph::cross_entropy(const Tensor& logits, int label) {
  if (logits.rank() != 2 || logits.extent(0) != 1)
    throw std::invalid_argument("cross_entropy expects 1 x n logits, got " +
                                shape_str(logits.shape()));
  int n = logits.extent(1);
  if (label < 0 || label >= n)
    throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                " out of range [0," + std::to_string(n) + ")");
  auto xs = logits.data();
  double mx = xs[0];
  for (int j = 1; j < n; ++j) mx = std::max(mx, xs[j]);
  double denom = 0.0;
  for (int j = 0; j < n; ++j) denom += std::exp(xs[j] - mx);
  double lse = mx + std::log(denom);
  Tensor y = Tensor::scalar(lse - xs[label]);
  Tensor lc = logits;
  return make_op("cross_entropy", {logits}, y, [lc, y, label, n, mx, denom]() mutable {
    if (!lc.needs_grad()) return;
    auto g = lc.grad();
    auto xs = lc.data();
    double gy = y.grad()[0];
    for (int j = 0; j < n; ++j) {
      double p = std::exp(xs[j] - mx) / denom;
      g[j] += (p - (j == label ? 1.0 : 0.0)) * gy;
    }
  });
}

// --- reductions ---

Tensor Graph::sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  Tensor y = Tensor::scalar(acc);
  Tensor ac = a;
  return make_op("sum", {a}, y, [ac, y]() mutable {
    if (!ac.needs_grad()) return;
    auto g = ac.grad();
    double gy = y.grad()[0];
    for (int64_t i = 0; i < ac.size(); ++i) g[i] += gy;
  });
}

Tensor Graph::mean(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  double inv = 1.0 / static_cast<double>(a.size());
  Tensor y = Tensor::scalar(acc * inv);
  Tensor ac = a;
  return make_op("mean", {a}, y, [ac, y, inv]() mutable {
    if (!ac.needs_grad()) return;
    auto g = ac.grad();
    double gy = y.grad()[0] * inv;
    for (int64_t i = 0; i < ac.size(); ++i) g[i] += gy;
  });
}

Tensor Graph::max(const Tensor& a) {
  auto xs = a.data();
  int64_t arg = 0;
  for (int64_t i = 1; i < a.size(); ++i)
    if (xs[i] > xs[arg]) arg = i;  // strict ">" keeps the first maximal element
  Tensor y = Tensor::scalar(xs[arg]);
  Tensor ac = a;
  return make_op("max", {a}, y, [ac, y, arg]() mutable {
    if (!ac.needs_grad()) return;
    ac.grad()[arg] += y.grad()[0];
  });
}

namespace {
void check_axis2(const char* kind, const Tensor& a, int axis) {
  if (a.rank() != 2)
    throw std::invalid_argument(std::string(kind) + " needs rank 2, got " + shape_str(a.shape()));
  if (axis != 0 && axis != 1)
    throw std::invalid_argument(std::string(kind) + ": invalid axis " + std::to_string(axis));
}
}  // namespace

Tensor Graph::sum_axis(const Tensor& a, int axis) {
  check_axis2("sum_axis", a, axis);
  int m = a.extent(0), n = a.extent(1);
  Tensor y = axis == 0 ? Tensor::zeros({1, n}) : Tensor::zeros({m, 1});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      y.data()[axis == 0 ? j : i] += a.at2(i, j);
  Tensor ac = a;
  return make_op("sum_axis", {a}, y, [ac, y, axis, m, n]() mutable {
    if (!ac.needs_grad()) return;
    auto g = ac.grad();
    auto gy = y.grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) g[static_cast<size_t>(i) * n + j] += gy[axis == 0 ? j : i];
  });
}

Tensor Graph::mean_axis(const Tensor& a, int axis) {
  check_axis2("mean_axis", a, axis);
  Tensor s = sum_axis(a, axis);
  return scale(s, 1.0 / a.extent(axis));
}

Tensor Graph::max_axis(const Tensor& a, int axis) {
  check_axis2("max_axis", a, axis);
  int m = a.extent(0), n = a.extent(1);
  int slices = axis == 0 ? n : m;
  std::vector<int64_t> args(slices);
  Tensor y = axis == 0 ? Tensor::zeros({1, n}) : Tensor::zeros({m, 1});
  if (axis == 0) {
    for (int j = 0; j < n; ++j) {
      int arg = 0;
      for (int i = 1; i < m; ++i)
        if (a.at2(i, j) > a.at2(arg, j)) arg = i;
      args[j] = static_cast<int64_t>(arg) * n + j;
      y.data()[j] = a.at2(arg, j);
    }
  } else {
    for (int i = 0; i < m; ++i) {
      int arg = 0;
      for (int j = 1; j < n; ++j)
        if (a.at2(i, j) > a.at2(i, arg)) arg = j;
      args[i] = static_cast<int64_t>(i) * n + arg;
      y.data()[i] = a.at2(i, arg);
    }
  }
  Tensor ac = a;
  return make_op("max_axis", {a}, y, [ac, y, args]() mutable {
    if (!ac.needs_grad()) return;
    auto g = ac.grad();
    auto gy = y.grad();
    for (size_t s = 0; s < args.size(); ++s) g[args[s]] += gy[s];
  });
}

// --- backward ---

void Graph::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward requires a scalar loss, got " + shape_str(loss.shape()));
  for (auto& node : nodes_) node.output.zero_grad();
  Tensor seed = loss;
  seed.grad()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output.impl()->grad.empty()) continue;  // nothing flowed into this node
    it->backward_fn();
  }
}

}  // namespace ampattn
