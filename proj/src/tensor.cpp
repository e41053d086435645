#include "flood/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "flood/errors.hpp"
#include "flood/simd/kernels.hpp"
#include "flood/random.hpp"

namespace flood::nn {

namespace {

std::string shape_str(std::size_t r, std::size_t c) {
  return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

template <typename T>
T sigmoid_of(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
  if (v.id >= count_) throw TapeError("variable does not belong to this tape");
  return nodes_[v.id];
}

template <typename T>
void Tape<T>::require_open() const {
  if (consumed_) throw TapeError("tape reused after backward; call reset() first");
}

template <typename T>
typename Tape<T>::Node& Tape<T>::push(Op op, std::size_t rows, std::size_t cols, bool needs_grad) {
  require_open();
  if (count_ == nodes_.size()) nodes_.emplace_back();
  Node& n = nodes_[count_++];
  n.op = op;
  n.a = n.b = n.offset = 0;
  n.rows = rows;
  n.cols = cols;
  n.aux.clear();
  n.owned.assign(rows * cols, T(0));
  n.data = n.owned.data();
  n.grad.clear();
  n.param_grad = nullptr;
  n.needs_grad = needs_grad;
  return n;
}

template <typename T>
std::span<const T> Tape<T>::value(Var v) const {
  const Node& n = node(v);
  return {n.data, n.rows * n.cols};
}

template <typename T>
std::span<const T> Tape<T>::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.size() != n.rows * n.cols) throw TapeError("no gradient recorded for this variable");
  return n.grad;
}

template <typename T>
void Tape<T>::reset() {
  count_ = 0;
  consumed_ = false;
}

template <typename T>
Var Tape<T>::leaf(std::size_t rows, std::size_t cols, std::span<const T> data, bool requires_grad) {
  if (data.size() != rows * cols)
    throw DimensionError("leaf data has " + std::to_string(data.size()) + " values for shape " + shape_str(rows, cols));
  Node& n = push(Op::Leaf, rows, cols, requires_grad);
  std::copy(data.begin(), data.end(), n.owned.begin());
  return {count_ - 1};
}

template <typename T>
Var Tape<T>::zeros(std::size_t rows, std::size_t cols) {
  push(Op::Leaf, rows, cols, false);
  return {count_ - 1};
}

template <typename T>
Var Tape<T>::param(const ParamRef<T>& p) {
  Node& n = push(Op::Param, p.rows, p.cols, p.grad != nullptr);
  n.owned.clear();
  n.data = p.values;
  n.param_grad = p.grad;
  return {count_ - 1};
}

template <typename T>
Var Tape<T>::matmul(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.cols != nb.rows)
    throw DimensionError("matmul shape mismatch " + shape_str(na.rows, na.cols) + " x " + shape_str(nb.rows, nb.cols));
  const std::size_t m = na.rows, k = na.cols, n = nb.cols;
  const bool ng = na.needs_grad || nb.needs_grad;
  const T* pa = na.data;
  const T* pb = nb.data;
  Node& out = push(Op::MatMul, m, n, ng);
  out.a = a.id;
  out.b = b.id;
  simd::active<T>().gemm_nn(m, n, k, pa, k, pb, n, out.owned.data(), n);
  return {count_ - 1};
}

template <typename T>
Var Tape<T>::add(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.rows != nb.rows || na.cols != nb.cols)
    throw DimensionError("add shape mismatch " + shape_str(na.rows, na.cols) + " vs " + shape_str(nb.rows, nb.cols));
  const T* pa = na.data;
  const T* pb = nb.data;
  const bool ng = na.needs_grad || nb.needs_grad;
  Node& out = push(Op::Add, na.rows, na.cols, ng);
  out.a = a.id;
  out.b = b.id;
  for (std::size_t i = 0; i < out.owned.size(); ++i) out.owned[i] = pa[i] + pb[i];
  return {count_ - 1};
}

template <typename T>
Var Tape<T>::add_row(Var a, Var row) {
  const Node& na = node(a);
  const Node& nr = node(row);
  if (nr.rows != 1 || nr.cols != na.cols)
    throw DimensionError("add_row shape mismatch " + shape_str(na.rows, na.cols) + " vs " + shape_str(nr.rows, nr.cols));
  const T* pa = na.data;
  const T* pr = nr.data;
  const bool ng = na.needs_grad || nr.needs_grad;
  const std::size_t rows = na.rows, cols = na.cols;
  Node& out = push(Op::AddRow, rows, cols, ng);
  out.a = a.id;
  out.b = row.id;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out.owned[r * cols + c] = pa[r * cols + c] + pr[c];
  return {count_ - 1};
}

template <typename T>
Var Tape<T>::sub(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.rows != nb.rows || na.cols != nb.cols)
    throw DimensionError("sub shape mismatch " + shape_str(na.rows, na.cols) + " vs " + shape_str(nb.rows, nb.cols));
  const T* pa = na.data;
  const T* pb = nb.data;
  const bool ng = na.needs_grad || nb.needs_grad;
  Node& out = push(Op::Sub, na.rows, na.cols, ng);
  out.a = a.id;
  out.b = b.id;
  for (std::size_t i = 0; i < out.owned.size(); ++i) out.owned[i] = pa[i] - pb[i];
  return {count_ - 1};
}

template <typename T>
Var Tape<T>::mul(Var a, Var b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.rows != nb.rows || na.cols != nb.cols)
    throw DimensionError("mul shape mismatch " + shape_str(na.rows, na.cols) + " vs " + shape_str(nb.rows, nb.cols));
  const T* pa = na.data;
  const T* pb = nb.data;
  const bool ng = na.needs_grad || nb.needs_grad;
  Node& out = push(Op::Mul, na.rows, na.cols, ng);
  out.a = a.id;
  out.b = b.id;
  for (std::size_t i = 0; i < out.owned.size(); ++i) out.owned[i] = pa[i] * pb[i];
  return {count_ - 1};
}

template <typename T>
Var Tape<T>::relu(Var a) {
  const Node& na = node(a);
  const T* pa = na.data;
  Node& out = push(Op::Relu, na.rows, na.cols, na.needs_grad);
  out.a = a.id;
  simd::active<T>().relu(out.owned.size(), pa, out.owned.data());
  return {count_ - 1};
}

template <typename T>
Var Tape<T>::tanh(Var a) {
  const Node& na = node(a);
  const T* pa = na.data;
  Node& out = push(Op::Tanh, na.rows, na.cols, na.needs_grad);
  out.a = a.id;
  for (std::size_t i = 0; i < out.owned.size(); ++i) out.owned[i] = std::tanh(pa[i]);
  return {count_ - 1};
}

template <typename T>
Var Tape<T>::sigmoid(Var a) {
  const Node& na = node(a);
  const T* pa = na.data;
  Node& out = push(Op::Sigmoid, na.rows, na.cols, na.needs_grad);
  out.a = a.id;
  for (std::size_t i = 0; i < out.owned.size(); ++i) out.owned[i] = sigmoid_of(pa[i]);
  return {count_ - 1};
}

template <typename T>
Var Tape<T>::exp(Var a) {
  const Node& na = node(a);
  const T* pa = na.data;
  Node& out = push(Op::Exp, na.rows, na.cols, na.needs_grad);
  out.a = a.id;
  for (std::size_t i = 0; i < out.owned.size(); ++i) out.owned[i] = std::exp(pa[i]);
  return {count_ - 1};
}

template <typename T>
Var Tape<T>::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat of zero parts");
  const std::size_t rows = node(parts[0]).rows;
  std::size_t cols = 0;
  bool ng = false;
  for (Var p : parts) {
    const Node& np = node(p);
    if (np.rows != rows)
      throw DimensionError("concat row mismatch " + shape_str(rows, node(parts[0]).cols) + " vs " +
                           shape_str(np.rows, np.cols));
    cols += np.cols;
    ng = ng || np.needs_grad;
  }
  const std::size_t id = count_;
  push(Op::Concat, rows, cols, ng);
  Node& out = nodes_[id];
  std::size_t off = 0;
  for (Var p : parts) {
    out.aux.push_back(p.id);
    const Node& np = nodes_[p.id];
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(np.data + r * np.cols, np.cols, out.owned.data() + r * cols + off);
    off += np.cols;
  }
  return {id};
}

template <typename T>
Var Tape<T>::slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Node& na = node(a);
  if (begin + count > na.cols || count == 0)
    throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_str(na.rows, na.cols));
  const T* pa = na.data;
  const std::size_t rows = na.rows, in_cols = na.cols;
  Node& out = push(Op::Slice, rows, count, na.needs_grad);
  out.a = a.id;
  out.offset = begin;
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(pa + r * in_cols + begin, count, out.owned.data() + r * count);
  return {count_ - 1};
}

template <typename T>
Var Tape<T>::gather_cols(Var a, std::vector<std::size_t> index) {
  const Node& na = node(a);
  for (std::size_t k : index)
    if (k >= na.cols) throw DimensionError("gather index " + std::to_string(k) + " out of range for " + shape_str(na.rows, na.cols));
  const T* pa = na.data;
  const std::size_t rows = na.rows, in_cols = na.cols, cols = index.size();
  Node& out = push(Op::Gather, rows, cols, na.needs_grad);
  out.a = a.id;
  out.aux = std::move(index);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < cols; ++k) out.owned[r * cols + k] = pa[r * in_cols + out.aux[k]];
  return {count_ - 1};
}

template <typename T>
Var Tape<T>::sum(Var a) {
  const Node& na = node(a);
  double s = 0.0;
  for (std::size_t i = 0; i < na.rows * na.cols; ++i) s += na.data[i];
  Node& out = push(Op::Sum, 1, 1, na.needs_grad);
  out.a = a.id;
  out.owned[0] = static_cast<T>(s);
  return {count_ - 1};
}

template <typename T>
Var Tape<T>::mean(Var a) {
  const Node& na = node(a);
  const std::size_t n = na.rows * na.cols;
  if (n == 0) throw DimensionError("mean of empty matrix");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += na.data[i];
  Node& out = push(Op::Mean, 1, 1, na.needs_grad);
  out.a = a.id;
  out.owned[0] = static_cast<T>(s / static_cast<double>(n));
  return {count_ - 1};
}

template <typename T>
Var Tape<T>::mse(Var pred, Var target) {
  const Node& np = node(pred);
  const Node& nt = node(target);
  if (np.rows != nt.rows || np.cols != nt.cols)
    throw DimensionError("mse shape mismatch " + shape_str(np.rows, np.cols) + " vs " + shape_str(nt.rows, nt.cols));
  const std::size_t n = np.rows * np.cols;
  if (n == 0) throw DimensionError("mse of empty matrix");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(np.data[i]) - static_cast<double>(nt.data[i]);
    s += d * d;
  }
  const bool ng = np.needs_grad || nt.needs_grad;
  Node& out = push(Op::Mse, 1, 1, ng);
  out.a = pred.id;
  out.b = target.id;
  out.owned[0] = static_cast<T>(s / static_cast<double>(n));
  return {count_ - 1};
}

template <typename T>
void Tape<T>::backward(Var loss) {
  require_open();
  const Node& nl = node(loss);
  if (nl.rows * nl.cols != 1)
    throw TapeError("backward needs a scalar loss, got " + shape_str(nl.rows, nl.cols));
  consumed_ = true;
  for (std::size_t i = 0; i <= loss.id; ++i) {
    Node& n = nodes_[i];
    if (n.needs_grad) n.grad.assign(n.rows * n.cols, T(0));
  }
  if (!nodes_[loss.id].needs_grad) return;
  nodes_[loss.id].grad[0] = T(1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.needs_grad) backward_node(n);
  }
}

template <typename T>
void Tape<T>::backward_node(Node& n) {
  const auto& k = simd::active<T>();
  const std::size_t size = n.rows * n.cols;
  const T* g = n.grad.data();
  auto want = [&](std::size_t id) -> T* { return nodes_[id].needs_grad ? nodes_[id].grad.data() : nullptr; };

  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::Param:
      if (n.param_grad)
        for (std::size_t i = 0; i < size; ++i) n.param_grad[i] += static_cast<double>(g[i]);
      break;
    case Op::MatMul: {
      const Node& A = nodes_[n.a];
      const Node& B = nodes_[n.b];
      const std::size_t m = A.rows, kk = A.cols, nn = B.cols;
      if (T* ga = want(n.a)) k.gemm_nt(m, kk, nn, g, nn, B.data, nn, ga, kk);
      if (T* gb = want(n.b)) k.gemm_tn(kk, nn, m, A.data, kk, g, nn, gb, nn);
      break;
    }
    case Op::Add:
      if (T* ga = want(n.a)) k.axpy(size, T(1), g, ga);
      if (T* gb = want(n.b)) k.axpy(size, T(1), g, gb);
      break;
    case Op::AddRow:
      if (T* ga = want(n.a)) k.axpy(size, T(1), g, ga);
      if (T* gb = want(n.b))
        for (std::size_t r = 0; r < n.rows; ++r) k.axpy(n.cols, T(1), g + r * n.cols, gb);
      break;
    case Op::Sub:
      if (T* ga = want(n.a)) k.axpy(size, T(1), g, ga);
      if (T* gb = want(n.b)) k.axpy(size, T(-1), g, gb);
      break;
    case Op::Mul:
      if (T* ga = want(n.a)) k.mul_acc(size, g, nodes_[n.b].data, ga);
      if (T* gb = want(n.b)) k.mul_acc(size, g, nodes_[n.a].data, gb);
      break;
    case Op::Relu:
      if (T* ga = want(n.a)) k.relu_backward(size, nodes_[n.a].data, g, ga);
      break;
    case Op::Tanh:
      if (T* ga = want(n.a))
        for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] * (T(1) - n.data[i] * n.data[i]);
      break;
    case Op::Sigmoid:
      if (T* ga = want(n.a))
        for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] * n.data[i] * (T(1) - n.data[i]);
      break;
    case Op::Exp:
      if (T* ga = want(n.a)) k.mul_acc(size, g, n.data, ga);
      break;
    case Op::Concat: {
      std::size_t off = 0;
      for (std::size_t id : n.aux) {
        Node& p = nodes_[id];
        if (p.needs_grad)
          for (std::size_t r = 0; r < n.rows; ++r) k.axpy(p.cols, T(1), g + r * n.cols + off, p.grad.data() + r * p.cols);
        off += p.cols;
      }
      break;
    }
    case Op::Slice:
      if (T* ga = want(n.a)) {
        const std::size_t in_cols = nodes_[n.a].cols;
        for (std::size_t r = 0; r < n.rows; ++r) k.axpy(n.cols, T(1), g + r * n.cols, ga + r * in_cols + n.offset);
      }
      break;
    case Op::Gather:
      if (T* ga = want(n.a)) {
        const std::size_t in_cols = nodes_[n.a].cols;
        for (std::size_t r = 0; r < n.rows; ++r)
          for (std::size_t c = 0; c < n.cols; ++c) ga[r * in_cols + n.aux[c]] += g[r * n.cols + c];
      }
      break;
    case Op::Sum:
      if (T* ga = want(n.a)) {
        const std::size_t m = nodes_[n.a].rows * nodes_[n.a].cols;
        for (std::size_t i = 0; i < m; ++i) ga[i] += g[0];
      }
      break;
    case Op::Mean:
      if (T* ga = want(n.a)) {
        const std::size_t m = nodes_[n.a].rows * nodes_[n.a].cols;
        const T s = g[0] / static_cast<T>(m);
        for (std::size_t i = 0; i < m; ++i) ga[i] += s;
      }
      break;
    case Op::Mse: {
      const Node& P = nodes_[n.a];
      const Node& Q = nodes_[n.b];
      const std::size_t m = P.rows * P.cols;
      const T s = T(2) * g[0] / static_cast<T>(m);
      T* gp = want(n.a);
      T* gq = want(n.b);
      for (std::size_t i = 0; i < m; ++i) {
        const T d = s * (P.data[i] - Q.data[i]);
        if (gp) gp[i] += d;
        if (gq) gq[i] -= d;
      }
      break;
    }
  }
}

template class Tape<float>;
template class Tape<double>;

// ---------------------------------------------------------------------------

std::size_t ParamStore::add(std::string name, std::size_t rows, std::size_t cols, std::size_t fan_in) {
  if (rows == 0 || cols == 0) throw DimensionError("parameter '" + name + "' has an empty shape");
  if (find(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  info_.push_back({std::move(name), rows, cols, std::max<std::size_t>(fan_in, 1), std::nullopt});
  values_.emplace_back(rows * cols, 0.0f);
  grads_.emplace_back(rows * cols, 0.0);
  m_.emplace_back(rows * cols, 0.0);
  v_.emplace_back(rows * cols, 0.0);
  return info_.size() - 1;
}

std::size_t ParamStore::add_constant(std::string name, std::size_t rows, std::size_t cols, double value) {
  const std::size_t id = add(std::move(name), rows, cols, 1);
  info_[id].constant_init = value;
  std::fill(values_[id].begin(), values_[id].end(), static_cast<float>(value));
  return id;
}

void ParamStore::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t p = 0; p < info_.size(); ++p) {
    auto& vals = values_[p];
    if (info_[p].constant_init) {
      std::fill(vals.begin(), vals.end(), static_cast<float>(*info_[p].constant_init));
      continue;
    }
    const double bound = std::sqrt(1.0 / static_cast<double>(info_[p].fan_in));
    for (float& x : vals) x = static_cast<float>((2.0 * uniform01(rng) - 1.0) * bound);
  }
  zero_grads();
  reset_optimizer();
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& i : info_) n += i.size();
  return n;
}

std::optional<std::size_t> ParamStore::find(const std::string& name) const {
  for (std::size_t p = 0; p < info_.size(); ++p)
    if (info_[p].name == name) return p;
  return std::nullopt;
}

ParamSet<float> ParamStore::bind() {
  ParamSet<float> set;
  set.reserve(info_.size());
  for (std::size_t p = 0; p < info_.size(); ++p)
    set.push_back({values_[p].data(), grads_[p].data(), info_[p].rows, info_[p].cols});
  return set;
}

ParamSet<float> ParamStore::bind_frozen() const {
  ParamSet<float> set;
  set.reserve(info_.size());
  for (std::size_t p = 0; p < info_.size(); ++p)
    set.push_back({values_[p].data(), nullptr, info_[p].rows, info_[p].cols});
  return set;
}

void ParamStore::zero_grads() {
  for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0);
}

void ParamStore::adam_step(double lr, const AdamConfig& cfg) {
  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t p = 0; p < info_.size(); ++p) {
    auto& w = values_[p];
    const auto& g = grads_[p];
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] = static_cast<float>(static_cast<double>(w[i]) - lr * mhat / (std::sqrt(vhat) + cfg.epsilon));
    }
  }
}

void ParamStore::reset_optimizer() {
  for (auto& m : m_) std::fill(m.begin(), m.end(), 0.0);
  for (auto& v : v_) std::fill(v.begin(), v.end(), 0.0);
  step_ = 0;
}

void ParamStore::restore_values(const std::vector<std::vector<float>>& v) {
  if (v.size() != values_.size()) throw DimensionError("parameter snapshot has the wrong array count");
  for (std::size_t p = 0; p < v.size(); ++p) {
    if (v[p].size() != values_[p].size()) throw DimensionError("parameter snapshot shape mismatch for '" + info_[p].name + "'");
    values_[p] = v[p];
  }
}

std::vector<io::Array> ParamStore::to_arrays() const {
  std::vector<io::Array> out;
  out.reserve(info_.size());
  for (std::size_t p = 0; p < info_.size(); ++p)
    out.push_back(io::Array::from_f32("param/" + info_[p].name, {info_[p].rows, info_[p].cols}, values_[p]));
  return out;
}

void ParamStore::load_arrays(const io::Container& c) {
  for (std::size_t p = 0; p < info_.size(); ++p) {
    const io::Array& a = c.at("param/" + info_[p].name);
    if (a.shape.size() != 2 || a.shape[0] != info_[p].rows || a.shape[1] != info_[p].cols)
      throw FormatError("checkpoint shape mismatch for parameter '" + info_[p].name + "'");
    if (a.dtype != io::DType::F32) throw FormatError("checkpoint parameter '" + info_[p].name + "' is not f32");
    values_[p] = a.f32;
  }
  zero_grads();
  reset_optimizer();
}

// ---------------------------------------------------------------------------

template <typename T>
ParamBuffer<T>::ParamBuffer(const ParamStore& store) {
  for (std::size_t p = 0; p < store.size(); ++p) {
    const auto src = store.values(p);
    values.emplace_back(src.begin(), src.end());
    grads.emplace_back(src.size(), 0.0);
    shapes_.emplace_back(store.info(p).rows, store.info(p).cols);
  }
}

template <typename T>
ParamSet<T> ParamBuffer<T>::bind() {
  ParamSet<T> set;
  for (std::size_t p = 0; p < values.size(); ++p)
    set.push_back({values[p].data(), grads[p].data(), shapes_[p].first, shapes_[p].second});
  return set;
}

template <typename T>
void ParamBuffer<T>::zero_grads() {
  for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0);
}

template class ParamBuffer<float>;
template class ParamBuffer<double>;

}  // namespace flood::nn
