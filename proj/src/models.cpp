#include "flood/models.hpp"

#include <array>
#include <stdexcept>

#include "flood/errors.hpp"
#include "flood/random.hpp"
#include "flood/simd/kernels.hpp"

namespace flood {

using nn::ParamSet;
using nn::Tape;
using nn::Var;

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Mlp: return "mlp";
    case ModelKind::Bnn: return "bnn";
    case ModelKind::Lstm: return "lstm";
    case ModelKind::PhyDnn: return "phydnn";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& s) {
  if (s == "mlp" || s == "dnn") return ModelKind::Mlp;
  if (s == "bnn") return ModelKind::Bnn;
  if (s == "lstm") return ModelKind::Lstm;
  if (s == "phydnn") return ModelKind::PhyDnn;
  throw std::invalid_argument("unknown architecture '" + s + "' (expected mlp|bnn|lstm|phydnn)");
}

ModelSpec ModelSpec::table2(ModelKind kind, std::size_t lookahead) {
  ModelSpec s;
  s.kind = kind;
  s.lookahead = lookahead;
  switch (kind) {
    case ModelKind::Mlp:
    case ModelKind::Bnn: s.depth = 10; s.width = 1000; break;
    case ModelKind::Lstm: s.depth = 5; s.width = 500; break;
    case ModelKind::PhyDnn: s.depth = 5; s.width = 1000; s.branch_depth = 5; break;
  }
  return s;
}

void ModelSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("ModelSpec: " + m); };
  if (lookahead == 0) fail("lookahead must be >= 1");
  if (width == 0) fail("width must be >= 1");
  if (kind == ModelKind::Lstm && depth == 0) fail("LSTM needs at least one layer");
  if (kind == ModelKind::PhyDnn) {
    if (depth == 0) fail("PhyDNN needs a trunk layer");
    if (branch_depth == 0) fail("PhyDNN needs branch layers");
    if (width % 4 != 0) fail("PhyDNN width must be divisible by 4");
  }
}

void ModelSpec::write(io::Manifest& m) const {
  m.set("arch", to_string(kind));
  m.set("depth", depth);
  m.set("width", width);
  m.set("branch_depth", branch_depth);
  m.set("lookahead", lookahead);
  if (kind == ModelKind::Bnn) m.set("bnn_sigma_init", bnn_sigma_init);
}

ModelSpec ModelSpec::read(const io::Manifest& m) {
  ModelSpec s;
  s.kind = parse_model_kind(m.get("arch"));
  s.depth = static_cast<std::size_t>(m.get_int("depth"));
  s.width = static_cast<std::size_t>(m.get_int("width"));
  s.branch_depth = static_cast<std::size_t>(m.get_int("branch_depth"));
  s.lookahead = static_cast<std::size_t>(m.get_int("lookahead"));
  if (m.has("bnn_sigma_init")) s.bnn_sigma_init = m.get_double("bnn_sigma_init");
  s.validate();
  return s;
}

namespace {

std::size_t dense_count(std::size_t in, std::size_t out) { return in * out + out; }

std::size_t stack_count(std::size_t in, std::size_t depth, std::size_t width, std::size_t out) {
  if (depth == 0) return dense_count(in, out);
  return dense_count(in, width) + (depth - 1) * dense_count(width, width) + dense_count(width, out);
}

}  // namespace

std::size_t parameter_count(const ModelSpec& s) {
  s.validate();
  const std::size_t in = s.input_len(), out = s.output_len(), H = s.width, l = s.lookahead;
  switch (s.kind) {
    case ModelKind::Mlp: return stack_count(in, s.depth, H, out);
    case ModelKind::Bnn: return 2 * stack_count(in, s.depth, H, out);
    case ModelKind::Lstm:
      return dense_count(in, H) + s.depth * (2 * H * 4 * H + 4 * H) + dense_count(H, kStateWidth);
    case ModelKind::PhyDnn: {
      const std::size_t q = H / 4;
      const std::size_t trunk = dense_count(in, H) + (s.depth - 1) * dense_count(H, H);
      const std::size_t branch = dense_count(H, q) + (s.branch_depth - 1) * dense_count(q, q) + dense_count(q, l);
      return trunk + 4 * branch + dense_count(H, l);
    }
  }
  return 0;
}

namespace {

constexpr std::array<const char*, 4> kBranchNames = {"n", "s", "e", "w"};

void declare_dense(nn::ParamStore& st, const std::string& prefix, std::size_t in, std::size_t out) {
  st.add(prefix + "/W", in, out, in);
  st.add(prefix + "/b", 1, out, in);
}

void declare_bnn_dense(nn::ParamStore& st, const std::string& prefix, std::size_t in, std::size_t out, double sigma) {
  st.add(prefix + "/mu_W", in, out, in);
  st.add_constant(prefix + "/sigma_W", in, out, sigma);
  st.add(prefix + "/mu_b", 1, out, in);
  st.add_constant(prefix + "/sigma_b", 1, out, sigma);
}

}  // namespace

void declare_parameters(const ModelSpec& s, nn::ParamStore& st) {
  s.validate();
  const std::size_t in = s.input_len(), out = s.output_len(), H = s.width, l = s.lookahead;
  switch (s.kind) {
    case ModelKind::Mlp:
    case ModelKind::Bnn: {
      const std::string root = to_string(s.kind);
      std::size_t prev = in;
      for (std::size_t i = 0; i < s.depth; ++i) {
        const std::string p = root + "/hidden" + std::to_string(i);
        if (s.kind == ModelKind::Mlp) declare_dense(st, p, prev, H);
        else declare_bnn_dense(st, p, prev, H, s.bnn_sigma_init);
        prev = H;
      }
      if (s.kind == ModelKind::Mlp) declare_dense(st, root + "/head", prev, out);
      else declare_bnn_dense(st, root + "/head", prev, out, s.bnn_sigma_init);
      break;
    }
    case ModelKind::Lstm:
      declare_dense(st, "lstm/embed", in, H);
      for (std::size_t i = 0; i < s.depth; ++i) {
        const std::string p = "lstm/layer" + std::to_string(i);
        st.add(p + "/Wx", H, 4 * H, H);
        st.add(p + "/Wh", H, 4 * H, H);
        st.add(p + "/b", 1, 4 * H, H);
      }
      declare_dense(st, "lstm/head", H, kStateWidth);
      break;
    case ModelKind::PhyDnn: {
      const std::size_t q = H / 4;
      for (std::size_t i = 0; i < s.depth; ++i)
        declare_dense(st, "phydnn/trunk" + std::to_string(i), i == 0 ? in : H, H);
      for (const char* b : kBranchNames) {
        const std::string p = std::string("phydnn/branch_") + b;
        for (std::size_t i = 0; i < s.branch_depth; ++i)
          declare_dense(st, p + "/layer" + std::to_string(i), i == 0 ? H : q, q);
        declare_dense(st, p + "/velocity", q, l);
      }
      declare_dense(st, "phydnn/depth", H, l);
      break;
    }
  }
}

namespace {

template <typename T>
struct Cursor {
  Tape<T>& tape;
  const ParamSet<T>& params;
  std::size_t next_id = 0;

  Var next() {
    if (next_id >= params.size()) throw DimensionError("parameter set is smaller than the architecture needs");
    return tape.param(params[next_id++]);
  }
  Var dense(Var x) {
    const Var w = next();
    const Var b = next();
    return tape.add_row(tape.matmul(x, w), b);
  }
  void finish() const {
    if (next_id != params.size()) throw DimensionError("parameter set is larger than the architecture needs");
  }
};

template <typename T>
void check_input(const Tape<T>& tape, const ModelSpec& spec, Var input) {
  if (tape.cols(input) != spec.input_len())
    throw DimensionError("input length " + std::to_string(tape.cols(input)) + " does not match expected " +
                         std::to_string(spec.input_len()));
}

template <typename T>
Var noise_like(Tape<T>& tape, std::size_t rows, std::size_t cols, std::mt19937_64& rng, std::vector<T>& buf) {
  buf.resize(rows * cols);
  for (T& x : buf) x = static_cast<T>(standard_normal(rng));
  return tape.leaf(rows, cols, buf);
}

}  // namespace

template <typename T>
Var forward_mlp(Tape<T>& tape, const ModelSpec& spec, const ParamSet<T>& params, Var input) {
  check_input(tape, spec, input);
  Cursor<T> cur{tape, params};
  Var x = input;
  for (std::size_t i = 0; i < spec.depth; ++i) x = tape.relu(cur.dense(x));
  x = cur.dense(x);
  cur.finish();
  return x;
}

template <typename T>
Var forward_bnn(Tape<T>& tape, const ModelSpec& spec, const ParamSet<T>& params, Var input, std::mt19937_64& rng) {
  check_input(tape, spec, input);
  Cursor<T> cur{tape, params};
  std::vector<T> buf;
  auto layer = [&](Var x) {
    const Var mu_w = cur.next(), sigma_w = cur.next(), mu_b = cur.next(), sigma_b = cur.next();
    const Var eta_w = noise_like(tape, tape.rows(mu_w), tape.cols(mu_w), rng, buf);
    const Var eta_b = noise_like(tape, 1, tape.cols(mu_b), rng, buf);
    const Var w = tape.add(mu_w, tape.mul(tape.exp(sigma_w), eta_w));
    const Var b = tape.add(mu_b, tape.mul(tape.exp(sigma_b), eta_b));
    return tape.add_row(tape.matmul(x, w), b);
  };
  Var x = input;
  for (std::size_t i = 0; i < spec.depth; ++i) x = tape.relu(layer(x));
  x = layer(x);
  cur.finish();
  return x;
}

template <typename T>
Var forward_lstm(Tape<T>& tape, const ModelSpec& spec, const ParamSet<T>& params, Var input) {
  check_input(tape, spec, input);
  const std::size_t H = spec.width;
  Cursor<T> cur{tape, params};
  const Var embed = cur.dense(input);

  struct Layer {
    Var wx, wh, b;
  };
  std::vector<Layer> layers;
  for (std::size_t i = 0; i < spec.depth; ++i) {
    const Var wx = cur.next(), wh = cur.next(), b = cur.next();
    layers.push_back({wx, wh, b});
  }
  const Var head_w = cur.next(), head_b = cur.next();
  cur.finish();

  // The embedding feeds layer 0 unchanged at every step; project it once.
  const Var embed_proj = tape.add_row(tape.matmul(embed, layers[0].wx), layers[0].b);

  std::vector<Var> h(spec.depth), c(spec.depth);
  std::vector<Var> blocks;
  for (std::size_t k = 0; k < spec.lookahead; ++k) {
    Var below = embed;
    for (std::size_t i = 0; i < spec.depth; ++i) {
      Var z = i == 0 ? embed_proj : tape.add_row(tape.matmul(below, layers[i].wx), layers[i].b);
      if (k > 0) z = tape.add(z, tape.matmul(h[i], layers[i].wh));
      const Var ig = tape.sigmoid(tape.slice_cols(z, 0, H));
      const Var fg = tape.sigmoid(tape.slice_cols(z, H, H));
      const Var gg = tape.tanh(tape.slice_cols(z, 2 * H, H));
      const Var og = tape.sigmoid(tape.slice_cols(z, 3 * H, H));
      c[i] = k > 0 ? tape.add(tape.mul(fg, c[i]), tape.mul(ig, gg)) : tape.mul(ig, gg);
      h[i] = tape.mul(og, tape.tanh(c[i]));
      below = h[i];
    }
    blocks.push_back(tape.add_row(tape.matmul(below, head_w), head_b));
  }
  return tape.concat_cols(blocks);
}

template <typename T>
Var forward_phydnn(Tape<T>& tape, const ModelSpec& spec, const ParamSet<T>& params, Var input) {
  check_input(tape, spec, input);
  const std::size_t l = spec.lookahead;
  Cursor<T> cur{tape, params};
  Var trunk = input;
  for (std::size_t i = 0; i < spec.depth; ++i) trunk = tape.relu(cur.dense(trunk));

  std::array<Var, 4> embedding, velocity;
  for (std::size_t b = 0; b < 4; ++b) {
    Var x = trunk;
    for (std::size_t i = 0; i < spec.branch_depth; ++i) x = tape.relu(cur.dense(x));
    embedding[b] = x;
    velocity[b] = cur.dense(x);
  }
  const Var depth = cur.dense(tape.concat_cols(embedding));
  cur.finish();

  const std::array<Var, 5> parts = {depth, velocity[0], velocity[1], velocity[2], velocity[3]};
  const Var grouped = tape.concat_cols(parts);
  // grouped holds channel-major columns c·l + k; reorder to step-major 5k + c.
  std::vector<std::size_t> order(kStateWidth * l);
  for (std::size_t k = 0; k < l; ++k)
    for (std::size_t ch = 0; ch < kStateWidth; ++ch) order[k * kStateWidth + ch] = ch * l + k;
  return tape.gather_cols(grouped, std::move(order));
}

template <typename T>
Var forward(Tape<T>& tape, const ModelSpec& spec, const ParamSet<T>& params, Var input, std::mt19937_64* rng) {
  switch (spec.kind) {
    case ModelKind::Mlp: return forward_mlp(tape, spec, params, input);
    case ModelKind::Bnn:
      if (!rng) throw std::invalid_argument("BNN forward needs a random generator");
      return forward_bnn(tape, spec, params, input, *rng);
    case ModelKind::Lstm: return forward_lstm(tape, spec, params, input);
    case ModelKind::PhyDnn: return forward_phydnn(tape, spec, params, input);
  }
  throw std::invalid_argument("unknown model kind");
}

namespace {

// Tape-free MLP inference with the same operation order as forward_mlp
// (zeroed product, bias row, ReLU), so results match bit for bit.
// Layers ping-pong between `out` and `work`; the result ends in `out`.
void mlp_inference(const ModelSpec& spec, const nn::ParamStore& params, std::span<const float> inputs,
                   std::size_t batch, std::vector<float>& out, std::vector<float>& work) {
  const auto& k = simd::active<float>();
  const std::size_t layers = spec.depth + 1;
  std::size_t width = spec.input_len();
  const float* cur = inputs.data();
  for (std::size_t layer = 0; layer < layers; ++layer) {
    const auto w = params.values(2 * layer);
    const auto b = params.values(2 * layer + 1);
    const std::size_t n_out = b.size();
    if (w.size() != width * n_out) throw DimensionError("parameter set does not match the MLP spec");
    // The last layer must land in `out`; alternate backwards from there.
    std::vector<float>& dst = ((layers - 1 - layer) % 2 == 0) ? out : work;
    dst.assign(batch * n_out, 0.0f);
    k.gemm_nn(batch, n_out, width, cur, width, w.data(), n_out, dst.data(), n_out);
    for (std::size_t r = 0; r < batch; ++r) {
      float* row = dst.data() + r * n_out;
      for (std::size_t c = 0; c < n_out; ++c) row[c] = row[c] + b[c];
    }
    if (layer < spec.depth) k.relu(dst.size(), dst.data(), dst.data());
    cur = dst.data();
    width = n_out;
  }
}

}  // namespace

void predict_into(const ModelSpec& spec, const nn::ParamStore& params, std::span<const float> inputs,
                  std::size_t batch, std::mt19937_64* rng, Tape<float>* scratch, std::vector<float>& out,
                  std::vector<float>& work) {
  if (inputs.size() != batch * spec.input_len())
    throw DimensionError("predict got " + std::to_string(inputs.size()) + " values for " + std::to_string(batch) +
                         " rows of length " + std::to_string(spec.input_len()));
  if (spec.kind == ModelKind::Mlp && params.size() == 2 * (spec.depth + 1)) {
    mlp_inference(spec, params, inputs, batch, out, work);
    return;
  }
  Tape<float> local;
  Tape<float>& tape = scratch ? *scratch : local;
  tape.reset();
  const auto bound = params.bind_frozen();
  const Var x = tape.leaf(batch, spec.input_len(), inputs);
  const Var y = forward(tape, spec, bound, x, rng);
  const auto v = tape.value(y);
  out.assign(v.begin(), v.end());
  tape.reset();
}

std::vector<float> predict(const ModelSpec& spec, const nn::ParamStore& params, std::span<const float> inputs,
                           std::size_t batch, std::mt19937_64* rng, Tape<float>* scratch) {
  std::vector<float> out, work;
  predict_into(spec, params, inputs, batch, rng, scratch, out, work);
  return out;
}

#define FLOOD_INSTANTIATE(T)                                                                                   \
  template Var forward_mlp<T>(Tape<T>&, const ModelSpec&, const ParamSet<T>&, Var);                            \
  template Var forward_bnn<T>(Tape<T>&, const ModelSpec&, const ParamSet<T>&, Var, std::mt19937_64&);          \
  template Var forward_lstm<T>(Tape<T>&, const ModelSpec&, const ParamSet<T>&, Var);                           \
  template Var forward_phydnn<T>(Tape<T>&, const ModelSpec&, const ParamSet<T>&, Var);                         \
  template Var forward<T>(Tape<T>&, const ModelSpec&, const ParamSet<T>&, Var, std::mt19937_64*);

FLOOD_INSTANTIATE(float)
FLOOD_INSTANTIATE(double)
#undef FLOOD_INSTANTIATE

}  // namespace flood
