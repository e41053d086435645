#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "flood/errors.hpp"
#include "flood/models.hpp"
#include "gradcheck.hpp"

using namespace flood;
using namespace flood::nn;

namespace {

ModelSpec small(ModelKind kind, std::size_t l, std::size_t depth = 2, std::size_t width = 8, std::size_t ds = 2) {
  ModelSpec s;
  s.kind = kind;
  s.lookahead = l;
  s.depth = depth;
  s.width = width;
  s.branch_depth = kind == ModelKind::PhyDnn ? ds : 0;
  return s;
}

ParamStore make_store(const ModelSpec& s, std::uint64_t seed) {
  ParamStore st;
  declare_parameters(s, st);
  st.initialize(seed);
  return st;
}

std::vector<double> random_input(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = u(rng);
  return v;
}

/// Runs a double-precision forward pass with the store's values.
std::vector<double> forward_double(const ModelSpec& s, ParamBuffer<double>& buf, const std::vector<double>& x,
                                   std::size_t rows, std::uint64_t rng_seed = 1) {
  Tape<double> t;
  std::mt19937_64 rng(rng_seed);
  const Var in = t.leaf(rows, s.input_len(), x);
  const Var out = forward(t, s, buf.bind(), in, &rng);
  const auto v = t.value(out);
  return {v.begin(), v.end()};
}

void set_all(ParamStore& st, float v) {
  for (std::size_t p = 0; p < st.size(); ++p)
    for (float& x : st.values(p)) x = v;
}

float& at(ParamStore& st, const std::string& name, std::size_t k = 0) { return st.values(*st.find(name))[k]; }

double relu(double x) { return x > 0 ? x : 0.0; }
double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

constexpr ModelKind kKinds[] = {ModelKind::Mlp, ModelKind::Bnn, ModelKind::Lstm, ModelKind::PhyDnn};

}  // namespace

TEST_CASE("published configurations") {
  const auto mlp = ModelSpec::table2(ModelKind::Mlp), bnn = ModelSpec::table2(ModelKind::Bnn);
  const auto lstm = ModelSpec::table2(ModelKind::Lstm), phy = ModelSpec::table2(ModelKind::PhyDnn);
  CHECK(mlp.depth == 10);
  CHECK(mlp.width == 1000);
  CHECK(bnn.depth == 10);
  CHECK(bnn.width == 1000);
  CHECK(lstm.depth == 5);
  CHECK(lstm.width == 500);
  CHECK(phy.depth == 5);
  CHECK(phy.width == 1000);
  CHECK(phy.branch_depth == 5);
  CHECK(mlp.input_len() == 78);
  CHECK(mlp.output_len() == 60);
}

TEST_CASE("parameter count oracle for the published MLP") {
  const std::size_t expect = 78 * 1000 + 1000 + 9 * (1000 * 1000 + 1000) + 1000 * 60 + 60;
  CHECK(parameter_count(ModelSpec::table2(ModelKind::Mlp, 12)) == expect);
  CHECK(parameter_count(ModelSpec::table2(ModelKind::Bnn, 12)) == 2 * expect);
}

TEST_CASE("closed-form parameter counts match the declared arrays") {
  for (ModelKind k : kKinds)
    for (std::size_t l : {1u, 5u, 12u, 24u}) {
      const ModelSpec s = small(k, l, 3, 12, 2);
      ParamStore st;
      declare_parameters(s, st);
      CHECK(parameter_count(s) == st.scalar_count());
    }
  ParamStore st;
  declare_parameters(ModelSpec::table2(ModelKind::Lstm, 12), st);
  CHECK(parameter_count(ModelSpec::table2(ModelKind::Lstm, 12)) == st.scalar_count());
}

TEST_CASE("every architecture emits 5l outputs per row") {
  for (ModelKind k : kKinds)
    for (std::size_t l : {1u, 5u, 12u, 24u}) {
      CAPTURE(to_string(k));
      CAPTURE(l);
      const ModelSpec s = small(k, l);
      const ParamStore st = make_store(s, 3);
      const auto x = random_input(3, s.input_len(), l);
      std::vector<float> xf(x.begin(), x.end());
      std::mt19937_64 rng(1);
      const auto y = predict(s, st, xf, 3, &rng);
      CHECK(y.size() == 3 * 5 * l);
      for (float v : y) CHECK(std::isfinite(v));
    }
}

TEST_CASE("input length mismatch is a dimension error") {
  for (ModelKind k : kKinds) {
    const ModelSpec s = small(k, 2);
    ParamStore st = make_store(s, 1);
    Tape<float> t;
    std::vector<float> x(s.input_len() + 1, 0.f);
    std::mt19937_64 rng(1);
    CHECK_THROWS_AS(forward(t, s, st.bind(), t.leaf(1, s.input_len() + 1, x), &rng), DimensionError);
  }
}

TEST_CASE("zero parameters give zero output for deterministic architectures") {
  for (ModelKind k : {ModelKind::Mlp, ModelKind::Lstm, ModelKind::PhyDnn}) {
    const ModelSpec s = small(k, 3);
    ParamStore st = make_store(s, 1);
    set_all(st, 0.f);
    const auto x = random_input(4, s.input_len(), 2);
    std::vector<float> xf(x.begin(), x.end());
    for (float v : predict(s, st, xf, 4, nullptr)) CHECK(v == 0.f);
  }
}

TEST_CASE("deterministic architectures repeat their output exactly") {
  for (ModelKind k : {ModelKind::Mlp, ModelKind::Lstm, ModelKind::PhyDnn}) {
    const ModelSpec s = small(k, 4);
    const ParamStore st = make_store(s, 5);
    const auto x = random_input(2, s.input_len(), 3);
    std::vector<float> xf(x.begin(), x.end());
    CHECK(predict(s, st, xf, 2, nullptr) == predict(s, st, xf, 2, nullptr));
  }
}

TEST_CASE("fast MLP inference is bitwise equal to the tape forward") {
  for (std::size_t batch : {1u, 7u, 64u}) {
    const ModelSpec s = small(ModelKind::Mlp, 12, 3, 40);
    const ParamStore st = make_store(s, 8);
    const auto x = random_input(batch, s.input_len(), batch);
    std::vector<float> xf(x.begin(), x.end());
    Tape<float> t;
    const Var out = forward_mlp(t, s, st.bind_frozen(), t.leaf(batch, s.input_len(), xf));
    const std::vector<float> tape_out(t.value(out).begin(), t.value(out).end());
    CHECK(predict(s, st, xf, batch, nullptr) == tape_out);
    std::vector<float> o, w;
    predict_into(s, st, xf, batch, nullptr, nullptr, o, w);
    CHECK(o == tape_out);
  }
}

TEST_CASE("single-hidden-layer MLP matches the hand-computed toy") {
  const ModelSpec s = small(ModelKind::Mlp, 1, 1, 3);
  const ParamStore st = make_store(s, 21);
  ParamBuffer<double> buf(st);
  const auto x = random_input(1, s.input_len(), 4);
  const auto y = forward_double(s, buf, x, 1);
  const auto& W1 = buf.values[0];
  const auto& b1 = buf.values[1];
  const auto& W2 = buf.values[2];
  const auto& b2 = buf.values[3];
  std::vector<double> h(3);
  for (std::size_t j = 0; j < 3; ++j) {
    double a = b1[j];
    for (std::size_t i = 0; i < s.input_len(); ++i) a += x[i] * W1[i * 3 + j];
    h[j] = relu(a);
  }
  for (std::size_t o = 0; o < 5; ++o) {
    double a = b2[o];
    for (std::size_t j = 0; j < 3; ++j) a += h[j] * W2[j * 5 + o];
    CHECK(y[o] == doctest::Approx(a).epsilon(1e-13));
  }
}

TEST_CASE("one-unit LSTM matches a hand-computed two-step recursion") {
  const ModelSpec s = small(ModelKind::Lstm, 2, 1, 1);
  const ParamStore st = make_store(s, 13);
  ParamBuffer<double> buf(st);
  const auto x = random_input(1, s.input_len(), 6);
  const auto y = forward_double(s, buf, x, 1);
  // Arrays: embed W/b, layer0 Wx/Wh/b (gate order i, f, g, o), head W/b.
  const auto& eW = buf.values[0];
  const double eb = buf.values[1][0];
  const auto& wx = buf.values[2];
  const auto& wh = buf.values[3];
  const auto& b = buf.values[4];
  const auto& hw = buf.values[5];
  const auto& hb = buf.values[6];
  double e = eb;
  for (std::size_t i = 0; i < s.input_len(); ++i) e += x[i] * eW[i];
  double h = 0, c = 0;
  for (std::size_t k = 0; k < 2; ++k) {
    double z[4];
    for (int g = 0; g < 4; ++g) z[g] = e * wx[g] + b[g] + h * wh[g];
    c = sigm(z[1]) * c + sigm(z[0]) * std::tanh(z[2]);
    h = sigm(z[3]) * std::tanh(c);
    for (std::size_t o = 0; o < 5; ++o) CHECK(y[k * 5 + o] == doctest::Approx(h * hw[o] + hb[o]).epsilon(1e-13));
  }
}

TEST_CASE("LSTM head bias shifts every lookahead block equally") {
  const ModelSpec s = small(ModelKind::Lstm, 4, 2, 6);
  ParamStore st = make_store(s, 2);
  const auto x = random_input(1, s.input_len(), 8);
  std::vector<float> xf(x.begin(), x.end());
  const auto base = predict(s, st, xf, 1, nullptr);
  at(st, "lstm/head/b", 2) += 0.25f;
  const auto moved = predict(s, st, xf, 1, nullptr);
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t o = 0; o < 5; ++o) {
      const double d = moved[k * 5 + o] - base[k * 5 + o];
      CHECK(d == doctest::Approx(o == 2 ? 0.25 : 0.0).epsilon(1e-6));
    }
}

TEST_CASE("PhyDNN toy matches the hand-assembled pipeline") {
  const ModelSpec s = small(ModelKind::PhyDnn, 1, 1, 4, 1);
  const ParamStore st = make_store(s, 17);
  ParamBuffer<double> buf(st);
  const auto x = random_input(1, s.input_len(), 9);
  const auto y = forward_double(s, buf, x, 1);
  auto dense = [&](const std::vector<double>& in, std::size_t id, std::size_t out, bool act) {
    const auto& W = buf.values[id];
    const auto& b = buf.values[id + 1];
    std::vector<double> r(out);
    for (std::size_t j = 0; j < out; ++j) {
      double a = b[j];
      for (std::size_t i = 0; i < in.size(); ++i) a += in[i] * W[i * out + j];
      r[j] = act ? relu(a) : a;
    }
    return r;
  };
  const auto trunk = dense(x, 0, 4, true);
  std::vector<double> emb, vel;
  for (std::size_t br = 0; br < 4; ++br) {
    const std::size_t base = 2 + br * 4;
    const auto e = dense(trunk, base, 1, true);
    emb.push_back(e[0]);
    vel.push_back(dense(e, base + 2, 1, false)[0]);
  }
  const double h = dense(emb, 18, 1, false)[0];
  CHECK(y[0] == doctest::Approx(h).epsilon(1e-13));
  for (std::size_t br = 0; br < 4; ++br) CHECK(y[1 + br] == doctest::Approx(vel[br]).epsilon(1e-13));
}

TEST_CASE("swapping PhyDNN N and S branches swaps their velocity outputs") {
  const ModelSpec s = small(ModelKind::PhyDnn, 3, 2, 8, 2);
  ParamStore st = make_store(s, 23);
  const auto x = random_input(2, s.input_len(), 10);
  std::vector<float> xf(x.begin(), x.end());
  const auto base = predict(s, st, xf, 2, nullptr);
  for (std::size_t p = 0; p < st.size(); ++p) {
    const std::string& name = st.info(p).name;
    if (name.rfind("phydnn/branch_n/", 0) != 0) continue;
    const std::size_t q = *st.find("phydnn/branch_s/" + name.substr(16));
    auto a = st.values(p), b = st.values(q);
    std::swap_ranges(a.begin(), a.end(), b.begin());
  }
  const auto swapped = predict(s, st, xf, 2, nullptr);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t k = 0; k < 3; ++k) {
      const std::size_t o = r * 15 + k * 5;
      CHECK(swapped[o + 1] == base[o + 2]);
      CHECK(swapped[o + 2] == base[o + 1]);
      CHECK(swapped[o + 3] == base[o + 3]);
      CHECK(swapped[o + 4] == base[o + 4]);
    }
}

TEST_CASE("BNN with vanishing perturbations equals the mean-only forward pass") {
  ModelSpec s = small(ModelKind::Bnn, 2, 2, 16);
  s.bnn_sigma_init = -40.0;
  const ParamStore bnn = make_store(s, 31);
  ModelSpec m = s;
  m.kind = ModelKind::Mlp;
  ParamStore mlp;
  declare_parameters(m, mlp);
  for (std::size_t p = 0; p < mlp.size(); ++p) {
    std::string name = mlp.info(p).name;
    name.replace(0, 3, "bnn");
    const auto slash = name.rfind('/');
    name = name.substr(0, slash + 1) + (name.substr(slash + 1) == "W" ? "mu_W" : "mu_b");
    const auto src = bnn.values(*bnn.find(name));
    std::copy(src.begin(), src.end(), mlp.values(p).begin());
  }
  const auto x = random_input(3, s.input_len(), 11);
  std::vector<float> xf(x.begin(), x.end());
  std::mt19937_64 rng(5);
  const auto yb = predict(s, bnn, xf, 3, &rng);
  const auto ym = predict(m, mlp, xf, 3, nullptr);
  for (std::size_t k = 0; k < yb.size(); ++k) CHECK(std::abs(yb[k] - ym[k]) <= 1e-6);
}

TEST_CASE("BNN bias output with zero input follows N(mu, e^{2 sigma})") {
  ModelSpec s = small(ModelKind::Bnn, 1, 0, 1);
  ParamStore st = make_store(s, 3);
  const double mu = 0.3, sigma = std::log(0.5);
  at(st, "bnn/head/mu_b", 0) = static_cast<float>(mu);
  at(st, "bnn/head/sigma_b", 0) = static_cast<float>(sigma);
  const std::vector<float> x(s.input_len(), 0.f);
  std::mt19937_64 rng(77);
  Tape<float> t;
  const auto ps = st.bind_frozen();
  const std::size_t n = 100000;
  double sum = 0, sq = 0;
  for (std::size_t i = 0; i < n; ++i) {
    t.reset();
    const double y = t.value(forward_bnn(t, s, ps, t.leaf(1, s.input_len(), x), rng))[0];
    sum += y;
    sq += y * y;
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  const double sd = std::exp(sigma);
  CHECK(std::abs(mean - mu) <= 3 * sd / std::sqrt(double(n)));
  CHECK(std::abs(var - sd * sd) <= 3 * sd * sd * std::sqrt(2.0 / (n - 1)));
}

TEST_CASE("BNN output varies across random states") {
  ModelSpec s = small(ModelKind::Bnn, 2, 1, 8);
  s.bnn_sigma_init = 0.0;
  const ParamStore st = make_store(s, 4);
  const auto x = random_input(1, s.input_len(), 12);
  std::vector<float> xf(x.begin(), x.end());
  std::mt19937_64 r1(1), r2(2);
  CHECK(predict(s, st, xf, 1, &r1) != predict(s, st, xf, 1, &r2));
  ModelSpec q = s;
  q.bnn_sigma_init = -9.0;
  const ParamStore sq = make_store(q, 4);
  std::mt19937_64 r3(1);
  CHECK(predict(q, sq, xf, 1, &r3) != predict(q, sq, xf, 1, &r2));
  CHECK_THROWS(predict(s, st, xf, 1, nullptr));
}

TEST_CASE("full-model gradient check on sampled parameters") {
  for (ModelKind k : kKinds) {
    CAPTURE(to_string(k));
    CHECK(test::model_fd_worst(k) <= 1e-3);
  }
}

TEST_CASE("model spec survives a manifest round trip and rejects bad shapes") {
  ModelSpec s = small(ModelKind::PhyDnn, 24, 3, 16, 2);
  io::Manifest m;
  s.write(m);
  CHECK(ModelSpec::read(m) == s);
  ModelSpec b = small(ModelKind::Bnn, 5);
  b.bnn_sigma_init = -3.5;
  io::Manifest mb;
  b.write(mb);
  CHECK(ModelSpec::read(mb) == b);
  CHECK_THROWS(small(ModelKind::PhyDnn, 2, 1, 6).validate());
  CHECK_THROWS(small(ModelKind::Mlp, 0).validate());
  CHECK(parse_model_kind("dnn") == ModelKind::Mlp);
  CHECK_THROWS(parse_model_kind("cnn"));
}
