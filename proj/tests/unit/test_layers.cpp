#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "vslnet/checkpoint.hpp"
#include "vslnet/layers.hpp"
#include "vslnet/optim.hpp"

using namespace vslnet;
using namespace vslnet::testing;

namespace {

LstmWeights random_lstm(std::size_t in, std::size_t hidden, std::mt19937_64& rng) {
  return {random_tensor({in, 4 * hidden}, rng, 0.5), random_tensor({hidden, 4 * hidden}, rng, 0.5),
          random_tensor({4 * hidden}, rng, 0.5)};
}

// Gate-by-gate cell update on plain vectors, gate blocks (i, f, g, o).
std::pair<std::vector<double>, std::vector<double>> reference_cell(
    const std::vector<double>& x, const std::vector<double>& h, const std::vector<double>& c,
    const LstmWeights& w) {
  const std::size_t d = h.size(), in = x.size();
  std::vector<double> z(4 * d);
  for (std::size_t j = 0; j < 4 * d; ++j) {
    z[j] = w.bias.at(j);
    for (std::size_t k = 0; k < in; ++k) z[j] += x[k] * w.w_input.at(k * 4 * d + j);
    for (std::size_t k = 0; k < d; ++k) z[j] += h[k] * w.w_hidden.at(k * 4 * d + j);
  }
  std::vector<double> hn(d), cn(d);
  for (std::size_t k = 0; k < d; ++k) {
    const double i = sigm(z[k]), f = sigm(z[d + k]), g = std::tanh(z[2 * d + k]),
                 o = sigm(z[3 * d + k]);
    cn[k] = f * c[k] + i * g;
    hn[k] = o * std::tanh(cn[k]);
  }
  return {hn, cn};
}

}  // namespace

TEST_CASE("param store registers in order and rejects duplicates") {
  ParamStore store(DType::kFloat64);
  std::mt19937_64 rng(1);
  Linear::create(store, "a", 3, 2, rng);
  CHECK(store.size() == 2);
  CHECK(store.entries()[0].first == "a/weight");
  CHECK(store.get("a/bias").shape() == Shape{2});
  CHECK(store.get("a/weight").requires_grad());
  CHECK(store.total_elements() == 8);
  CHECK_THROWS_AS(store.add("a/bias", Tensor::zeros({2})), ContractError);
  CHECK_THROWS(store.get("missing"));
}

TEST_CASE("xavier initialization is seeded and bounded") {
  std::mt19937_64 a(5), b(5);
  auto x = xavier_uniform({10, 20}, 10, 20, a, DType::kFloat64);
  auto y = xavier_uniform({10, 20}, 10, 20, b, DType::kFloat64);
  CHECK(x.values() == y.values());
  const double bound = std::sqrt(6.0 / 30.0);
  for (double v : x.values()) CHECK(std::abs(v) <= bound);
}

TEST_CASE("lstm_step examples") {
  LstmWeights zero{Tensor::zeros({3, 8}), Tensor::zeros({2, 8}), Tensor::zeros({8})};
  auto st = lstm_step(Tensor::zeros({3}), Tensor::zeros({2}), Tensor::zeros({2}), zero);
  CHECK(st.h.values() == std::vector<double>{0.0, 0.0});

  // Saturated forget and input gates: c_t = c_prev + tanh(candidate).
  std::vector<double> bias(8, 0.0);
  bias[0] = bias[1] = 50.0;  // input gate
  bias[2] = bias[3] = 50.0;  // forget gate
  bias[4] = 0.3;             // candidate
  LstmWeights sat{Tensor::zeros({3, 8}), Tensor::zeros({2, 8}), Tensor::from_values({8}, bias)};
  auto s2 = lstm_step(Tensor::zeros({3}), Tensor::zeros({2}), Tensor::from_values({2}, {0.7, -0.2}), sat);
  CHECK(s2.c.at(0) == doctest::Approx(0.7 + std::tanh(0.3)).epsilon(1e-12));
  CHECK(s2.c.at(1) == doctest::Approx(-0.2).epsilon(1e-12));

  std::mt19937_64 rng(2);
  auto w = random_lstm(3, 4, rng);
  auto x = random_tensor({3}, rng), h = random_tensor({4}, rng), c = random_tensor({4}, rng);
  const auto [href, cref] = reference_cell(x.values(), h.values(), c.values(), w);
  auto got = lstm_step(x, h, c, w);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(std::abs(got.h.at(k) - href[k]) <= 1e-12);
    CHECK(std::abs(got.c.at(k) - cref[k]) <= 1e-12);
  }
  CHECK_THROWS_AS(lstm_step(Tensor::zeros({2}), h, c, w), ShapeError);
}

TEST_CASE("fused lstm_sequence equals unrolled lstm_step") {
  std::mt19937_64 rng(3);
  auto w = random_lstm(5, 3, rng);
  auto x = random_tensor({6, 5}, rng);
  const auto fused = lstm_sequence(x, w.w_input, w.w_hidden, w.bias);
  Tensor h = Tensor::zeros({3}), c = Tensor::zeros({3});
  for (std::size_t t = 0; t < 6; ++t) {
    auto st = lstm_step(reshape(slice_rows(x, t, t + 1), {5}), h, c, w);
    h = st.h;
    c = st.c;
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(fused.at(t, k) - h.at(k)) <= 1e-12);
  }
}

TEST_CASE("lstm gradients match finite differences") {
  std::mt19937_64 rng(4);
  auto w = random_lstm(3, 2, rng);
  auto x = random_tensor({3}, rng), h = random_tensor({2}, rng), c = random_tensor({2}, rng);
  auto r = gradcheck(
      [&] {
        auto s = lstm_step(x, h, c, w);
        return add(weighted_sum(s.h), weighted_sum(s.c, 7));
      },
      {x, h, c, w.w_input, w.w_hidden, w.bias});
  CAPTURE(r.worst);
  CHECK(r.ok());
}

TEST_CASE("multi-head attention examples") {
  ParamStore store;
  std::mt19937_64 rng(5);
  auto att = AttentionWeights::create(store, "att", 4, rng);
  const std::vector<std::uint8_t> one{1};

  // n = 1: the single row attends to itself with weight 1.
  auto x1 = random_tensor({1, 4}, rng);
  auto y1 = multi_head_attention(x1, one, 2, att);
  auto ref1 = att.output(att.value(x1));
  for (std::size_t i = 0; i < 4; ++i) CHECK(y1.at(i) == doctest::Approx(ref1.at(i)).epsilon(1e-12));

  // One valid key: every row gets that key's value projection.
  auto x = random_tensor({3, 4}, rng);
  const std::vector<std::uint8_t> first{1, 0, 0};
  auto y = multi_head_attention(x, first, 2, att);
  auto ref = att.output(att.value(slice_rows(x, 0, 1)));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t i = 0; i < 4; ++i) CHECK(y.at(r, i) == doctest::Approx(ref.at(i)).epsilon(1e-12));

  CHECK_THROWS_AS(multi_head_attention(x, std::vector<std::uint8_t>{1, 1, 1}, 3, att), ConfigError);
}

TEST_CASE("single-head attention equals softmax(QK^T / sqrt(d)) V") {
  ParamStore store;
  std::mt19937_64 rng(6);
  auto att = AttentionWeights::create(store, "att", 4, rng);
  auto x = random_tensor({5, 4}, rng);
  const std::vector<std::uint8_t> mask{1, 1, 1, 1, 1};
  auto got = multi_head_attention(x, mask, 1, att);

  const auto q = to_matrix(att.query(x).values(), 5, 4);
  const auto k = to_matrix(att.key(x).values(), 5, 4);
  const auto v = to_matrix(att.value(x).values(), 5, 4);
  Matrix ctx(5, std::vector<double>(4, 0.0));
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<double> s(5);
    for (std::size_t j = 0; j < 5; ++j) {
      for (std::size_t t = 0; t < 4; ++t) s[j] += q[i][t] * k[j][t];
      s[j] /= 2.0;
    }
    const auto p = naive_softmax(s);
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t t = 0; t < 4; ++t) ctx[i][t] += p[j] * v[j][t];
  }
  const auto wo = to_matrix(att.output.weight.values(), 4, 4);
  const auto out = naive_matmul(ctx, wo);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t t = 0; t < 4; ++t)
      CHECK(std::abs(got.at(i, t) - (out[i][t] + att.output.bias.at(t))) <= 1e-10);
}

TEST_CASE("attention and linear gradients match finite differences") {
  ParamStore store;
  std::mt19937_64 rng(7);
  auto att = AttentionWeights::create(store, "att", 4, rng);
  for (auto& [_, t] : store.entries()) {
    auto v = random_tensor(t.shape(), rng, 0.5).values();
    t.assign(v);
  }
  auto x = random_tensor({4, 4}, rng);
  const std::vector<std::uint8_t> mask{1, 1, 0, 1};
  std::vector<Tensor> leaves{x};
  for (auto& [_, t] : store.entries()) leaves.push_back(t);
  auto r = gradcheck([&] { return weighted_sum(multi_head_attention(x, mask, 2, att)); }, leaves);
  CAPTURE(r.worst);
  CHECK(r.ok());
}

TEST_CASE("clip_global_norm") {
  auto a = Tensor::scalar(0.0), b = Tensor::scalar(0.0);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  add(scale(a, 3.0), scale(b, 4.0)).backward();
  std::vector<Tensor> ts{a, b};
  CHECK(clip_global_norm(std::span<Tensor>(ts), 1.0) == doctest::Approx(5.0));
  CHECK(a.grad_at(0) == doctest::Approx(0.6));
  CHECK(b.grad_at(0) == doctest::Approx(0.8));
  CHECK(std::abs(global_grad_norm(ts) - 1.0) <= 1e-9);

  a.zero_grad();
  b.zero_grad();
  add(scale(a, 0.3), scale(b, 0.4)).backward();
  clip_global_norm(std::span<Tensor>(ts), 1.0);
  CHECK(a.grad_at(0) == 0.3);
  CHECK(b.grad_at(0) == 0.4);

  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor({5}, rng), y = random_tensor({3}, rng);
    x.set_requires_grad(true);
    y.set_requires_grad(true);
    const double k = trial * 0.2;
    add(scale(sum(mul(x, x)), k), scale(sum(y), k)).backward();
    std::vector<Tensor> p{x, y};
    const double g = global_grad_norm(p);
    clip_global_norm(std::span<Tensor>(p), 1.0);
    CHECK(std::abs(global_grad_norm(p) - std::min(g, 1.0)) <= 1e-9);
  }
}

TEST_CASE("adam first step moves each parameter by about lr against the gradient sign") {
  ParamStore store;
  auto& p = store.add("p", Tensor::from_values({3}, {1.0, 2.0, 3.0}));
  sum(mul(p, Tensor::from_values({3}, {0.5, -2.0, 0.0}))).backward();
  auto state = AdamState::create(store, {});
  auto info = adam_step(state, store);
  CHECK(info.learning_rate == 1e-4);
  CHECK(state.step == 1);
  CHECK(p.at(0) == doctest::Approx(1.0 - 1e-4).epsilon(1e-9));
  CHECK(p.at(1) == doctest::Approx(2.0 + 1e-4).epsilon(1e-9));
  CHECK(p.at(2) == 3.0);  // zero gradient: unchanged
  CHECK(state.second_moment[0].at(2) == 0.0);
}

TEST_CASE("adam matches a hand-coded bias-corrected update") {
  ParamStore store;
  auto& p = store.add("p", Tensor::scalar(0.5));
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.total_steps = 10;
  auto state = AdamState::create(store, cfg);
  double x = 0.5, m = 0, v = 0;
  for (int t = 1; t <= 6; ++t) {
    store.zero_grad();
    sum(mul(mul(p, p), p)).backward();  // d/dx x^3
    const double g = 3 * x * x;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double lr = 0.1 * (1.0 - (t - 1) / 10.0);
    x -= lr * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    adam_step(state, store);
    CHECK(std::abs(p.item() - x) <= 1e-12);
  }
}

TEST_CASE("adam decreases x^2 monotonically over 5 steps") {
  ParamStore store;
  auto& p = store.add("x", Tensor::scalar(1.0));
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  auto state = AdamState::create(store, cfg);
  double prev = 1.0;
  for (int i = 0; i < 5; ++i) {
    store.zero_grad();
    mul(p, p).backward();
    adam_step(state, store);
    const double f = p.item() * p.item();
    CHECK(f < prev);
    prev = f;
  }
}

TEST_CASE("learning-rate schedule decays linearly and clamps at zero") {
  AdamConfig cfg;
  cfg.learning_rate = 1.0;
  cfg.total_steps = 4;
  CHECK(scheduled_learning_rate(cfg, 0) == 1.0);
  CHECK(scheduled_learning_rate(cfg, 1) == 0.75);
  CHECK(scheduled_learning_rate(cfg, 4) == 0.0);
  CHECK(scheduled_learning_rate(cfg, 9) == 0.0);

  ParamStore store;
  auto& p = store.add("x", Tensor::scalar(1.0));
  auto state = AdamState::create(store, cfg);
  state.step = 4;
  mul(p, p).backward();
  auto info = adam_step(state, store);
  CHECK(info.schedule_exhausted);
  CHECK(info.learning_rate == 0.0);
  CHECK(p.item() == 1.0);
}

TEST_CASE("checkpoint round trip preserves parameters and optimizer state") {
  const auto dir = std::filesystem::temp_directory_path() / "vslnet_ckpt_test";
  std::filesystem::create_directories(dir);
  for (DType dt : {DType::kFloat32, DType::kFloat64}) {
    ParamStore store(dt);
    std::mt19937_64 rng(9);
    Linear::create(store, "layer", 3, 2, rng);
    store.add("extra", Tensor::from_values({2}, {0.1, 1e-30}));
    sum(mul(store.get("layer/weight"), store.get("layer/weight"))).backward();
    auto adam = AdamState::create(store, {});
    adam_step(adam, store);
    nlohmann::json meta = {{"epoch", 3}, {"note", "x"}};
    const auto file = dir / (std::string("c_") + std::string(dtype_name(dt)) + ".ckpt");
    write_checkpoint(file, store, &adam, meta);

    auto ckpt = read_checkpoint(file);
    CHECK(ckpt.metadata["epoch"] == 3);
    ParamStore other(dt);
    std::mt19937_64 rng2(1234);
    Linear::create(other, "layer", 3, 2, rng2);
    other.add("extra", Tensor::zeros({2}));
    restore_params(ckpt, other);
    for (std::size_t i = 0; i < store.size(); ++i) {
      CHECK(other.entries()[i].second.values() == store.entries()[i].second.values());
    }
    auto adam2 = AdamState::create(other, {});
    restore_adam(ckpt, other, adam2);
    CHECK(adam2.step == 1);
    CHECK(adam2.first_moment[0].values() == adam.first_moment[0].values());
    CHECK(adam2.second_moment[0].values() == adam.second_moment[0].values());

    ParamStore wrong(dt);
    wrong.add("layer/weight", Tensor::zeros({2, 3}));
    CHECK_THROWS(restore_params(ckpt, wrong));
  }

  std::ofstream(dir / "bad.ckpt") << "not a checkpoint";
  CHECK_THROWS_AS(read_checkpoint(dir / "bad.ckpt"), DataError);
  CHECK_THROWS_AS(read_checkpoint(dir / "absent.ckpt"), DataError);
}
