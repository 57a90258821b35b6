#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mllm/errors.hpp"
#include "mllm/lstm.hpp"

using namespace mllm;

namespace {

TensorPtr random_tensor(Shape shape, Rng& rng, bool requires_grad,
                        double lo = -0.8, double hi = 0.8) {
  auto t = Tensor::zeros(std::move(shape), requires_grad);
  for (auto& v : t->mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

// Minimal reference LSTM, kept independent of the graph engine: plain
// double loops, std::exp/std::tanh, gate order [i, f, g, o].
struct RefLstm {
  size_t in, out;
  std::vector<double> w, u, b;  // (4out x in), (4out x out), (4out)

  void step(const std::vector<double>& x, std::vector<double>& h,
            std::vector<double>& c) const {
    std::vector<double> pre(4 * out, 0.0);
    for (size_t r = 0; r < 4 * out; ++r) {
      double acc = b[r];
      for (size_t k = 0; k < in; ++k) acc += w[r * in + k] * x[k];
      for (size_t k = 0; k < out; ++k) acc += u[r * out + k] * h[k];
      pre[r] = acc;
    }
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    for (size_t j = 0; j < out; ++j) {
      const double i_g = sig(pre[j]);
      const double f_g = sig(pre[out + j]);
      const double g_g = std::tanh(pre[2 * out + j]);
      const double o_g = sig(pre[3 * out + j]);
      c[j] = f_g * c[j] + i_g * g_g;
      h[j] = o_g * std::tanh(c[j]);
    }
  }
};

}  // namespace

TEST_CASE("all-zero parameters and inputs yield all-zero outputs") {
  LstmLayerParams p;
  p.in_dim = 3;
  p.out_dim = 4;
  p.w = Tensor::zeros({16, 3}, true);
  p.u = Tensor::zeros({16, 4}, true);
  p.b = Tensor::zeros({16}, true);
  Graph g;
  auto x = Tensor::zeros({6, 3});  // T=3, B=2
  auto out = lstm_layer_forward(g, p, x, 3, zero_state(2, 4), nullptr, nullptr);
  for (double v : out.stacked->data()) CHECK(v == 0.0);
  for (double v : out.final_state.c->data()) CHECK(v == 0.0);
}

TEST_CASE("with all drop rates zero the layer matches the reference LSTM") {
  Rng rng(21);
  const size_t in = 5, out = 4, batch = 3, timesteps = 8;
  auto params = init_lstm_layer(in, out, rng.fork("layer"));

  RefLstm ref{in, out, {}, {}, {}};
  ref.w.assign(params.w->data().begin(), params.w->data().end());
  ref.u.assign(params.u->data().begin(), params.u->data().end());
  ref.b.assign(params.b->data().begin(), params.b->data().end());

  auto x_all = random_tensor({timesteps * batch, in}, rng, false);
  Graph g;
  auto fwd = lstm_layer_forward(g, params, x_all, timesteps,
                                zero_state(batch, out), nullptr, nullptr);

  for (size_t b = 0; b < batch; ++b) {
    std::vector<double> h(out, 0.0), c(out, 0.0);
    for (size_t t = 0; t < timesteps; ++t) {
      std::vector<double> x(in);
      for (size_t k = 0; k < in; ++k)
        x[k] = x_all->data()[(t * batch + b) * in + k];
      ref.step(x, h, c);
      for (size_t j = 0; j < out; ++j) {
        const double engine = fwd.steps[t]->data()[b * out + j];
        CHECK(std::abs(engine - h[j]) < 1e-12);
      }
    }
  }
}

TEST_CASE("T=1 H=1 cell matches hand-computed gate arithmetic") {
  LstmLayerParams p;
  p.in_dim = 1;
  p.out_dim = 1;
  p.w = Tensor::zeros({4, 1}, true);
  p.u = Tensor::zeros({4, 1}, true);
  p.b = Tensor::from({4}, {0.3, -0.2, 0.9, 0.5}, true);
  Graph g;
  auto x = Tensor::zeros({1, 1});
  auto fwd = lstm_layer_forward(g, p, x, 1, zero_state(1, 1), nullptr, nullptr);

  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const double i_g = sig(0.3), f_g = sig(-0.2), g_g = std::tanh(0.9),
               o_g = sig(0.5);
  (void)f_g;  // zero initial cell: the forget path contributes nothing
  const double c1 = i_g * g_g;
  const double h1 = o_g * std::tanh(c1);
  CHECK(fwd.final_state.c->data()[0] == doctest::Approx(c1).epsilon(1e-12));
  CHECK(fwd.final_state.h->data()[0] == doctest::Approx(h1).epsilon(1e-12));
}

TEST_CASE("layer init: forget bias one, others zero, weights bounded") {
  auto p = init_lstm_layer(6, 8, Rng(3));
  const double bound = 3.0 / std::sqrt(8.0);
  for (double v : p.w->data()) {
    CHECK(v >= -bound);
    CHECK(v <= bound);
  }
  for (size_t i = 0; i < 32; ++i) {
    const double expect = (i >= 8 && i < 16) ? 1.0 : 0.0;
    CHECK(p.b->data()[i] == expect);
  }
}

TEST_CASE("weight drop: identity cases, rejection and Monte Carlo mean") {
  Rng rng(31);
  auto u = random_tensor({40, 20}, rng, true);
  Graph g;
  CHECK(apply_weight_drop(g, u, 0.0, rng, true).get() == u.get());
  CHECK(apply_weight_drop(g, u, 0.7, rng, false).get() == u.get());
  CHECK_THROWS_AS(apply_weight_drop(g, u, 1.0, rng, true), ConfigError);
  CHECK_THROWS_AS(sample_weight_drop_mask({2, 2}, -0.1, rng), ConfigError);

  // Inverted dropout preserves the mean: 1e6 entries of value 1 masked at
  // p=0.5 average to 1 within 3 sigma (0.003).
  auto mask = sample_weight_drop_mask({1000, 1000}, 0.5, rng);
  double mean = 0.0;
  for (double v : mask->data()) mean += v;
  mean /= 1e6;
  CHECK(std::abs(mean - 1.0) <= 0.003);
}

TEST_CASE("weight drop masks the recurrent path only") {
  Rng rng(33);
  const size_t in = 3, out = 3, batch = 2;
  auto params = init_lstm_layer(in, out, rng.fork("p"));
  auto x = random_tensor({batch, in}, rng, false);
  auto u_zero = Tensor::zeros(params.u->shape());  // drops everything
  auto state = zero_state(batch, out);
  for (auto& v : state.h->mutable_data()) v = rng.uniform(-1, 1);

  Graph g;
  auto fwd = lstm_layer_forward(g, params, x, 1, state, nullptr, u_zero);
  g.backward(g.mean_all(g.square(fwd.stacked)));
  double u_grad = 0.0, w_grad = 0.0;
  for (double v : params.u->grad()) u_grad += std::abs(v);
  for (double v : params.w->grad()) w_grad += std::abs(v);
  // Fully dropped U receives no gradient; W (never weight-dropped) does.
  CHECK(u_grad == 0.0);
  CHECK(w_grad > 0.0);
}

TEST_CASE("embedding dropout: plain lookup at p=0, row-level decisions") {
  Rng rng(41);
  auto table = random_tensor({12, 4}, rng, true);
  Graph g;
  std::vector<int32_t> tokens{3, 7, 3, 1, 3};
  auto plain = embed_with_dropout(g, table, tokens, 0.0, rng, true);
  for (size_t i = 0; i < tokens.size(); ++i)
    for (size_t c = 0; c < 4; ++c)
      CHECK(plain->data()[i * 4 + c] ==
            table->data()[static_cast<size_t>(tokens[i]) * 4 + c]);

  CHECK_THROWS_AS(embed_with_dropout(g, table, {12}, 0.0, rng, true),
                  IndexError);

  // All occurrences of one type share the decision: rows for token 3 are
  // either all zero or all scaled by the same factor.
  for (int seed = 0; seed < 30; ++seed) {
    Graph g2;
    Rng r2(seed);
    auto out = embed_with_dropout(g2, table, tokens, 0.6, r2, true);
    std::vector<double> first(out->data().begin(), out->data().begin() + 4);
    for (size_t occ : {size_t(2), size_t(4)})  // other occurrences of 3
      for (size_t c = 0; c < 4; ++c)
        CHECK(out->data()[occ * 4 + c] == first[c]);
  }
}

TEST_CASE("embedding dropout count is binomial in the vocabulary size") {
  const size_t vocab = 1000;
  const double p = 0.1;
  Rng rng(55);
  double total_dropped = 0.0;
  const int samples = 200;
  for (int s = 0; s < samples; ++s) {
    auto mask = sample_embedding_row_mask(vocab, p, rng);
    for (double v : mask)
      if (v == 0.0) total_dropped += 1.0;
  }
  const double mean = total_dropped / samples;
  // 3 sigma of the sample mean of Binomial(1000, 0.1).
  const double tol = 3.0 * std::sqrt(vocab * p * (1 - p) / samples);
  CHECK(std::abs(mean - 100.0) <= tol);
}

TEST_CASE("variational masks: all-ones at p=0, scale values, constancy") {
  Rng rng(61);
  auto ones = sample_variational_mask(3, 4, 0.0, rng);
  for (double v : ones->data()) CHECK(v == 1.0);
  CHECK_THROWS_AS(sample_variational_mask(3, 4, 1.0, rng), ConfigError);

  auto mask = sample_variational_mask(5, 6, 0.4, rng);
  for (double v : mask->data())
    CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.6)));

  // The tiled mask applied inside the layer repeats the same values at
  // every timestep.
  auto params = init_lstm_layer(6, 3, rng.fork("p"));
  auto x = random_tensor({4 * 2, 6}, rng, false);  // T=4, B=2
  Graph g;
  auto fwd = lstm_layer_forward(g, params, x, 4, zero_state(2, 3),
                                sample_variational_mask(2, 6, 0.5, rng),
                                nullptr);
  REQUIRE(fwd.applied_input_mask != nullptr);
  const auto& tiled = fwd.applied_input_mask->data();
  const size_t block = 2 * 6;
  for (size_t t = 1; t < 4; ++t)
    for (size_t i = 0; i < block; ++i)
      CHECK(tiled[t * block + i] == tiled[i]);
}

TEST_CASE("masked activations preserve expectation within Monte Carlo error") {
  Rng rng(71);
  auto acts = random_tensor({4, 8}, rng, false, 0.5, 1.5);
  const double p = 0.3;
  const int samples = 4000;
  std::vector<double> sum(acts->size(), 0.0);
  for (int s = 0; s < samples; ++s) {
    Graph g;
    auto m = sample_variational_mask(4, 8, p, rng);
    auto masked = g.apply_mask(acts, m);
    for (size_t i = 0; i < sum.size(); ++i) sum[i] += masked->data()[i];
  }
  // Entry variance under inverted dropout is a^2 p/(1-p).
  for (size_t i = 0; i < sum.size(); ++i) {
    const double a = acts->data()[i];
    const double sigma = std::abs(a) * std::sqrt(p / (1 - p) / samples);
    CHECK(std::abs(sum[i] / samples - a) <= 4.0 * sigma);
  }
}

TEST_CASE("gradients through frozen masked paths match finite differences") {
  Rng rng(81);
  const size_t in = 4, out = 3, batch = 2, timesteps = 3;
  auto params = init_lstm_layer(in, out, rng.fork("p"));
  auto x = random_tensor({timesteps * batch, in}, rng, false);
  auto in_mask = sample_variational_mask(batch, in, 0.4, rng);
  auto u_mask = sample_weight_drop_mask(params.u->shape(), 0.5, rng);
  auto build = [&](Graph& g) {
    auto fwd = lstm_layer_forward(g, params, x, timesteps,
                                  zero_state(batch, out), in_mask, u_mask);
    return g.mean_all(g.square(fwd.stacked));
  };
  CHECK(finite_difference_check(build, {params.w, params.u, params.b}, 1e-5) <
        1e-4);
}

TEST_CASE("stack forward chains layers and reports per-layer traces") {
  Rng rng(91);
  auto l1 = init_lstm_layer(4, 6, rng.fork("a"));
  auto l2 = init_lstm_layer(6, 6, rng.fork("b"));
  auto l3 = init_lstm_layer(6, 4, rng.fork("c"));
  auto x = random_tensor({5 * 2, 4}, rng, false);
  std::vector<LstmState> init{zero_state(2, 6), zero_state(2, 6),
                              zero_state(2, 4)};
  StackMasks masks;
  Graph g;
  auto traces =
      lstm_stack_forward(g, {&l1, &l2, &l3}, x, 5, init, masks);
  REQUIRE(traces.size() == 3);
  CHECK(traces[0].stacked->shape() == Shape{10, 6});
  CHECK(traces[2].stacked->shape() == Shape{10, 4});
  CHECK(traces[2].steps.size() == 5);

  CHECK_THROWS_AS(
      lstm_stack_forward(g, {&l1, &l2}, x, 5, init, masks),
      DimensionError);
}
