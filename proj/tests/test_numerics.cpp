#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "fd_check.hpp"
#include "ulim/layers.hpp"
#include "ulim/rng.hpp"
#include "ulim/tape.hpp"
#include "ulim/tensor.hpp"

using namespace ulim;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t({r, c});
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

// Independent triple-loop product in double.
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  Tensor out({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k)
        acc += static_cast<double>(a.at(i, k)) * static_cast<double>(b.at(k, j));
      out.at(i, j) = static_cast<float>(acc);
    }
  return out;
}

}  // namespace

TEST_CASE("matmul identity and hand cases") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {1, 2, 3, 4});
  Tensor r = matmul(eye, m);
  for (std::size_t i = 0; i < 4; ++i) CHECK(r[i] == doctest::Approx(m[i]));

  Tensor a({1, 2}, {1, 0});
  Tensor b({2, 1}, {0, 5});
  CHECK(matmul(a, b)[0] == doctest::Approx(0.0));
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(7);
  Tensor a = random_tensor(3, 4, rng);
  Tensor b = random_tensor(4, 2, rng);
  Tensor got = matmul(a, b);
  Tensor want = matmul_oracle(a, b);
  for (std::size_t i = 0; i < got.size(); ++i)
    CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-6));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a({2, 3});
  Tensor b({2, 3});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), DimensionError);
}

TEST_CASE("softmax basics") {
  Tensor x({2}, {0, 0});
  Tensor y = softmax(x);
  CHECK(y[0] == doctest::Approx(0.5));
  CHECK(y[1] == doctest::Approx(0.5));

  Tensor big({2}, {1000, 0});
  Tensor yb = softmax(big);
  CHECK(yb[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(yb[1] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(yb.all_finite());

  Tensor z({3}, {1, 2, 3});
  Tensor yz = softmax(z);
  double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i)
    CHECK(yz[static_cast<std::size_t>(i)] ==
          doctest::Approx(std::exp(i + 1.0) / denom).epsilon(1e-6));

  CHECK_THROWS_AS(softmax(Tensor({0})), DimensionError);
  CHECK_THROWS_AS(softmax(z, 0.0), ConfigError);
}

TEST_CASE("softmax properties: normalization and shift invariance") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t n = 1 + rng.next_below(8);
    Tensor x({n});
    for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<float>(rng.uniform(-5, 5));
    Tensor y = softmax(x);
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(y[i] >= 0.0f);
      sum += y[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    Tensor shifted = x;
    for (std::size_t i = 0; i < n; ++i) shifted[i] += 3.25f;
    Tensor ys = softmax(shifted);
    for (std::size_t i = 0; i < n; ++i)
      CHECK(ys[i] == doctest::Approx(y[i]).epsilon(1e-6));
  }
}

TEST_CASE("softmax temperature sharpens") {
  Tensor z({2}, {1, 0});
  Tensor cold = softmax(z, 0.1);
  Tensor hot = softmax(z, 10.0);
  CHECK(cold[0] > hot[0]);
}

TEST_CASE("mhsa single token: attention weight is exactly 1") {
  Rng rng(3);
  ParamStore store;
  const std::size_t d = 8;
  init_mhsa(store, "m", d, rng);
  Tensor x = random_tensor(1, d, rng);
  Tensor got = mhsa_forward(x, store, "m", 2);
  // weight 1 => out = (x Wv) Wo
  Tensor want = matmul_oracle(matmul_oracle(x, store.get("m.wv")), store.get("m.wo"));
  for (std::size_t i = 0; i < d; ++i)
    CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-5));
}

TEST_CASE("mhsa pooled output is permutation invariant without positions") {
  Rng rng(5);
  ParamStore store;
  const std::size_t d = 8;
  init_mhsa(store, "m", d, rng);
  Tensor x = random_tensor(5, d, rng);
  Tensor perm({5, d});
  std::vector<std::size_t> order = {3, 0, 4, 1, 2};
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < d; ++c) perm.at(r, c) = x.at(order[r], c);
  auto pool = [&](const Tensor& seq) {
    Tensor o = mhsa_forward(seq, store, "m", 2);
    Tensor p({1, d});
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0;
      for (std::size_t r = 0; r < o.rows(); ++r) acc += o.at(r, c);
      p[c] = static_cast<float>(acc / static_cast<double>(o.rows()));
    }
    return p;
  };
  Tensor a = pool(x), b = pool(perm);
  for (std::size_t c = 0; c < d; ++c)
    CHECK(a[c] == doctest::Approx(b[c]).epsilon(1e-5));
}

TEST_CASE("mhsa matches per-head loop oracle") {
  Rng rng(9);
  ParamStore store;
  const std::size_t d = 8, T = 5;
  const int heads = 2;
  init_mhsa(store, "m", d, rng);
  Tensor x = random_tensor(T, d, rng);

  Tensor q = matmul_oracle(x, store.get("m.wq"));
  Tensor k = matmul_oracle(x, store.get("m.wk"));
  Tensor v = matmul_oracle(x, store.get("m.wv"));
  const std::size_t dh = d / heads;
  Tensor cat({T, d});
  for (int h = 0; h < heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * dh;
    for (std::size_t i = 0; i < T; ++i) {
      std::vector<double> scores(T);
      double mx = -1e300;
      for (std::size_t j = 0; j < T; ++j) {
        double s = 0;
        for (std::size_t c = 0; c < dh; ++c)
          s += static_cast<double>(q.at(i, off + c)) * k.at(j, off + c);
        scores[j] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, scores[j]);
      }
      double denom = 0;
      for (std::size_t j = 0; j < T; ++j) denom += std::exp(scores[j] - mx);
      double total_check = 0.0;
      for (std::size_t c = 0; c < dh; ++c) {
        double acc = 0;
        for (std::size_t j = 0; j < T; ++j) {
          const double w = std::exp(scores[j] - mx) / denom;
          acc += w * v.at(j, off + c);
          if (c == 0) total_check += w;
        }
        cat.at(i, off + c) = static_cast<float>(acc);
      }
      // attention row is a probability simplex
      CHECK(total_check == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
  Tensor want = matmul_oracle(cat, store.get("m.wo"));
  Tensor got = mhsa_forward(x, store, "m", heads);
  for (std::size_t i = 0; i < got.size(); ++i)
    CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-5));
}

TEST_CASE("mhsa config errors") {
  Rng rng(1);
  ParamStore store;
  init_mhsa(store, "m", 6, rng);
  Tensor x = random_tensor(2, 6, rng);
  CHECK_THROWS_AS(mhsa_forward(x, store, "m", 4), ConfigError);
}

TEST_CASE("target attention trivial and oracle cases") {
  Rng rng(13);
  ParamStore store;
  const std::size_t d = 6;
  init_target_attention(store, "t", d, rng);
  Tensor q = random_tensor(1, d, rng);

  SUBCASE("single key: weight 1") {
    Tensor kv = random_tensor(1, d, rng);
    Tensor got = target_attention_forward(q, kv, kv, store, "t");
    Tensor want = matmul_oracle(kv, store.get("t.wp"));
    for (std::size_t i = 0; i < d; ++i)
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-6));
  }

  SUBCASE("identical keys: uniform mean of values") {
    Tensor keys({3, d});
    Tensor key = random_tensor(1, d, rng);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < d; ++c) keys.at(r, c) = key[c];
    Tensor values = random_tensor(3, d, rng);
    Tensor mean({1, d});
    for (std::size_t c = 0; c < d; ++c)
      mean[c] = (values.at(0, c) + values.at(1, c) + values.at(2, c)) / 3.0f;
    Tensor got = target_attention_forward(q, keys, values, store, "t");
    Tensor want = matmul_oracle(mean, store.get("t.wp"));
    for (std::size_t i = 0; i < d; ++i)
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-5));
  }

  SUBCASE("random T=4 matches loop oracle") {
    Tensor keys = random_tensor(4, d, rng);
    Tensor values = random_tensor(4, d, rng);
    std::vector<double> scores(4);
    double mx = -1e300;
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < d; ++c)
        s += static_cast<double>(q[c]) * keys.at(j, c);
      scores[j] = s / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, scores[j]);
    }
    double denom = 0;
    for (double s : scores) denom += std::exp(s - mx);
    Tensor ctx({1, d});
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0;
      for (std::size_t j = 0; j < 4; ++j)
        acc += std::exp(scores[j] - mx) / denom * values.at(j, c);
      ctx[c] = static_cast<float>(acc);
    }
    Tensor want = matmul_oracle(ctx, store.get("t.wp"));
    Tensor got = target_attention_forward(q, keys, values, store, "t");
    for (std::size_t i = 0; i < d; ++i)
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-5));
  }

  SUBCASE("empty key sequence throws") {
    Tensor keys({0, d});
    CHECK_THROWS_AS(target_attention_forward(q, keys, keys, store, "t"), DimensionError);
  }
}

TEST_CASE("mlp trivial and oracle cases") {
  Rng rng(17);
  ParamStore store;
  init_mlp(store, "p", {4, 3, 2}, rng);

  SUBCASE("zero weights and bias give zero output") {
    ParamStore zero;
    Rng r2(1);
    init_mlp(zero, "p", {4, 3, 2}, r2);
    for (auto& [name, t] : zero)
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.0f;
    Tensor x = random_tensor(1, 4, rng);
    Tensor y = mlp_forward(x, zero, "p");
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(0.0));
  }

  SUBCASE("single linear layer equals matmul plus bias") {
    ParamStore lin;
    Rng r2(2);
    init_mlp(lin, "l", {4, 2}, r2);
    for (std::size_t i = 0; i < 2; ++i) lin.get("l.b0")[i] = static_cast<float>(i) + 0.5f;
    Tensor x = random_tensor(1, 4, rng);
    Tensor y = mlp_forward(x, lin, "l");
    Tensor want = matmul_oracle(x, lin.get("l.w0"));
    for (std::size_t i = 0; i < 2; ++i)
      CHECK(y[i] == doctest::Approx(want[i] + lin.get("l.b0")[i]).epsilon(1e-6));
  }

  SUBCASE("two layers match loop oracle") {
    Tensor x = random_tensor(1, 4, rng);
    Tensor h = matmul_oracle(x, store.get("p.w0"));
    for (std::size_t i = 0; i < h.size(); ++i) {
      h[i] += store.get("p.b0")[i];
      h[i] = std::max(h[i], 0.0f);
    }
    Tensor want = matmul_oracle(h, store.get("p.w1"));
    for (std::size_t i = 0; i < want.size(); ++i) want[i] += store.get("p.b1")[i];
    Tensor got = mlp_forward(x, store, "p");
    for (std::size_t i = 0; i < got.size(); ++i)
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-5));
  }

  SUBCASE("size mismatch surfaces as dimension error") {
    Tensor x = random_tensor(1, 5, rng);
    CHECK_THROWS_AS(mlp_forward(x, store, "p"), DimensionError);
  }
}

TEST_CASE("backward: softmax cross-entropy closed form p - y") {
  ParamStore store;
  store.add_zeros("logits", 1, 2);
  Tape tape;
  Tape::VarId loss = tape.nll_from_logits(tape.param("logits", store.get("logits")), 0);
  tape.backward(loss);
  const auto& g = tape.param_grads().at("logits");
  CHECK(g[0] == doctest::Approx(-0.5));
  CHECK(g[1] == doctest::Approx(0.5));
}

TEST_CASE("backward before forward is a state error") {
  Tape tape;
  CHECK_THROWS_AS(tape.param_grads(), StateError);
  CHECK_THROWS_AS(tape.backward(0), StateError);
}

TEST_CASE("backward: average pooling distributes 1/T") {
  ParamStore store;
  Rng rng(21);
  store.add("x", 4, 3, rng);
  Tape tape;
  Tape::VarId pooled = tape.mean_rows(tape.param("x", store.get("x")));
  // sum the pooled entries so every column contributes
  Tape::VarId ones = tape.input(Tensor({1, 3}, {1, 1, 1}));
  Tape::VarId loss = tape.matmul_nt(pooled, ones);
  tape.backward(loss);
  const auto& g = tape.param_grads().at("x");
  for (double v : g) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("finite differences: mhsa + target attention + mlp composite") {
  Rng rng(29);
  ParamStore store;
  const std::size_t d = 8;
  init_mhsa(store, "m", d, rng);
  init_target_attention(store, "t", d, rng);
  init_mlp(store, "p", {d, 4, 1}, rng);
  Tensor seq({5, d});
  for (std::size_t i = 0; i < seq.size(); ++i)
    seq[i] = static_cast<float>(rng.uniform(-1, 1));
  Tensor query({1, d});
  for (std::size_t i = 0; i < d; ++i) query[i] = static_cast<float>(rng.uniform(-1, 1));

  auto build = [&](Tape& tape, const ParamStore& p) {
    Tape::VarId enc = mhsa(tape, p, "m", tape.input(seq), 2);
    Tape::VarId att = target_attention(tape, p, "t", tape.input(query), enc, enc);
    return mlp(tape, p, "p", att);
  };
  auto report = ulim::testing::fd_check_all(store, build);
  INFO("worst: ", report.worst_param, " rel err ", report.max_rel_err);
  CHECK(report.checked > 0);
  CHECK(report.max_rel_err < 1e-3);
}

TEST_CASE("forward ops on finite inputs stay finite") {
  Rng rng(31);
  ParamStore store;
  init_mhsa(store, "m", 4, rng);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x({3, 4});
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i] = static_cast<float>(rng.uniform(-50, 50));
    CHECK(mhsa_forward(x, store, "m", 2).all_finite());
  }
}
