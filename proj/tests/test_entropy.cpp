#include <catch2/catch_amalgamated.hpp>

#include <map>

#include "hrvc/range_coder.hpp"

using namespace hrvc;

TEST_CASE("quantize rounds half away from zero") {
  Tensor t(Shape::vec(4));
  t[0] = 2.4;
  t[1] = -2.5;
  t[2] = 2.5;
  t[3] = -0.49;
  auto q = ad::quantize(ad::constant(t), QuantMode::Round);
  CHECK(q->val[0] == 2.0);
  CHECK(q->val[1] == -3.0);
  CHECK(q->val[2] == 3.0);
  CHECK(q->val[3] == 0.0);

  Tensor bad(Shape::vec(1));
  bad[0] = std::nan("");
  REQUIRE_THROWS_AS(ad::quantize(ad::constant(bad), QuantMode::Round),
                    NumericalError);
}

TEST_CASE("noise quantization stays within +-0.5 and is unbiased") {
  Rng rng(11);
  const int n = 100000;
  Tensor t(Shape::vec(n), 0.73);
  auto q = ad::quantize(ad::constant(t), QuantMode::Noise, &rng);
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    CHECK(std::abs(q->val[i] - 0.73) <= 0.5);
    acc += q->val[i];
  }
  // std of the mean estimator: (1/sqrt(12)) / sqrt(n)
  double tol = 3.0 / std::sqrt(12.0 * n);
  CHECK(std::abs(acc / n - 0.73) <= tol);
}

TEST_CASE("discretized Gaussian values") {
  SECTION("p(0; 0, 1) against the erf oracle") {
    double oracle = 0.5 * (std::erf(0.5 / std::sqrt(2.0)) -
                           std::erf(-0.5 / std::sqrt(2.0)));
    CHECK(dg_prob_scalar(0.0, 0.0, 1.0) == Catch::Approx(oracle).margin(1e-12));
    CHECK(dg_prob_scalar(0.0, 0.0, 1.0) == Catch::Approx(0.382925).margin(1e-5));
  }

  SECTION("pmf sums to one") {
    for (double sigma : {0.3, 1.0, 4.2, 10.0}) {
      double acc = 0.0;
      for (int z = -1000; z <= 1000; ++z)
        acc += dg_prob_scalar(z, 0.37, sigma);
      CHECK(acc == Catch::Approx(1.0).margin(1e-6));
    }
  }

  SECTION("tiny sigma concentrates all mass at round(mu)") {
    CHECK(dg_prob_scalar(0.0, 0.3, kSigmaMin) >= 1.0 - 1e-6);
  }
}

TEST_CASE("dg_likelihood gradients match finite differences") {
  Rng rng(12);
  const int n = 64;
  Tensor zt(Shape::vec(n)), mt(Shape::vec(n)), st(Shape::vec(n));
  for (int i = 0; i < n; ++i) {
    zt[i] = rng.uniform(-2, 2);
    mt[i] = rng.uniform(-2, 2);
    st[i] = rng.uniform(0.4, 3.0);
  }
  auto z = ad::make_var(zt, true);
  auto mu = ad::make_var(mt, true);
  auto sg = ad::make_var(st, true);
  auto loss_of = [&]() {
    return ad::rate_bits(ad::dg_likelihood(z, mu, sg));
  };
  auto loss = loss_of();
  ad::backward(loss);
  auto f = [&]() { return loss_of()->val[0]; };
  for (auto [var, fd] : {std::pair{z, ad::finite_diff_grad(z, f)},
                         std::pair{mu, ad::finite_diff_grad(mu, f)},
                         std::pair{sg, ad::finite_diff_grad(sg, f)}}) {
    for (int i = 0; i < n; ++i)
      if (std::abs(var->grad[i]) > 1e-4)
        CHECK(std::abs(fd[i] - var->grad[i]) /
                  std::max(1e-8, std::abs(var->grad[i])) <=
              1e-2);
  }
}

TEST_CASE("rate_bits") {
  Tensor p(Shape::vec(8), 0.5);
  CHECK(rate_bits(p) == Catch::Approx(8.0));
  p.fill(1.0);
  CHECK(rate_bits(p) == Catch::Approx(0.0));
}

TEST_CASE("rate estimate is invariant to layout") {
  Rng rng(13);
  Tensor p(Shape::chw(4, 5, 6));
  for (auto& v : p.vec()) v = rng.uniform(0.01, 1.0);
  double a = rate_bits(p);
  // reversed iteration order
  Tensor q(Shape::chw(6, 5, 4));
  for (int64_t i = 0; i < p.numel(); ++i) q[i] = p[p.numel() - 1 - i];
  CHECK(rate_bits(q) == Catch::Approx(a).margin(1e-9));
}

TEST_CASE("factorized model: fresh init is a valid distribution") {
  Rng rng(14);
  FactorizedModel m(4, rng);
  for (int c = 0; c < 4; ++c) {
    double acc = 0.0;
    double prev = -1.0;
    for (int z = -64; z <= 64; ++z) {
      double p = m.prob_scalar(c, z);
      CHECK(p > 0.0);
      acc += p;
      double f = m.cdf_scalar(c, z + 0.5);
      CHECK(f >= prev);  // monotone on the grid
      prev = f;
    }
    CHECK(acc <= 1.0 + 1e-6);
  }
}

TEST_CASE("factorized model fits a unit Gaussian within 0.1 bits") {
  Rng rng(15);
  FactorizedModel m(1, rng);
  const int n = 4096;
  Tensor samples(Shape::chw(1, 1, n));
  for (auto& v : samples.vec()) v = round_half_away(rng.normal());

  // Adam on -log2 likelihood.
  auto params = m.params();
  std::vector<Tensor> mom, vel;
  for (auto& p : params) {
    mom.emplace_back(p->val.shape());
    vel.emplace_back(p->val.shape());
  }
  const double lr = 0.02, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int step = 1; step <= 400; ++step) {
    for (auto& p : params) p->zero_grad();
    auto bits = ad::rate_bits(m.likelihood(ad::constant(samples)));
    ad::backward(bits);
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor& g = params[i]->grad_ref();
      for (int64_t j = 0; j < g.numel(); ++j) {
        mom[i][j] = b1 * mom[i][j] + (1 - b1) * g[j];
        vel[i][j] = b2 * vel[i][j] + (1 - b2) * g[j] * g[j];
        double mh = mom[i][j] / (1 - std::pow(b1, step));
        double vh = vel[i][j] / (1 - std::pow(b2, step));
        params[i]->val[j] -= lr * mh / (std::sqrt(vh) + eps);
      }
    }
  }

  // KL(empirical || model) via histogram.
  std::map<int, int> hist;
  for (int64_t i = 0; i < n; ++i) hist[int(samples[i])]++;
  double kl = 0.0;
  for (auto [z, cnt] : hist) {
    double q = double(cnt) / n;
    kl += q * std::log2(q / m.prob_scalar(0, z));
  }
  CHECK(kl <= 0.1);
}

TEST_CASE("range coder round trip on hand-built tables") {
  std::vector<double> probs = {0.7, 0.2, 0.05, 0.05};
  auto cum = cumulative(quantize_freqs(probs));
  REQUIRE(cum.back() == 65536);

  Rng rng(16);
  std::vector<size_t> syms;
  for (int i = 0; i < 5000; ++i) {
    double u = rng.uniform();
    size_t s = u < 0.7 ? 0 : u < 0.9 ? 1 : u < 0.95 ? 2 : 3;
    syms.push_back(s);
  }
  RangeEncoder enc;
  for (size_t s : syms) enc.encode(cum[s], cum[s + 1] - cum[s]);
  auto bytes = enc.finish();

  RangeDecoder dec(bytes);
  for (size_t s : syms) {
    uint32_t f = dec.decode_freq();
    size_t got = find_symbol(cum, f);
    dec.decode_update(cum[got], cum[got + 1] - cum[got]);
    REQUIRE(got == s);
  }
}

TEST_CASE("gaussian coding: round trip, length bound, degenerate cases") {
  Rng rng(17);

  SECTION("empty latent costs only the flush bytes") {
    RangeEncoder enc;
    auto bytes = enc.finish();
    CHECK(bytes.size() <= 8);
  }

  SECTION("all-zeros under a peaked prior is nearly free") {
    const int n = 1024;
    Tensor z(Shape::vec(n), 0.0), mu(Shape::vec(n), 0.0), sg(Shape::vec(n), 0.05);
    RangeEncoder enc;
    gaussian_code::encode(enc, z, mu, sg);
    auto bytes = enc.finish();
    CHECK(bytes.size() <= 16);
    RangeDecoder dec(bytes);
    Tensor back = gaussian_code::decode(dec, mu, sg);
    CHECK(max_abs_diff(back, z) == 0.0);
  }

  SECTION("10^4 latents drawn from the prior: lossless and near-optimal") {
    const int n = 10000;
    Tensor z(Shape::vec(n)), mu(Shape::vec(n)), sg(Shape::vec(n));
    Tensor probs(Shape::vec(n));
    for (int i = 0; i < n; ++i) {
      mu[i] = rng.uniform(-20, 20);
      sg[i] = std::exp(rng.uniform(std::log(0.1), std::log(8.0)));
      z[i] = round_half_away(mu[i] + sg[i] * rng.normal());
      probs[i] = dg_prob_scalar(z[i], mu[i], sg[i]);
    }
    double estimated = rate_bits(probs);
    RangeEncoder enc;
    gaussian_code::encode(enc, z, mu, sg);
    auto bytes = enc.finish();
    double exact = 8.0 * double(bytes.size());
    CHECK(exact <= 1.02 * estimated + 64.0);

    RangeDecoder dec(bytes);
    Tensor back = gaussian_code::decode(dec, mu, sg);
    CHECK(max_abs_diff(back, z) == 0.0);
  }

  SECTION("outliers survive via escape coding") {
    const int n = 64;
    Tensor z(Shape::vec(n)), mu(Shape::vec(n), 0.0), sg(Shape::vec(n), 0.3);
    for (int i = 0; i < n; ++i) z[i] = (i % 7 == 0) ? 5000.0 - i : double(i % 3);
    RangeEncoder enc;
    gaussian_code::encode(enc, z, mu, sg);
    auto bytes = enc.finish();
    RangeDecoder dec(bytes);
    Tensor back = gaussian_code::decode(dec, mu, sg);
    CHECK(max_abs_diff(back, z) == 0.0);
  }
}

TEST_CASE("factorized coding round trip") {
  Rng rng(18);
  FactorizedModel m(8, rng);
  Tensor z(Shape::chw(8, 6, 6));
  for (auto& v : z.vec()) v = round_half_away(2.5 * rng.normal());
  z[0] = 900.0;  // force one escape
  FactorizedTables tables(m);
  RangeEncoder enc;
  tables.encode(enc, z);
  auto bytes = enc.finish();
  RangeDecoder dec(bytes);
  Tensor back = tables.decode(dec, z.shape());
  CHECK(max_abs_diff(back, z) == 0.0);
}

TEST_CASE("rate_bits tracks actually coded length within 2% + 64 bits") {
  Rng rng(19);
  const int n = 8192;
  Tensor z(Shape::vec(n)), mu(Shape::vec(n)), sg(Shape::vec(n));
  Tensor probs(Shape::vec(n));
  for (int i = 0; i < n; ++i) {
    mu[i] = 0.0;
    sg[i] = 1.5;
    z[i] = round_half_away(sg[i] * rng.normal());
    probs[i] = dg_prob_scalar(z[i], mu[i], sg[i]);
  }
  double estimated = rate_bits(probs);
  RangeEncoder enc;
  gaussian_code::encode(enc, z, mu, sg);
  double exact = 8.0 * double(enc.finish().size());
  CHECK(exact <= 1.02 * estimated + 64.0);
  CHECK(exact >= 0.95 * estimated);  // not mysteriously under-counting
}

TEST_CASE("bit chunks serialize with checksum") {
  BitChunk c;
  c.tag = StreamTag::Flow;
  c.payload = {1, 2, 3, 4, 5};
  c.estimated_bits = 33.0;
  ByteWriter w;
  c.serialize(w);
  CHECK(w.buf().size() == 4 + 1 + 5 + 4);

  ByteReader r(w.buf().data(), w.buf().size());
  BitChunk d = BitChunk::deserialize(r);
  CHECK(d.tag == StreamTag::Flow);
  CHECK(d.payload == c.payload);
  CHECK(d.exact_bits() == 40);

  auto corrupted = w.buf();
  corrupted[6] ^= 0xFF;
  ByteReader r2(corrupted.data(), corrupted.size());
  REQUIRE_THROWS_WITH(BitChunk::deserialize(r2),
                      Catch::Matchers::ContainsSubstring("checksum"));
}
