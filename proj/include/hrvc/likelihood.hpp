#pragma once

#include "hrvc/autodiff.hpp"

namespace hrvc {

inline constexpr double kProbFloor = 2.3283064365386963e-10;  // 2^-32
inline constexpr double kSigmaMin = 1e-6;

enum class QuantMode { Noise, Round };

inline double round_half_away(double v) {
  return v >= 0.0 ? std::floor(v + 0.5) : std::ceil(v - 0.5);
}

// Standard normal CDF.
inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

inline double std_normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi);
}

// p(z) = Phi((z - mu + 0.5)/sigma) - Phi((z - mu - 0.5)/sigma).
inline double dg_prob_scalar(double z, double mu, double sigma) {
  sigma = std::max(sigma, kSigmaMin);
  double hi = (z - mu + 0.5) / sigma;
  double lo = (z - mu - 0.5) / sigma;
  // Evaluate in the tail-stable direction.
  if (hi + lo > 0.0)
    return std_normal_cdf(-lo) - std_normal_cdf(-hi);
  return std_normal_cdf(hi) - std_normal_cdf(lo);
}

namespace ad {

// Quantize a latent. Noise mode adds independent U(-0.5, 0.5) per element;
// round mode rounds half away from zero with straight-through gradients.
inline Var quantize(const Var& y, QuantMode mode, Rng* rng = nullptr) {
  if (!y->val.all_finite())
    throw NumericalError("quantize: non-finite latent");
  if (mode == QuantMode::Noise) {
    check(rng != nullptr, "quantize: noise mode needs an rng");
    Tensor u(y->val.shape());
    for (auto& v : u.vec()) v = rng->uniform() - 0.5;
    return add(y, constant(std::move(u)));
  }
  Tensor out = y->val;
  for (auto& v : out.vec()) v = round_half_away(v);
  return detail::make_result(std::move(out), {y}, [](Node& n) {
    Tensor& g = n.parents[0]->grad_ref();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
  });
}

// Per-element probability of z under the discretized Gaussian N(mu, sigma).
// Differentiable in z, mu and sigma.
inline Var dg_likelihood(const Var& z, const Var& mu, const Var& sigma) {
  check(z->val.shape() == mu->val.shape() &&
            z->val.shape() == sigma->val.shape(),
        "dg_likelihood: shape mismatch");
  Tensor out(z->val.shape());
  for (int64_t i = 0; i < out.numel(); ++i)
    out[i] = dg_prob_scalar(z->val[i], mu->val[i], sigma->val[i]);
  return detail::make_result(std::move(out), {z, mu, sigma}, [](Node& n) {
    const Var& z = n.parents[0];
    const Var& mu = n.parents[1];
    const Var& sg = n.parents[2];
    for (int64_t i = 0; i < n.grad.numel(); ++i) {
      double g = n.grad[i];
      if (g == 0.0) continue;
      double s = std::max(sg->val[i], kSigmaMin);
      double hi = (z->val[i] - mu->val[i] + 0.5) / s;
      double lo = (z->val[i] - mu->val[i] - 0.5) / s;
      double phi_hi = std_normal_pdf(hi), phi_lo = std_normal_pdf(lo);
      double dpdz = (phi_hi - phi_lo) / s;
      if (z->requires_grad) z->grad_ref()[i] += g * dpdz;
      if (mu->requires_grad) mu->grad_ref()[i] -= g * dpdz;
      if (sg->requires_grad && sg->val[i] > kSigmaMin)
        sg->grad_ref()[i] -= g * (phi_hi * hi - phi_lo * lo) / s;
    }
  });
}

// Total code length in bits: -sum log2 max(p, 2^-32).
inline Var rate_bits(const Var& probs) {
  return mul_scalar(sum(log_op(clamp_min(probs, kProbFloor))),
                    -1.0 / std::log(2.0));
}

}  // namespace ad

inline double rate_bits(const Tensor& probs) {
  double acc = 0.0;
  for (int64_t i = 0; i < probs.numel(); ++i)
    acc -= std::log2(std::max(probs[i], kProbFloor));
  return acc;
}

// ---------------------------------------------------------------------------
// Learned factorized prior for hyper-latents: per channel, a small monotone
// transform chain whose sigmoid is the CDF (filters 1 -> 3 -> 3 -> 1, gated
// tanh between layers, softplus-reparameterized non-negative weights).
class FactorizedModel {
public:
  static constexpr int kFilters[4] = {1, 3, 3, 1};
  static constexpr int kLayers = 3;

  FactorizedModel() = default;
  explicit FactorizedModel(int channels, Rng& rng) : channels_(channels) {
    for (int l = 0; l < kLayers; ++l) {
      int di = kFilters[l], dout = kFilters[l + 1];
      Tensor w(Shape(1, channels, dout, di));
      // softplus(w) ~= 1/di at init, so the chain starts near a unit-scale
      // logistic CDF.
      double w0 = std::log(std::expm1(1.0 / di));
      for (auto& v : w.vec()) v = w0;
      Tensor b(Shape(1, channels, dout, 1));
      for (auto& v : b.vec()) v = rng.uniform(-0.5, 0.5);
      w_.push_back(ad::make_var(std::move(w), true, "factorized.w" + std::to_string(l)));
      b_.push_back(ad::make_var(std::move(b), true, "factorized.b" + std::to_string(l)));
      if (l + 1 < kLayers) {
        Tensor a(Shape(1, channels, dout, 1));
        a_.push_back(ad::make_var(std::move(a), true, "factorized.a" + std::to_string(l)));
      }
    }
  }

  int channels() const { return channels_; }

  std::vector<ad::Var> params() const {
    std::vector<ad::Var> ps;
    for (const auto& v : w_) ps.push_back(v);
    for (const auto& v : b_) ps.push_back(v);
    for (const auto& v : a_) ps.push_back(v);
    return ps;
  }

  // Logits of the CDF at x; x: (N, C, 1, M).
  ad::Var logits(ad::Var x) const {
    for (int l = 0; l < kLayers; ++l) {
      ad::Var v = ad::channelwise_linear(x, ad::softplus(w_[l]), b_[l]);
      if (l + 1 < kLayers)
        x = ad::add(v, ad::mul_bcast_lastdim(ad::tanh_op(v), ad::tanh_op(a_[l])));
      else
        x = v;
    }
    return x;
  }

  // Per-element probability F(z+0.5) - F(z-0.5), floored at 2^-32.
  // z: any (N, C, h, w) tensor; channel count must match the model.
  ad::Var likelihood(const ad::Var& z) const {
    const Shape& s = z->val.shape();
    check(s.c == channels_, "factorized likelihood: channel mismatch");
    ad::Var flat = ad::reshape(z, Shape(s.n, s.c, 1, s.h * s.w));
    ad::Var hi = ad::sigmoid(logits(ad::add_scalar(flat, 0.5)));
    ad::Var lo = ad::sigmoid(logits(ad::add_scalar(flat, -0.5)));
    ad::Var p = ad::clamp_min(ad::sub(hi, lo), kProbFloor);
    return ad::reshape(p, s);
  }

  // Scalar CDF for table building (no autodiff).
  double cdf_scalar(int channel, double x) const {
    double u[3] = {x, 0.0, 0.0};
    for (int l = 0; l < kLayers; ++l) {
      int di = kFilters[l], dout = kFilters[l + 1];
      double v[3];
      for (int o = 0; o < dout; ++o) {
        double acc = b_[l]->val.at(0, channel, o, 0);
        for (int i = 0; i < di; ++i) {
          double wr = w_[l]->val.at(0, channel, o, i);
          double wp = wr > 30.0 ? wr : std::log1p(std::exp(wr));
          acc += wp * u[i];
        }
        v[o] = acc;
      }
      if (l + 1 < kLayers) {
        for (int o = 0; o < dout; ++o) {
          double g = std::tanh(a_[l]->val.at(0, channel, o, 0));
          u[o] = v[o] + g * std::tanh(v[o]);
        }
      } else {
        u[0] = v[0];
      }
    }
    return 1.0 / (1.0 + std::exp(-u[0]));
  }

  double prob_scalar(int channel, double z) const {
    return std::max(cdf_scalar(channel, z + 0.5) - cdf_scalar(channel, z - 0.5),
                    kProbFloor);
  }

  // Named parameter access for checkpointing.
  std::vector<std::pair<std::string, ad::Var>> named_params(
      const std::string& prefix) const {
    std::vector<std::pair<std::string, ad::Var>> out;
    for (int l = 0; l < kLayers; ++l) {
      out.push_back({prefix + ".w" + std::to_string(l), w_[l]});
      out.push_back({prefix + ".b" + std::to_string(l), b_[l]});
      if (l + 1 < kLayers)
        out.push_back({prefix + ".a" + std::to_string(l), a_[l]});
    }
    return out;
  }

private:
  int channels_ = 0;
  std::vector<ad::Var> w_, b_, a_;
};

}  // namespace hrvc
