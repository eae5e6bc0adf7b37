#pragma once

// Sampling of the measure pairs (mu_a, nu_a) built from a marked Poisson point
// measure with intensity dx l pi(dl) 1_[0,1](u) du on [0,a] x (delta,inf) x
// [0,1]: each mark contributes mass u*l to mu_a and (1-u)*l to nu_a at height
// x. Campbell-formula oracles, Laplace functionals, and the occupation-measure
// representation test
//   N[ int_0^sigma F(rho_t, eta_t) dt ] = int M(dmu dnu) F(mu, nu) - F(0,0)/c
// with M = int_0^inf da e^{-alpha0 a} M_a. The subtracted atom accounts for
// the creep time of the finite-activity system, where (rho, eta) = (0, 0)
// occupies 1/c of time per unit local time but never appears inside an
// excursion; it vanishes in the infinite-variation limit.

#include "lcrt/estimators.hpp"
#include "lcrt/exploration.hpp"
#include "lcrt/measure.hpp"
#include "lcrt/mechanism.hpp"
#include "lcrt/numeric.hpp"
#include "lcrt/rng.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

namespace lcrt {

// int_(lo,inf) l^q pi(dl); throws when the tail diverges.
inline double weighted_tail(const LevyMechanism& mech, double lo, double q) {
  auto pcs = mech.density_pieces();
  if (mech.theta() == 0.0)
    for (const auto& pc : pcs)
      if (std::isinf(pc.b) && pc.p + q >= -1.0)
        throw NumericError("weighted tail integral diverges", pc.p + q);
  return detail::pieces_integral(std::span(pcs), mech.theta(), lo, num::inf,
                                 [q](double l) { return std::pow(l, q); });
}

struct MarkedPoissonConfig {
  double a;           // height horizon
  LevyMechanism mech;
  double delta;       // small-jump cutoff of the l pi(dl) intensity
  std::uint64_t seed = 0;
  double dropped_mass_bound = 1e-2;  // cap on E of the mass lost below delta

  void validate() const {
    if (!(a > 0)) throw std::domain_error("marked poisson: a must be positive");
    if (!(delta > 0)) throw std::domain_error("marked poisson: delta must be positive");
    auto pcs = mech.density_pieces();
    const double dropped =
        0.5 * a *
        detail::pieces_integral(std::span(pcs), mech.theta(), 0.0, delta,
                                [](double l) { return l * l; });
    if (!(dropped <= dropped_mass_bound))
      throw std::domain_error("marked poisson: expected dropped mass above the bound");
  }
};

class MarkedPoissonSampler {
 public:
  explicit MarkedPoissonSampler(const MarkedPoissonConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    auto pcs = cfg.mech.density_pieces();
    size_biased_ = PiecewiseSampler(std::span(pcs), cfg.mech.theta(), cfg.delta, 1.0);
    rate_per_a_ = size_biased_.total_mass();  // int_(delta,inf) l pi(dl)
    if (!(cfg.a * rate_per_a_ <= 500.0))
      throw std::domain_error("marked poisson: mark intensity too large for exact sampling");
  }

  double mark_rate_per_unit_height() const { return rate_per_a_; }

  std::pair<AtomicMeasure, AtomicMeasure> sample_pair(SplitMix64& rng) const {
    const double mean = cfg_.a * rate_per_a_;
    std::size_t count = 0;
    double acc = rng.exponential(1.0);
    while (acc <= mean) {
      ++count;
      acc += rng.exponential(1.0);
    }
    std::vector<Atom> mu, nu;
    mu.reserve(count);
    nu.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
      const double x = cfg_.a * rng.uniform01();
      const double l = size_biased_.sample(rng);
      const double u = rng.uniform01();
      if (u > 0) mu.push_back({x, u * l});
      if (u < 1) nu.push_back({x, (1.0 - u) * l});
    }
    return {AtomicMeasure(std::move(mu)), AtomicMeasure(std::move(nu))};
  }

 private:
  MarkedPoissonConfig cfg_;
  PiecewiseSampler size_biased_;
  double rate_per_a_ = 0;
};

inline std::pair<AtomicMeasure, AtomicMeasure> sample_pair(const MarkedPoissonConfig& cfg,
                                                           SplitMix64& rng) {
  return MarkedPoissonSampler(cfg).sample_pair(rng);
}

// Campbell formula: E<mu_a, 1> = E<nu_a, 1> = (a/2) int_(delta,inf) l^2 pi(dl);
// throws when the second-moment tail diverges (heavy-tailed mechanisms).
inline double campbell_mass_mean(const LevyMechanism& mech, double delta, double a) {
  return 0.5 * a * weighted_tail(mech, delta, 2.0);
}

// Var<mu_a, 1> = (a/3) int_(delta,inf) l^3 pi(dl) when finite.
inline double campbell_mass_var(const LevyMechanism& mech, double delta, double a) {
  return a / 3.0 * weighted_tail(mech, delta, 3.0);
}

namespace detail {

// W(v) = int_(delta,inf) l (1 - e^{-v l}) pi(dl), compressed to a Chebyshev
// interpolant over the needed range.
inline num::Chebyshev make_mark_exponent(const LevyMechanism& mech, double delta, double vmax) {
  auto pcs = mech.density_pieces();
  auto W = [&](double v) {
    return pieces_integral(std::span(pcs), mech.theta(), delta, num::inf,
                           [v](double l) { return l * one_m_exp(v * l); });
  };
  return num::Chebyshev(W, 0.0, std::max(vmax * 1.05, 1e-6), 48);
}

}  // namespace detail

// E[e^{-s <mu_a,1>}] = exp{ -a int_0^1 W(s u) du }
inline double laplace_mass_closed_form(const LevyMechanism& mech, double delta, double a,
                                       double s) {
  auto W = detail::make_mark_exponent(mech, delta, s);
  const double inner = num::integrate([&](double u) { return W(s * u); }, 0.0, 1.0, 1e-11);
  return std::exp(-a * inner);
}

// E[e^{-<mu_a,f> - gamma <nu_a,1>}] = exp{ -int_0^a dx int_0^1 du W(u f(x) + gamma (1-u)) }
inline double pair_exponential_closed_form(const LevyMechanism& mech, double delta,
                                           const TestFunction& f, double gamma, double a) {
  const double vmax = std::max(f.sup_f, gamma);
  auto W = detail::make_mark_exponent(mech, delta, vmax);
  auto inner = [&](double x) {
    const double fx = f.f(x);
    return num::integrate([&](double u) { return W(u * fx + gamma * (1.0 - u)); }, 0.0, 1.0,
                          1e-11);
  };
  return std::exp(-num::integrate(inner, 0.0, a, 1e-10));
}

// ---------------------------------------------------------------------------
// Representation test with F(mu, nu) = 1{H^mu <= A} e^{-<mu,f> - gamma <nu,1>}.
// The left side integrates F(rho_t, eta_t) over excursions (depth window r0);
// the right side integrates sampled M_a estimates over a in [0, A] by
// Gauss-Legendre, adds the exact exponential tail from empty upper strips, and
// subtracts the creep atom F(0,0)/c.
// ---------------------------------------------------------------------------

struct RepresentationOutput {
  EstimatorReport report;
  double lhs = 0, rhs = 0;
  std::size_t n_excursions = 0, n_capped = 0;
};

inline RepresentationOutput representation_test(const TruncatedMechanism& tm,
                                                const TestFunction& f, double gamma,
                                                double a_max, std::size_t n_windows, double r0,
                                                std::size_t n_quad,
                                                std::size_t n_samples_per_node,
                                                std::uint64_t seed, double t_cap = -1.0) {
  if (!(gamma > 0))
    throw std::domain_error("representation: gamma must be positive (budget needs damping)");
  if (!(a_max > 0) || !(r0 > 0)) throw std::domain_error("representation: need a_max, r0 > 0");
  if (t_cap <= 0) t_cap = 60.0 / tm.psi(gamma);

  // --- left side: excursions ---
  struct Visitor final : detail::ExcursionWindowBase {
    const TestFunction* f;
    double gamma, a_cut, c;
    num::Kahan S;
    num::Kahan lhs, damped_one;
    std::size_t n_exc = 0, n_capped = 0;

    void on_excursion_open() override {
      ++n_exc;
      S.reset(0.0);
    }
    void note_capped() { ++n_capped; }

    void segment(const SegmentView& sv) {
      if (!in_excursion || beyond_window) return;
      double t1 = std::min(sv.t1, alpha + t_cap);
      const double f_eat = sv.eating ? f->eval(sv.eat_h) : 0.0;
      if (t1 > sv.t0) {
        // clip where the height crosses the support cap
        double t_hi = t1;
        if (sv.H_slope > 0) {
          if (sv.H0 >= a_cut)
            t_hi = sv.t0;
          else
            t_hi = std::min(t1, sv.t0 + (a_cut - sv.H0) / sv.H_slope);
        } else if (sv.H0 > a_cut) {
          t_hi = sv.t0;
        }
        const double S0 = S.value();
        const double t0 = sv.t0;
        const double eta0 = sv.eta_mass0;
        const double eta_rate = sv.eating_stack ? c : 0.0;
        if (t_hi > t0)
          lhs.add(num::gl8(
              [&](double t) {
                return std::exp(-(S0 - f_eat * c * (t - t0)) -
                                gamma * (eta0 + eta_rate * (t - t0)));
              },
              t0, t_hi));
        damped_one.add(num::gl8(
            [&](double t) { return std::exp(-gamma * (eta0 + eta_rate * (t - t0))); }, t0,
            t1));
      }
      S.add(-f_eat * sv.consumed);
    }
    void before_jump(double, double ell, double h) {
      if (in_excursion && !beyond_window) S.add(f->eval(h) * ell);
    }
  };

  std::vector<double> lhs_w(n_windows), one_w(n_windows), counts(n_windows),
      capped(n_windows);
  num::parallel_for(n_windows, [&](std::size_t w) {
    Visitor v;
    v.f = &f;
    v.gamma = gamma;
    v.a_cut = a_max;
    v.c = tm.drift_rate();
    detail::run_excursion_window(tm, r0, t_cap, seed, w, v);
    lhs_w[w] = v.lhs.value() / r0;
    one_w[w] = v.damped_one.value() / r0;
    counts[w] = static_cast<double>(v.n_exc);
    capped[w] = static_cast<double>(v.n_capped);
  });
  const auto lhs_ms = num::mean_se(lhs_w);

  // --- right side: sampled M_a against the a-integral ---
  MarkedPoissonConfig cfg{a_max, tm.base(), tm.eps(), seed};
  MarkedPoissonSampler sampler(cfg);
  const double alpha0 = tm.base().alpha0();
  const double m_rate = sampler.mark_rate_per_unit_height();

  // Gauss-Legendre nodes on [0, a_max] plus a dedicated batch at a_max for the
  // exact tail factor int_A^inf e^{-alpha0 a - (a - A) m} da = e^{-alpha0 A}/(alpha0 + m)
  std::vector<double> nodes, weights;
  for (std::size_t q = 0; q < n_quad; ++q) {
    const std::size_t block = q / 8;  // composite GL8 panels
    const double lo = a_max * block / (n_quad / 8);
    const double hi = a_max * (block + 1) / (n_quad / 8);
    const int idx = static_cast<int>(q % 8);
    nodes.push_back(0.5 * (lo + hi) + 0.5 * (hi - lo) * num::gl8_x[idx]);
    weights.push_back(0.5 * (hi - lo) * num::gl8_w[idx]);
  }
  nodes.push_back(a_max);
  weights.push_back(std::exp(-alpha0 * a_max) / (alpha0 + m_rate));

  std::vector<double> node_mean(nodes.size()), node_se(nodes.size());
  num::parallel_for(nodes.size(), [&](std::size_t q) {
    MarkedPoissonConfig node_cfg = cfg;
    node_cfg.a = nodes[q];
    MarkedPoissonSampler node_sampler(node_cfg);
    std::vector<double> vals(n_samples_per_node);
    for (std::size_t s = 0; s < n_samples_per_node; ++s) {
      SplitMix64 rng = stream_rng(seed, q * n_samples_per_node + s, kSaltNodes);
      auto [mu_a, nu_a] = node_sampler.sample_pair(rng);
      vals[s] = std::exp(-integrate(mu_a, f) - gamma * nu_a.total_mass());
    }
    const auto ms = num::mean_se(vals);
    node_mean[q] = ms.mean;
    node_se[q] = ms.se;
  });

  double rhs = -1.0 / tm.drift_rate();  // creep atom F(0,0)/c
  double rhs_var = 0;
  for (std::size_t q = 0; q < nodes.size(); ++q) {
    const double wgt = (q < n_quad ? weights[q] * std::exp(-alpha0 * nodes[q]) : weights[q]);
    rhs += wgt * node_mean[q];
    rhs_var += num::sqr(wgt * node_se[q]);
  }
  const double rhs_se = std::sqrt(rhs_var);

  RepresentationOutput out;
  out.lhs = lhs_ms.mean;
  out.rhs = rhs;
  out.n_excursions = static_cast<std::size_t>(num::pairwise_sum(counts));
  out.n_capped = static_cast<std::size_t>(num::pairwise_sum(capped));

  EstimatorReport rep;
  rep.test = "poisson_representation";
  rep.n_paths = n_windows;
  rep.eps = tm.eps();
  rep.horizon = t_cap;
  rep.seed = seed;
  rep.estimate = lhs_ms.mean - rhs;
  rep.se = std::sqrt(num::sqr(lhs_ms.se) + num::sqr(rhs_se));
  rep.target = 0.0;
  rep.target_untruncated = 0.0;
  {
    const double psi_gamma = tm.psi(gamma);
    const double exact_total = gamma / psi_gamma - 1.0 / tm.drift_rate();
    const auto one = num::mean_se(one_w);
    rep.bias_budget = std::max(0.0, exact_total - one.mean) + 2.0 * one.se;
  }
  rep.params["gamma"] = gamma;
  rep.params["a_max"] = a_max;
  rep.params["r0"] = r0;
  rep.params["delta"] = tm.eps();
  rep.params["n_quad"] = n_quad;
  rep.params["n_samples_per_node"] = n_samples_per_node;
  rep.params["t_cap"] = t_cap;
  rep.params["n_excursions"] = out.n_excursions;
  rep.params["n_capped"] = out.n_capped;
  rep.params["f"] = detail::f_params(f);
  rep.finalize();
  out.report = std::move(rep);
  return out;
}

}  // namespace lcrt
