#pragma once

// Monte Carlo verification of the closed-form identities satisfied by the
// exploration process of the simulated (finite-activity) system. Closed-form
// targets are evaluated with the truncated exponent psi_eps, for which the
// identities hold exactly, so the only bias terms are integration tails and
// per-excursion duration caps; both are reported in the bias budget.
//
// Time integrals along trajectories use exact event decomposition: between
// events the integrand is smooth (atom masses move linearly, the height moves
// at slope 0 or 1), and each smooth piece is integrated by 8-node
// Gauss-Legendre, split at frame boundaries.

#include "lcrt/exploration.hpp"
#include "lcrt/functionals.hpp"
#include "lcrt/measure.hpp"
#include "lcrt/mechanism.hpp"
#include "lcrt/numeric.hpp"
#include "lcrt/path.hpp"
#include "lcrt/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace lcrt {

inline constexpr std::uint64_t kSaltPaths = 0x70617468;
inline constexpr std::uint64_t kSaltWindows = 0x77696e64;
inline constexpr std::uint64_t kSaltNodes = 0x6e6f6465;

struct EstimatorReport {
  std::string test;
  double estimate = 0;
  double se = 0;
  double target = 0;
  double target_untruncated = 0;  // same closed form with the exact exponent
  double z = 0;
  double bias_budget = 0;
  bool pass = false;
  std::size_t n_paths = 0;
  double eps = 0;
  double horizon = 0;
  std::uint64_t seed = 0;
  nlohmann::ordered_json params = nlohmann::ordered_json::object();

  void finalize() {
    z = se > 0 ? (estimate - target) / se : (estimate == target ? 0.0 : num::inf);
    pass = std::abs(estimate - target) <= 4.0 * se + bias_budget;
  }
};

namespace detail {

// psi_eps compressed into a Chebyshev interpolant over the range of f, so the
// per-node cost in hot loops does not depend on the mechanism representation.
inline num::Chebyshev make_psi_interpolant(const TruncatedMechanism& tm, double vmax) {
  vmax = std::max(vmax * 1.05, 1e-6);
  num::Chebyshev ch([&tm](double v) { return tm.psi(v); }, 0.0, vmax, 64);
  for (int i = 0; i <= 40; ++i) {
    const double v = vmax * i / 40.0;
    const double exact = tm.psi(v);
    if (!(std::abs(ch(v) - exact) <= 1e-10 * std::max(1.0, std::abs(exact))))
      throw NumericError("psi interpolant check failed", std::abs(ch(v) - exact));
  }
  return ch;
}

// f, f' and psi(f(.)) evaluated along a height; the exp-affine family shares
// one exponential between f and f'.
struct GeneratorKernel {
  TestFunction f;
  num::Chebyshev psi;
  double lambda_bracket = 0;  // lambda inside [lambda - psi(f(H)) + f'(H)]
  double damp = 0;            // e^{-damp t} prefactor

  double f_at(double h) const { return f.eval(h); }

  double bracket(double h) const {
    if (std::isinf(h)) return lambda_bracket - psi(f.f_inf);
    if (f.is_exp_affine) {
      const double e = std::exp(-f.beta * h);
      return lambda_bracket - psi(f.c0 + f.c1 * e) - f.beta * f.c1 * e;
    }
    return lambda_bracket - psi(f.f(h)) + f.fp(h);
  }
};

// Integrates e^{-damp t - <rho_t, f>} * bracket(H_t) along a sweep, capturing
// the martingale aggregate M at requested grid times. In stopped mode the
// functional freezes when rho first hits zero.
struct GeneratorIntegrator : SweepVisitor {
  const GeneratorKernel* k = nullptr;
  double c = 1;
  num::Kahan S;  // <rho_t, f>
  num::Kahan integral;
  bool stop_at_sigma = false;
  bool frozen = false;
  double frozen_M = 0;
  std::span<const double> grid;
  double* out_M = nullptr;
  std::size_t gi = 0;

  void init(const GeneratorKernel& kernel, double drift, const AtomicMeasure& mu0) {
    k = &kernel;
    c = drift;
    S.reset(integrate(mu0, kernel.f));
  }

  void freeze() {
    frozen = true;
    frozen_M = 1.0 + integral.value();  // e^{-<rho_sigma, f>} = 1 at rho = 0
  }

  void segment(const SegmentView& sv) {
    if (frozen) {
      while (gi < grid.size() && grid[gi] <= sv.t1) out_M[gi++] = frozen_M;
      return;
    }
    const double f_eat = sv.eating ? k->f_at(sv.eat_h) : 0.0;
    const double rate = sv.eating ? f_eat * c : 0.0;
    const double S0 = S.value();
    const double t0 = sv.t0;
    auto integrand = [&](double t) {
      const double St = S0 - rate * (t - t0);
      const double Ht = sv.H0 + sv.H_slope * (t - t0);
      return std::exp(-k->damp * t - St) * k->bracket(Ht);
    };
    while (gi < grid.size() && grid[gi] <= sv.t1) {
      const double tg = grid[gi];
      const double part = tg > t0 ? num::gl8(integrand, t0, tg) : 0.0;
      const double Stg = S0 - rate * (tg - t0);
      out_M[gi] = std::exp(-k->damp * tg - Stg) + integral.value() + part;
      ++gi;
    }
    integral.add(num::gl8(integrand, t0, sv.t1));
    S.add(-f_eat * sv.consumed);
  }

  void before_jump(double, double ell, double h) {
    if (!frozen) S.add(k->f_at(h) * ell);
  }

  void sigma(double) {
    if (stop_at_sigma && !frozen) freeze();
  }
};

inline nlohmann::ordered_json f_params(const TestFunction& f) {
  nlohmann::ordered_json j;
  if (f.is_exp_affine) {
    j["form"] = "c0 + c1*exp(-beta*x)";
    j["c0"] = f.c0;
    j["c1"] = f.c1;
    j["beta"] = f.beta;
  } else {
    j["form"] = "custom";
    j["f_inf"] = f.f_inf;
  }
  return j;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Resolvent: E_mu[ int_0^inf e^{-lambda t} (lambda F - K)(rho_t) dt ]
//          = e^{-<mu,f>} - (f(0)/gamma) e^{-gamma <mu,1>},  gamma = psi^{-1}(lambda)
// ---------------------------------------------------------------------------

inline EstimatorReport resolvent_mc(const TruncatedMechanism& tm, const TestFunction& f,
                                    double lambda, const AtomicMeasure& mu,
                                    std::size_t n_paths, double T, std::uint64_t seed,
                                    double scale = 1.0) {
  if (!(lambda > 0)) throw std::domain_error("resolvent: lambda must be positive");
  if (!(std::exp(-lambda * T) <= 1e-6))
    throw std::domain_error("resolvent: choose T with exp(-lambda T) <= 1e-6");

  detail::GeneratorKernel kernel{f, detail::make_psi_interpolant(tm, f.sup_f), lambda, lambda};

  std::vector<double> per_path(n_paths);
  num::parallel_for(n_paths, [&](std::size_t i) {
    ExplorationMachine m(mu, tm.drift_rate());
    detail::GeneratorIntegrator v;
    v.init(kernel, tm.drift_rate(), mu);
    JumpStream js(tm, seed, i, kSaltPaths);
    for (;;) {
      const auto j = js.next();
      if (j.t > T) break;
      m.jump(j.t, j.ell, v);
      m.check_mass_identity();
    }
    m.drift_to(T, v);
    per_path[i] = v.integral.value();
  });

  const auto ms = num::mean_se(per_path);
  EstimatorReport rep;
  rep.test = "resolvent";
  rep.n_paths = n_paths;
  rep.eps = tm.eps();
  rep.horizon = T;
  rep.seed = seed;
  rep.estimate = scale * ms.mean;
  rep.se = scale * ms.se;
  {
    GeneratorFunctional gf = GeneratorFunctional::make(tm, f, lambda);
    rep.target = scale * resolvent_closed_form(gf, mu);
    GeneratorFunctional gf0 = GeneratorFunctional::make(tm.base(), f, lambda);
    rep.target_untruncated = scale * resolvent_closed_form(gf0, mu);
  }
  // tail of the time integral beyond T: |integrand| <= (lambda + psi(sup f) + sup f') e^{-lambda t}
  const double bound = lambda + tm.psi(f.sup_f) + f.sup_fp;
  rep.bias_budget = scale * bound * std::exp(-lambda * T) / lambda;
  rep.params["lambda"] = lambda;
  rep.params["gamma_eps"] = tm.psi_inverse(lambda);
  rep.params["scale"] = scale;
  rep.params["f"] = detail::f_params(f);
  nlohmann::ordered_json jmu;
  to_json(jmu, mu);
  rep.params["mu"] = jmu;
  rep.finalize();
  return rep;
}

// ---------------------------------------------------------------------------
// Martingales. Unstopped (requires f(0) = 0, lambda >= 0):
//   M_t = e^{-lambda t - <rho_t,f>}
//       + int_0^t e^{-lambda s - <rho_s,f>} [lambda - psi(f(H_s)) + f'(H_s)] ds
// Stopped at sigma = inf{t : rho_t = 0} (no constraint on f(0)):
//   M_t = e^{-<rho_{t^sigma},f>} - int_0^{t^sigma} e^{-<rho_s,f>} [psi(f(H_s)) - f'(H_s)] ds
// ---------------------------------------------------------------------------

struct MartingaleResult {
  std::vector<EstimatorReport> grid_reports;       // E[M_t] against M_0
  std::vector<EstimatorReport> increment_reports;  // E[M_{t_{j+1}} - M_{t_j}] against 0
};

inline MartingaleResult martingale_test(const TruncatedMechanism& tm, const TestFunction& f,
                                        double lambda, const AtomicMeasure& mu,
                                        std::vector<double> grid, std::size_t n_paths,
                                        std::uint64_t seed, bool stopped) {
  if (grid.empty()) throw std::domain_error("martingale: empty time grid");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw std::domain_error("martingale: grid must increase");
  if (!stopped) {
    if (!(std::abs(f.eval(0.0)) <= 1e-12))
      throw std::domain_error("martingale: unstopped mode requires f(0) = 0");
    if (lambda < 0) throw std::domain_error("martingale: lambda must be nonnegative");
  }
  const double T = grid.back();
  const std::size_t ng = grid.size();

  detail::GeneratorKernel kernel{f, detail::make_psi_interpolant(tm, f.sup_f),
                                 stopped ? 0.0 : lambda, stopped ? 0.0 : lambda};

  std::vector<double> M(n_paths * ng);
  num::parallel_for(n_paths, [&](std::size_t i) {
    ExplorationMachine m(mu, tm.drift_rate());
    detail::GeneratorIntegrator v;
    v.init(kernel, tm.drift_rate(), mu);
    v.stop_at_sigma = stopped;
    if (stopped && m.sigma() == 0.0) v.freeze();  // empty initial measure
    v.grid = grid;
    v.out_M = &M[i * ng];
    JumpStream js(tm, seed, i, kSaltPaths);
    for (;;) {
      const auto j = js.next();
      if (j.t > T) break;
      m.jump(j.t, j.ell, v);
      m.check_mass_identity();
    }
    m.drift_to(T, v);
    while (v.gi < ng) {  // grid point exactly at T when the last event lands on T
      M[i * ng + v.gi] =
          v.frozen ? v.frozen_M
                   : std::exp(-kernel.damp * T - v.S.value()) + v.integral.value();
      ++v.gi;
    }
  });

  const double M0 = std::exp(-integrate(mu, f));
  MartingaleResult out;
  std::vector<double> column(n_paths);
  auto base_report = [&](const std::string& name, double t_val) {
    EstimatorReport rep;
    rep.test = name;
    rep.n_paths = n_paths;
    rep.eps = tm.eps();
    rep.horizon = T;
    rep.seed = seed;
    rep.params["lambda"] = lambda;
    rep.params["stopped"] = stopped;
    rep.params["t"] = t_val;
    rep.params["f"] = detail::f_params(f);
    nlohmann::ordered_json jmu;
    to_json(jmu, mu);
    rep.params["mu"] = jmu;
    return rep;
  };
  for (std::size_t g = 0; g < ng; ++g) {
    for (std::size_t i = 0; i < n_paths; ++i) column[i] = M[i * ng + g];
    const auto ms = num::mean_se(column);
    EstimatorReport rep = base_report(stopped ? "martingale_stopped" : "martingale", grid[g]);
    rep.estimate = ms.mean;
    rep.se = ms.se;
    rep.target = M0;
    rep.target_untruncated = M0;
    rep.finalize();
    out.grid_reports.push_back(std::move(rep));
  }
  for (std::size_t g = 0; g + 1 < ng; ++g) {
    for (std::size_t i = 0; i < n_paths; ++i)
      column[i] = M[i * ng + g + 1] - M[i * ng + g];
    const auto ms = num::mean_se(column);
    EstimatorReport rep = base_report("martingale_increment", grid[g + 1]);
    rep.params["t_from"] = grid[g];
    rep.estimate = ms.mean;
    rep.se = ms.se;
    rep.target = 0.0;
    rep.target_untruncated = 0.0;
    rep.finalize();
    out.increment_reports.push_back(std::move(rep));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Excursion harness. Excursions of X - I with depth below r0 realize the
// excursion measure: a window of local-time width r0 carries a Poisson number
// of excursions with rate jump_rate/c per unit depth, each started by a single
// jump from the running record. A per-excursion duration cap keeps the
// simulation cost bounded; excursions hitting the cap are integrated up to it
// and lawfully skipped past (excursions are independent of their starts).
// ---------------------------------------------------------------------------

namespace detail {

struct ExcursionWindowBase : SweepVisitor {
  double in_window_until = 0;  // r0: starts at or beyond are outside
  double local_base = 0;       // local time consumed by abandoned machines
  double t_cap = num::inf;     // excursion-local integration cap

  bool in_excursion = false;
  bool beyond_window = false;
  double alpha = 0;        // machine-time of the current excursion start
  double depth_global = 0;

  void excursion_start(double t, double erased) {
    alpha = t;
    depth_global = local_base + erased;
    in_excursion = true;
    beyond_window = depth_global >= in_window_until;
    if (!beyond_window) on_excursion_open();
  }
  void excursion_end(double) { in_excursion = false; }

  virtual void on_excursion_open() {}
  virtual ~ExcursionWindowBase() = default;
};

// Runs one local-time window [0, r0); the visitor integrates per excursion.
template <class V>
void run_excursion_window(const TruncatedMechanism& tm, double r0, double t_cap,
                          std::uint64_t seed, std::uint64_t window, V& v) {
  v.in_window_until = r0;
  v.t_cap = t_cap;
  SplitMix64 rng = stream_rng(seed, window, kSaltWindows);
  const AtomicMeasure zero;
  const double rate = tm.jump_rate();
  for (;;) {
    ExplorationMachine m(zero, tm.drift_rate());
    double t = 0;
    for (;;) {
      t += rng.exponential(rate);
      const double ell = tm.sample_jump(rng);
      if (v.in_excursion && t - v.alpha > t_cap) {
        // integrate to the cap, then abandon the machine; the record (and so
        // the window's local-time cursor) sits at this excursion's depth
        // whether or not it managed to close during the drift
        m.drift_to(v.alpha + t_cap, v);
        v.local_base = v.depth_global;
        if (v.in_excursion) v.note_capped();
        v.in_excursion = false;
        break;
      }
      m.drift_to(t, v);
      if (!v.in_excursion && v.local_base + m.erased() >= r0) return;
      m.jump(t, ell, v);
      m.check_mass_identity();
      if (v.beyond_window) return;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Duality of rho and its companion measure under the excursion measure:
//   N[ int_0^sigma e^{-psi(gamma) t} F(rho_t) dt ]
// = N[ int_0^sigma e^{-gamma <eta_t,1>} F(rho_t) dt ],  F(rho) = e^{-<rho,f>},
// both sides estimated from the same excursions (common random numbers).
// ---------------------------------------------------------------------------

struct DualityOutput {
  EstimatorReport report;       // difference of the two sides against 0
  double lhs = 0, rhs = 0;      // per-unit-excursion-measure estimates
  std::size_t n_excursions = 0;
  std::size_t n_capped = 0;
};

inline DualityOutput duality_test(const TruncatedMechanism& tm, const TestFunction& f,
                                  double gamma, std::size_t n_windows, double r0,
                                  std::uint64_t seed, double t_cap = -1.0) {
  if (!(r0 > 0)) throw std::domain_error("duality: r0 must be positive");
  if (!(gamma >= 0)) throw std::domain_error("duality: gamma must be nonnegative");
  const double psi_gamma = tm.psi(gamma);
  if (t_cap <= 0) t_cap = psi_gamma > 0 ? 60.0 / psi_gamma : 60.0;

  struct Visitor final : detail::ExcursionWindowBase {
    const TestFunction* f;
    double gamma, psi_gamma, c;
    num::Kahan S;  // <rho_t, f> of the running excursion
    num::Kahan lhs, rhs, rhs_one;
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
        const double S0 = S.value();
        const double t0 = sv.t0;
        const double eta0 = sv.eta_mass0;
        const double eta_rate = sv.eating_stack ? c : 0.0;
        lhs.add(num::gl8(
            [&](double t) {
              return std::exp(-psi_gamma * (t - alpha) - (S0 - f_eat * c * (t - t0)));
            },
            sv.t0, t1));
        rhs.add(num::gl8(
            [&](double t) {
              return std::exp(-gamma * (eta0 + eta_rate * (t - t0)) -
                              (S0 - f_eat * c * (t - t0)));
            },
            sv.t0, t1));
        rhs_one.add(num::gl8(
            [&](double t) { return std::exp(-gamma * (eta0 + eta_rate * (t - t0))); },
            sv.t0, t1));
      }
      S.add(-f_eat * sv.consumed);
    }
    void before_jump(double, double ell, double h) {
      if (in_excursion && !beyond_window) S.add(f->eval(h) * ell);
    }
  };

  std::vector<double> diff(n_windows), lhs_w(n_windows), rhs_w(n_windows), one_w(n_windows);
  std::vector<double> counts(n_windows), capped(n_windows);
  num::parallel_for(n_windows, [&](std::size_t w) {
    Visitor v;
    v.f = &f;
    v.gamma = gamma;
    v.psi_gamma = psi_gamma;
    v.c = tm.drift_rate();
    detail::run_excursion_window(tm, r0, t_cap, seed, w, v);
    diff[w] = (v.lhs.value() - v.rhs.value()) / r0;
    lhs_w[w] = v.lhs.value() / r0;
    rhs_w[w] = v.rhs.value() / r0;
    one_w[w] = v.rhs_one.value() / r0;
    counts[w] = static_cast<double>(v.n_exc);
    capped[w] = static_cast<double>(v.n_capped);
  });

  const auto ms = num::mean_se(diff);
  DualityOutput out;
  out.lhs = num::mean_se(lhs_w).mean;
  out.rhs = num::mean_se(rhs_w).mean;
  out.n_excursions = static_cast<std::size_t>(num::pairwise_sum(counts));
  out.n_capped = static_cast<std::size_t>(num::pairwise_sum(capped));

  EstimatorReport rep;
  rep.test = "duality";
  rep.n_paths = n_windows;
  rep.eps = tm.eps();
  rep.horizon = t_cap;
  rep.seed = seed;
  rep.estimate = ms.mean;
  rep.se = ms.se;
  rep.target = 0.0;
  rep.target_untruncated = 0.0;
  // lhs tail beyond the cap, plus the empirically unreached part of the
  // exact total of the damped-dual integrand N[int e^{-gamma <eta>}]
  const double n_total_mass = tm.jump_rate() / tm.drift_rate();
  double budget = n_total_mass * std::exp(-psi_gamma * t_cap) / std::max(psi_gamma, 1e-12);
  if (gamma > 0) {
    const double exact_total = gamma / psi_gamma - 1.0 / tm.drift_rate();
    const auto one = num::mean_se(one_w);
    budget += std::max(0.0, exact_total - one.mean) + 2.0 * one.se;
  }
  rep.bias_budget = budget;
  rep.params["gamma"] = gamma;
  rep.params["psi_gamma"] = psi_gamma;
  rep.params["r0"] = r0;
  rep.params["t_cap"] = t_cap;
  rep.params["n_excursions"] = out.n_excursions;
  rep.params["n_capped"] = out.n_capped;
  rep.params["f"] = detail::f_params(f);
  rep.finalize();
  out.report = std::move(rep);
  return out;
}

// ---------------------------------------------------------------------------
// Inverse local time: tau_r is a subordinator with Laplace exponent
// psi_eps^{-1}, so E[e^{-lambda tau_r}] = e^{-r psi_eps^{-1}(lambda)}.
// Paths that do not reach depth r within the cap contribute 0; the neglected
// mass is at most e^{-lambda t_cap} per capped path and enters the budget.
// ---------------------------------------------------------------------------

inline std::vector<EstimatorReport> subordinator_law(const TruncatedMechanism& tm,
                                                     std::span<const double> rs,
                                                     std::span<const double> lambdas,
                                                     std::size_t n_paths, std::uint64_t seed,
                                                     double t_cap) {
  std::vector<double> rs_sorted(rs.begin(), rs.end());
  for (std::size_t i = 1; i < rs_sorted.size(); ++i)
    if (!(rs_sorted[i] > rs_sorted[i - 1]))
      throw std::domain_error("subordinator_law: depths must increase");
  const std::size_t nr = rs_sorted.size();
  std::vector<double> tau(n_paths * nr, num::inf);

  num::parallel_for(n_paths, [&](std::size_t i) {
    JumpStream js(tm, seed, i, kSaltPaths);
    const double c = tm.drift_rate();
    double t0 = 0, x0 = 0;
    std::size_t next_r = 0;
    while (next_r < nr) {
      const auto j = js.next();
      const double pre = x0 - c * (j.t - t0);
      while (next_r < nr && pre <= -rs_sorted[next_r]) {
        tau[i * nr + next_r] = t0 + (x0 + rs_sorted[next_r]) / c;
        ++next_r;
      }
      if (j.t > t_cap) break;
      t0 = j.t;
      x0 = pre + j.ell;
    }
  });

  std::vector<EstimatorReport> reports;
  std::vector<double> vals(n_paths);
  for (std::size_t ri = 0; ri < nr; ++ri) {
    std::size_t capped = 0;
    for (double lam : lambdas) {
      for (std::size_t i = 0; i < n_paths; ++i) {
        const double tr = tau[i * nr + ri];
        vals[i] = std::isinf(tr) ? 0.0 : std::exp(-lam * tr);
      }
      capped = 0;
      for (std::size_t i = 0; i < n_paths; ++i)
        if (std::isinf(tau[i * nr + ri])) ++capped;
      const auto ms = num::mean_se(vals);
      EstimatorReport rep;
      rep.test = "subordinator_law";
      rep.n_paths = n_paths;
      rep.eps = tm.eps();
      rep.horizon = t_cap;
      rep.seed = seed;
      rep.estimate = ms.mean;
      rep.se = ms.se;
      rep.target = std::exp(-rs_sorted[ri] * tm.psi_inverse(lam));
      rep.target_untruncated = std::exp(-rs_sorted[ri] * tm.base().psi_inverse(lam));
      rep.bias_budget =
          std::exp(-lam * t_cap) * static_cast<double>(capped) / static_cast<double>(n_paths) +
          std::exp(-lam * t_cap);
      rep.params["r"] = rs_sorted[ri];
      rep.params["lambda"] = lam;
      rep.params["n_capped"] = capped;
      rep.finalize();
      reports.push_back(std::move(rep));
    }
  }
  return reports;
}

}  // namespace lcrt
