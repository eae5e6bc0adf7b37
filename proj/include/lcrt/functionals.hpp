#pragma once

// Exponential functionals of the exploration process:
//   F(mu) = e^{-<mu, f>}
//   K(mu) = F(mu) [psi(f(H)) - f'(H) 1{H < inf}]
// together with the nested quadrature identity Lambda(y) = gamma - f(y) used
// to pin the resolvent closed form.

#include "lcrt/measure.hpp"
#include "lcrt/mechanism.hpp"
#include "lcrt/numeric.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace lcrt {

struct GeneratorFunctional {
  TestFunction f;
  std::function<double(double)> psi;  // exponent used inside K
  double lambda = 0;
  double gamma = 0;  // psi^{-1}(lambda), cached

  static GeneratorFunctional make(const LevyMechanism& mech, TestFunction f, double lambda) {
    GeneratorFunctional g;
    g.f = std::move(f);
    g.psi = [mech](double v) { return mech.psi(v); };
    g.lambda = lambda;
    g.gamma = mech.psi_inverse(lambda);
    g.check_gamma();
    return g;
  }

  static GeneratorFunctional make(const TruncatedMechanism& tm, TestFunction f, double lambda) {
    GeneratorFunctional g;
    g.f = std::move(f);
    g.psi = [tm](double v) { return tm.psi(v); };
    g.lambda = lambda;
    g.gamma = tm.psi_inverse(lambda);
    g.check_gamma();
    return g;
  }

  void check_gamma() const {
    const double resid = std::abs(psi(gamma) - lambda);
    if (!(resid <= 1e-10 * std::max(1.0, lambda)))
      throw NumericError("generator functional: psi(gamma) != lambda", resid);
  }
};

inline double F_of(const GeneratorFunctional& gf, const AtomicMeasure& mu) {
  return std::exp(-integrate(mu, gf.f));
}

inline double K_of(const GeneratorFunctional& gf, const AtomicMeasure& mu) {
  const double h = mu.height();
  const double bracket =
      gf.psi(gf.f.eval(h)) - (std::isinf(h) ? 0.0 : gf.f.deriv(h));
  return F_of(gf, mu) * bracket;
}

// Closed form of the resolvent applied to lambda F - K:
//   e^{-<mu,f>} - (f(0)/gamma) e^{-gamma <mu,1>}
inline double resolvent_closed_form(const GeneratorFunctional& gf, const AtomicMeasure& mu) {
  const double f0 = gf.f.eval(0.0);
  return F_of(gf, mu) - (f0 / gf.gamma) * std::exp(-gf.gamma * mu.total_mass());
}

namespace detail {

// (psi(v) - psi(gamma)) / (v - gamma) with the removable-singularity value
// psi'(gamma), blended through a second-order expansion near the diagonal.
struct PsiSlope {
  std::function<double(double)> psi;
  double gamma;
  double psi_gamma;
  double psi_p;   // psi'(gamma)
  double psi_pp;  // psi''(gamma)

  double operator()(double v) const {
    const double d = v - gamma;
    if (std::abs(d) < 1e-8) return psi_p + 0.5 * psi_pp * d;
    return (psi(v) - psi_gamma) / d;
  }
};

}  // namespace detail

struct LambdaIdentityResult {
  double lhs;      // nested quadrature of Lambda(y)
  double rhs;      // gamma - f(y)
  double abs_err;
};

// Lambda(y) = int_0^inf da (psi(gamma) - psi(f(a+y)) + f'(a+y)) e^{-g(a,y)}
// with g(a,y) = int_0^a (psi(f(x+y)) - psi(gamma)) / (f(x+y) - gamma) dx.
inline LambdaIdentityResult lambda_identity(const LevyMechanism& mech, const TestFunction& f,
                                            double lambda, double y, double quad_tol = 1e-9) {
  const double gamma = mech.psi_inverse(lambda);
  const double psi_gamma = mech.psi(gamma);
  detail::PsiSlope slope{[&mech](double v) { return mech.psi(v); }, gamma, psi_gamma,
                         mech.psi_prime(gamma), mech.psi_second(gamma)};

  LambdaIdentityResult r;
  r.rhs = gamma - f.eval(y);

  if (std::isinf(y)) {
    // constant integrand: the a-integral collapses to a single exponential
    const double q = slope(f.f_inf);
    r.lhs = (psi_gamma - mech.psi(f.f_inf)) / q;
    r.abs_err = std::abs(r.lhs - r.rhs);
    return r;
  }

  auto slope_at = [&](double a) { return slope(f.f(a + y)); };

  // decay rate of e^{-g}: g grows at least q_min * a
  double q_min = num::inf;
  for (int i = 0; i <= 200; ++i) q_min = std::min(q_min, slope_at(i * 0.25));
  if (!(q_min > 0)) throw NumericError("lambda_identity: slope not positive", q_min);
  const double A = 40.0 / q_min;

  // cumulative g on a fixed panel grid; inside a panel by one more GL8 pass
  const int n_panels = std::max(256, static_cast<int>(A * 8));
  const double dx = A / n_panels;
  std::vector<double> g_cum(n_panels + 1, 0.0);
  num::Kahan acc;
  for (int i = 0; i < n_panels; ++i) {
    acc.add(num::gl8(slope_at, i * dx, (i + 1) * dx));
    g_cum[i + 1] = acc.value();
  }
  auto g_of = [&](double a) {
    const int i = std::min(n_panels - 1, static_cast<int>(a / dx));
    return g_cum[i] + num::gl8(slope_at, i * dx, a);
  };
  auto integrand = [&](double a) {
    return (psi_gamma - mech.psi(f.f(a + y)) + f.fp(a + y)) * std::exp(-g_of(a));
  };
  r.lhs = num::integrate(integrand, 0.0, A, std::min(quad_tol, 1e-9));
  r.abs_err = std::abs(r.lhs - r.rhs);
  return r;
}

}  // namespace lcrt
