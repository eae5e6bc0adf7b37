#pragma once

// Finite atomic measures on E = [0, infinity], the state space of the
// exploration process and its dual. Atoms are kept in strictly increasing
// height order (height +inf permitted as the last atom), masses are positive,
// equal heights merge, and zero-mass atoms are dropped so the zero measure has
// a canonical representation.

#include "lcrt/numeric.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace lcrt {

struct Atom {
  double h;  // height in [0, +inf]
  double m;  // mass > 0
  friend bool operator==(const Atom&, const Atom&) = default;
};

class AtomicMeasure {
 public:
  AtomicMeasure() = default;

  explicit AtomicMeasure(std::vector<Atom> atoms) {
    std::sort(atoms.begin(), atoms.end(), [](const Atom& a, const Atom& b) { return a.h < b.h; });
    atoms_.reserve(atoms.size());
    for (const Atom& a : atoms) {
      if (a.m < 0 || std::isnan(a.m)) throw std::domain_error("atom mass must be nonnegative");
      if (a.h < 0 || std::isnan(a.h)) throw std::domain_error("atom height must be in [0, inf]");
      if (a.m == 0) continue;
      if (!atoms_.empty() && atoms_.back().h == a.h)
        atoms_.back().m += a.m;
      else
        atoms_.push_back(a);
    }
    num::Kahan total;
    for (const Atom& a : atoms_) total.add(a.m);
    total_ = total.value();
  }

  static AtomicMeasure zero() { return AtomicMeasure(); }
  static AtomicMeasure single(double h, double m) { return AtomicMeasure({{h, m}}); }

  bool empty() const { return atoms_.empty(); }
  std::size_t size() const { return atoms_.size(); }
  std::span<const Atom> atoms() const { return atoms_; }
  double total_mass() const { return total_; }

  // sup of the support, 0 for the zero measure
  double height() const { return atoms_.empty() ? 0.0 : atoms_.back().h; }

  // mu((v, inf])
  double tail_above(double v) const {
    double s = 0;
    for (auto it = atoms_.rbegin(); it != atoms_.rend() && it->h > v; ++it) s += it->m;
    return s;
  }

  friend bool operator==(const AtomicMeasure& a, const AtomicMeasure& b) {
    return a.atoms_ == b.atoms_;
  }

 private:
  std::vector<Atom> atoms_;
  double total_ = 0;
};

// Bounded C^1 test function with a declared limit at infinity; the derivative
// at infinity is 0 by convention.
struct TestFunction {
  std::function<double(double)> f;
  std::function<double(double)> fp;
  double f_inf = 0;
  double sup_f = 1;   // bound on |f|, used for integration-tail budgets
  double sup_fp = 1;  // bound on |f'|

  // fast path for the c0 + c1 e^{-beta x} family (hot estimator loops share
  // one exponential between f and f')
  bool is_exp_affine = false;
  double c0 = 0, c1 = 0, beta = 1;

  double eval(double h) const { return std::isinf(h) ? f_inf : f(h); }
  double deriv(double h) const { return std::isinf(h) ? 0.0 : fp(h); }

  // f(x) = c0 + c1 e^{-beta x}; requires f >= 0, i.e. c0 >= 0 and c0 + c1 >= 0
  static TestFunction exp_affine(double c0, double c1, double beta = 1.0) {
    if (c0 < 0 || c0 + c1 < 0) throw std::domain_error("exp_affine: f must be nonnegative");
    if (!(beta > 0)) throw std::domain_error("exp_affine: beta must be positive");
    TestFunction t;
    t.f = [c0, c1, beta](double x) { return c0 + c1 * std::exp(-beta * x); };
    t.fp = [c1, beta](double x) { return -beta * c1 * std::exp(-beta * x); };
    t.f_inf = c0;
    t.sup_f = std::max(c0, c0 + c1);
    t.sup_fp = std::abs(c1) * beta;
    t.is_exp_affine = true;
    t.c0 = c0;
    t.c1 = c1;
    t.beta = beta;
    return t;
  }

  static TestFunction constant(double k) {
    TestFunction t = exp_affine(k, 0.0);
    t.sup_fp = 0;
    return t;
  }
};

// Increasing nonnegative C^1 weight with G(0) = 0 and G(inf) <= 1; induces the
// compact metric d(x, y) = |G(x) - G(y)| on [0, inf].
struct WeightFunction {
  std::function<double(double)> G;
  double G_inf = 1;

  double eval(double h) const { return std::isinf(h) ? G_inf : G(h); }

  static WeightFunction default_weight() {
    WeightFunction w;
    w.G = [](double t) { return -std::expm1(-t); };
    w.G_inf = 1.0;
    return w;
  }

  bool well_formed() const {
    if (G(0.0) != 0.0 || !(G_inf <= 1.0)) return false;
    double prev = 0;
    for (int i = 1; i <= 64; ++i) {
      const double v = G(i * 0.5);
      if (v < prev - 1e-15 || v > G_inf + 1e-12) return false;
      prev = v;
    }
    return true;
  }
};

// k_a mu: the measure erased by mass a backward from its top height.
inline AtomicMeasure erase(const AtomicMeasure& mu, double a) {
  if (a < 0) throw std::domain_error("erase: a must be nonnegative");
  if (a == 0) return mu;
  const double remaining = mu.total_mass() - a;
  if (remaining <= 0) return AtomicMeasure::zero();
  std::vector<Atom> out;
  double cum = 0;
  for (const Atom& at : mu.atoms()) {
    if (cum + at.m <= remaining) {
      out.push_back(at);
      cum += at.m;
    } else {
      const double part = remaining - cum;
      if (part > 0) out.push_back({at.h, part});
      break;
    }
  }
  return AtomicMeasure(std::move(out));
}

// [mu, nu]: nu stacked on top of mu, heights shifted by the height of mu,
// with the convention x + inf = inf.
inline AtomicMeasure concat(const AtomicMeasure& mu, const AtomicMeasure& nu) {
  if (nu.empty()) return mu;
  if (mu.empty()) return nu;
  const double shift = mu.height();
  std::vector<Atom> out(mu.atoms().begin(), mu.atoms().end());
  if (std::isinf(shift)) {
    out.back().m += nu.total_mass();
    return AtomicMeasure(std::move(out));
  }
  for (const Atom& at : nu.atoms()) {
    const double h = std::isinf(at.h) ? at.h : at.h + shift;
    if (out.back().h == h)
      out.back().m += at.m;
    else
      out.push_back({h, at.m});
  }
  return AtomicMeasure(std::move(out));
}

// H_r = height of k_r mu; right continuous and nonincreasing in r, 0 once the
// whole mass is erased.
inline double partial_height(const AtomicMeasure& mu, double r) {
  if (r < 0) throw std::domain_error("partial_height: r must be nonnegative");
  auto atoms = mu.atoms();
  double cum = 0;  // mass strictly above the candidate atom, plus its own
  for (auto it = atoms.rbegin(); it != atoms.rend(); ++it) {
    cum += it->m;
    if (cum > r) return it->h;
  }
  return 0.0;
}

// The step profile of r -> H_r: (width in r, height) pairs from r = 0.
inline std::vector<std::pair<double, double>> height_profile(const AtomicMeasure& mu) {
  std::vector<std::pair<double, double>> steps;
  auto atoms = mu.atoms();
  steps.reserve(atoms.size());
  for (auto it = atoms.rbegin(); it != atoms.rend(); ++it) steps.emplace_back(it->m, it->h);
  return steps;
}

inline double integrate(const AtomicMeasure& mu, const TestFunction& f) {
  num::Kahan s;
  for (const Atom& at : mu.atoms()) s.add(at.m * f.eval(at.h));
  return s.value();
}

// D(mu, nu) = |<mu,1> - <nu,1>| + int_0^inf |G(H_r^mu) - G(H_r^nu)| dr,
// evaluated exactly by merging the step breakpoints of both partial-height
// profiles.
inline double distance(const AtomicMeasure& mu, const AtomicMeasure& nu,
                       const WeightFunction& G) {
  const auto pm = height_profile(mu);
  const auto pn = height_profile(nu);
  num::Kahan integral;
  std::size_t i = 0, j = 0;
  double wi = pm.empty() ? 0.0 : pm[0].first;  // width left in the current step
  double wj = pn.empty() ? 0.0 : pn[0].first;
  while (i < pm.size() || j < pn.size()) {
    const double hm = i < pm.size() ? pm[i].second : 0.0;
    const double hn = j < pn.size() ? pn[j].second : 0.0;
    double w;
    if (i >= pm.size())
      w = wj;
    else if (j >= pn.size())
      w = wi;
    else
      w = std::min(wi, wj);
    integral.add(std::abs(G.eval(hm) - G.eval(hn)) * w);
    if (i < pm.size()) {
      wi -= w;
      if (wi <= 0) {
        ++i;
        wi = i < pm.size() ? pm[i].first : 0.0;
      }
    }
    if (j < pn.size()) {
      wj -= w;
      if (wj <= 0) {
        ++j;
        wj = j < pn.size() ? pn[j].first : 0.0;
      }
    }
  }
  return std::abs(mu.total_mass() - nu.total_mass()) + integral.value();
}

// JSON wire format: [{"h": 1.5, "m": 0.25}, {"h": "inf", "m": 1.0}]
inline void to_json(nlohmann::ordered_json& j, const AtomicMeasure& mu) {
  j = nlohmann::ordered_json::array();
  for (const Atom& at : mu.atoms()) {
    nlohmann::ordered_json a;
    if (std::isinf(at.h))
      a["h"] = "inf";
    else
      a["h"] = at.h;
    a["m"] = at.m;
    j.push_back(std::move(a));
  }
}

inline AtomicMeasure measure_from_json(const nlohmann::json& j) {
  std::vector<Atom> atoms;
  for (const auto& a : j) {
    double h;
    if (a.at("h").is_string()) {
      if (a.at("h").get<std::string>() != "inf")
        throw std::domain_error("measure JSON: height must be a number or \"inf\"");
      h = num::inf;
    } else {
      h = a.at("h").get<double>();
    }
    atoms.push_back({h, a.at("m").get<double>()});
  }
  return AtomicMeasure(std::move(atoms));
}

}  // namespace lcrt
