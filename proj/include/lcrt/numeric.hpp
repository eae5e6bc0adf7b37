#pragma once

// Shared numeric kernels: compensated summation, adaptive quadrature wrappers,
// monotone root finding, Chebyshev interpolation, deterministic parallel maps.

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/tools/toms748_solve.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace lcrt {

class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, double residual)
      : std::runtime_error(what + " (residual " + std::to_string(residual) + ")"),
        residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_ = 0;
};

class HorizonExhausted : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace num {

inline constexpr double inf = std::numeric_limits<double>::infinity();

// Kahan-compensated accumulator for long event sums.
struct Kahan {
  double sum = 0.0;
  double carry = 0.0;
  void add(double x) {
    const double y = x - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
  void reset(double v = 0.0) { sum = v; carry = 0.0; }
  double value() const { return sum; }
};

inline double pairwise_sum(std::span<const double> xs) {
  if (xs.size() <= 16) {
    double s = 0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

inline double sqr(double x) { return x * x; }

// Mean / standard-error pair over per-path statistics, summed pairwise so the
// result does not depend on thread scheduling.
struct MeanSe {
  double mean = 0;
  double se = 0;
  std::size_t n = 0;
};

inline MeanSe mean_se(std::span<const double> xs) {
  MeanSe r;
  r.n = xs.size();
  if (r.n == 0) return r;
  r.mean = pairwise_sum(xs) / static_cast<double>(r.n);
  if (r.n > 1) {
    std::vector<double> dev2(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) dev2[i] = sqr(xs[i] - r.mean);
    const double var = pairwise_sum(dev2) / static_cast<double>(r.n - 1);
    r.se = std::sqrt(std::max(var, 0.0) / static_cast<double>(r.n));
  }
  return r;
}

// Adaptive Gauss-Kronrod on a finite interval. Throws NumericError when the
// error estimate fails the requested relative tolerance.
template <class F>
double integrate(F&& f, double a, double b, double rel_tol = 1e-10) {
  if (a == b) return 0.0;
  double error = 0, l1 = 0;
  const double q = boost::math::quadrature::gauss_kronrod<double, 15>::integrate(
      f, a, b, 15, rel_tol, &error, &l1);
  const double scale = std::max({1.0, std::abs(q), l1});
  if (!(error <= 100 * rel_tol * scale) || !std::isfinite(q))
    throw NumericError("quadrature did not converge", error);
  return q;
}

// Finite interval with integrable endpoint singularities.
template <class F>
double integrate_singular(F&& f, double a, double b, double rel_tol = 1e-10) {
  if (a == b) return 0.0;
  thread_local boost::math::quadrature::tanh_sinh<double> integrator(12);
  double error = 0, l1 = 0;
  std::size_t levels = 0;
  const double q = integrator.integrate(f, a, b, rel_tol, &error, &l1, &levels);
  if (!std::isfinite(q)) throw NumericError("singular quadrature did not converge", error);
  return q;
}

// [a, infinity) for decaying integrands; power-law decay handled through the
// 1/u substitution, exponential decay through exp_sinh.
template <class F>
double integrate_tail(F&& f, double a, double rel_tol = 1e-10) {
  if (a <= 0) throw std::domain_error("integrate_tail needs a > 0");
  auto g = [&f, a](double u) {
    const double l = a / u;
    return f(l) * l / u;  // dl = -a/u^2 du = -(l/u) du
  };
  return integrate_singular(g, 0.0, 1.0, rel_tol);
}

// First x >= 0 with g(x) = y for strictly increasing g with g(0) <= y.
template <class G>
double invert_increasing(G&& g, double y, double rel_tol = 1e-12) {
  const double g0 = g(0.0);
  if (y < g0) throw std::domain_error("invert_increasing: target below g(0)");
  if (y == g0) return 0.0;
  double hi = 1.0;
  int guard = 0;
  while (g(hi) < y) {
    hi *= 2.0;
    if (++guard > 1100) throw NumericError("invert_increasing: bracket growth failed", y - g(hi));
  }
  boost::math::tools::eps_tolerance<double> tol(50);
  std::uintmax_t max_iter = 200;
  auto shifted = [&g, y](double x) { return g(x) - y; };
  auto r = boost::math::tools::toms748_solve(shifted, hi / 2 <= 0 ? 0.0 : 0.0, hi, tol, max_iter);
  const double x = 0.5 * (r.first + r.second);
  const double resid = std::abs(g(x) - y);
  if (!(resid <= rel_tol * std::max(1.0, std::abs(y)) * 100))
    throw NumericError("invert_increasing: residual too large", resid);
  return x;
}

// Gauss-Legendre 8-point rule on [-1, 1]; used for exact-per-segment time
// integrals along piecewise-smooth trajectories.
inline constexpr std::array<double, 8> gl8_x = {
    -0.9602898564975362316835609, -0.7966664774136267395915539,
    -0.5255324099163289858177390, -0.1834346424956498049394761,
    0.1834346424956498049394761,  0.5255324099163289858177390,
    0.7966664774136267395915539,  0.9602898564975362316835609};
inline constexpr std::array<double, 8> gl8_w = {
    0.1012285362903762591525314, 0.2223810344533744705443560,
    0.3137066458778872873379622, 0.3626837833783619829651504,
    0.3626837833783619829651504, 0.3137066458778872873379622,
    0.2223810344533744705443560, 0.1012285362903762591525314};

template <class F>
double gl8(F&& f, double a, double b) {
  const double mid = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  double s = 0;
  for (int i = 0; i < 8; ++i) s += gl8_w[i] * f(mid + half * gl8_x[i]);
  return s * half;
}

// Chebyshev interpolant on [a, b]; build once, evaluate in a few flops.
class Chebyshev {
 public:
  Chebyshev() = default;
  template <class F>
  Chebyshev(F&& f, double a, double b, int n = 48) : a_(a), b_(b), coef_(n) {
    std::vector<double> fx(n);
    for (int k = 0; k < n; ++k) {
      const double x = std::cos(M_PI * (k + 0.5) / n);
      fx[k] = f(0.5 * (a + b) + 0.5 * (b - a) * x);
    }
    for (int j = 0; j < n; ++j) {
      double s = 0;
      for (int k = 0; k < n; ++k) s += fx[k] * std::cos(M_PI * j * (k + 0.5) / n);
      coef_[j] = 2.0 * s / n;
    }
  }
  double operator()(double x) const {
    const double t = std::clamp((2.0 * x - a_ - b_) / (b_ - a_), -1.0, 1.0);
    double d = 0, dd = 0;
    for (std::size_t j = coef_.size() - 1; j >= 1; --j) {
      const double sv = d;
      d = 2.0 * t * d - dd + coef_[j];
      dd = sv;
    }
    return t * d - dd + 0.5 * coef_[0];
  }
  double lo() const { return a_; }
  double hi() const { return b_; }

 private:
  double a_ = 0, b_ = 1;
  std::vector<double> coef_{0.0};
};

// Deterministic parallel map: body(i) writes only to per-index slots, so the
// result is independent of the thread count and schedule.
template <class Body>
void parallel_for(std::size_t n, Body&& body, unsigned n_threads = 0) {
  if (n == 0) return;
  unsigned hw = n_threads ? n_threads : std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  hw = static_cast<unsigned>(std::min<std::size_t>(hw, n));
  if (hw <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> workers;
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::atomic<std::size_t> next{0};
  const std::size_t chunk = std::max<std::size_t>(1, n / (8 * hw));
  for (unsigned w = 0; w < hw; ++w) {
    workers.emplace_back([&] {
      for (;;) {
        const std::size_t begin = next.fetch_add(chunk);
        if (begin >= n) return;
        const std::size_t end = std::min(n, begin + chunk);
        try {
          for (std::size_t i = begin; i < end; ++i) body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace num
}  // namespace lcrt
