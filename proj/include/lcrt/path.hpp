#pragma once

// Event-driven exact simulation of the truncated spectrally positive path
// X_t = -c t + sum of jumps, with exact running/future infima, excursion
// intervals of X - I, and the inverse local time tau_r = inf{t : -I_t > r}.
// All production queries are event-list computations; uniform grids appear
// only in test oracles.

#include "lcrt/mechanism.hpp"
#include "lcrt/numeric.hpp"
#include "lcrt/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lcrt {

struct ExcursionInterval {
  double alpha;       // start time
  double beta;        // end time (horizon if not closed)
  double depth;       // -I at the start, the local-time coordinate
  bool closed;        // X - I returned to 0 before the horizon
  std::size_t first_event;  // jump starting the excursion
  std::size_t last_event;   // last jump inside it
};

// Infinite stream of (time, size) jumps for one deterministic sub-stream of a
// master seed; LevyPath::simulate consumes the same stream, so stored paths
// and streaming estimators see identical randomness.
class JumpStream {
 public:
  JumpStream(const TruncatedMechanism& tm, std::uint64_t seed, std::uint64_t stream,
             std::uint64_t salt = 0)
      : tm_(&tm), rng_(stream_rng(seed, stream, salt)) {}

  struct Jump {
    double t;
    double ell;
  };

  Jump next() {
    t_ += rng_.exponential(tm_->jump_rate());
    return {t_, tm_->sample_jump(rng_)};
  }

 private:
  const TruncatedMechanism* tm_;
  SplitMix64 rng_;
  double t_ = 0;
};

class LevyPath {
 public:
  LevyPath(std::vector<double> times, std::vector<double> sizes, double drift, double horizon,
           double eps = 0, std::uint64_t seed = 0)
      : times_(std::move(times)),
        sizes_(std::move(sizes)),
        c_(drift),
        horizon_(horizon),
        eps_(eps),
        seed_(seed) {
    if (times_.size() != sizes_.size()) throw std::domain_error("path: times/sizes mismatch");
    if (!(c_ > 0)) throw std::domain_error("path: drift must be positive");
    double prev = 0;
    for (std::size_t k = 0; k < times_.size(); ++k) {
      if (!(times_[k] > prev) || times_[k] > horizon_)
        throw std::domain_error("path: event times must be strictly increasing in (0, T]");
      if (!(sizes_[k] > 0)) throw std::domain_error("path: jump sizes must be positive");
      prev = times_[k];
    }
    build();
  }

  static LevyPath simulate(const TruncatedMechanism& tm, double horizon, std::uint64_t seed,
                           std::uint64_t stream = 0) {
    if (!(horizon > 0)) throw std::domain_error("simulate: horizon must be positive");
    std::vector<double> times, sizes;
    JumpStream js(tm, seed, stream);
    for (;;) {
      const auto j = js.next();
      if (j.t > horizon) break;
      times.push_back(j.t);
      sizes.push_back(j.ell);
    }
    return LevyPath(std::move(times), std::move(sizes), tm.drift_rate(), horizon, tm.eps(),
                    seed);
  }

  std::size_t n_events() const { return times_.size(); }
  std::span<const double> times() const { return times_; }
  std::span<const double> sizes() const { return sizes_; }
  double drift() const { return c_; }
  double horizon() const { return horizon_; }
  double eps() const { return eps_; }
  std::uint64_t seed() const { return seed_; }

  // index of the last event at or before t; -1 when t precedes every event
  std::ptrdiff_t segment_index(double t) const {
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    return static_cast<std::ptrdiff_t>(it - times_.begin()) - 1;
  }

  double value_at(double t) const {
    check_time(t);
    const auto k = segment_index(t);
    return (k >= 0 ? cum_[k] : 0.0) - c_ * t;
  }

  // X just after event k / just before event k
  double post_value(std::size_t k) const { return cum_[k] - c_ * times_[k]; }
  double pre_value(std::size_t k) const { return (k ? cum_[k - 1] : 0.0) - c_ * times_[k]; }

  // running infimum I_t
  double inf_at(double t) const {
    check_time(t);
    const auto k = segment_index(t);
    const double x = value_at(t);
    return k >= 0 ? std::min(prefix_min_[k], x) : x;
  }

  // inf over [s, t]
  double future_inf(double s, double t) const {
    if (s > t) throw std::domain_error("future_inf: s > t");
    check_time(s);
    check_time(t);
    const auto a = segment_index(s);
    const auto b = segment_index(t);
    double m = value_at(t);
    if (a < b) m = std::min(m, range_min_pre(a + 1, b));
    return m;
  }

  double min_value() const {  // I at the horizon
    double m = value_at(horizon_);
    if (!times_.empty()) m = std::min(m, prefix_min_.back());
    return m;
  }

  // first t with -I_t > r; exact crossing within a drift segment
  double inverse_local_time(double r) const {
    if (r < 0) throw std::domain_error("inverse_local_time: r must be nonnegative");
    const double level = -r;
    // first recorded dip strictly below the level, then the crossing inside
    // the preceding drift segment
    std::size_t lo = 0, hi = times_.size();
    while (lo < hi) {
      const std::size_t mid = (lo + hi) / 2;
      if (prefix_min_[mid] < level)
        hi = mid;
      else
        lo = mid + 1;
    }
    if (lo < times_.size()) {
      // crossing strictly before event lo
      const double x0 = lo == 0 ? 0.0 : post_value(lo - 1);
      const double t0 = lo == 0 ? 0.0 : times_[lo - 1];
      return t0 + (x0 - level) / c_;
    }
    // only the final creep segment remains
    if (value_at(horizon_) < level) {
      const double x0 = times_.empty() ? 0.0 : post_value(times_.size() - 1);
      const double t0 = times_.empty() ? 0.0 : times_.back();
      return t0 + (x0 - level) / c_;
    }
    throw HorizonExhausted("inverse_local_time: horizon exhausted, extend T");
  }

  // maximal open intervals where X - I > 0, in time order
  std::vector<ExcursionInterval> excursions() const {
    std::vector<ExcursionInterval> out;
    const std::size_t n = times_.size();
    std::size_t k = 0;
    while (k < n) {
      const double level = pre_value(k);  // record at the excursion start
      ExcursionInterval exc;
      exc.alpha = times_[k];
      exc.depth = -level;
      exc.first_event = k;
      std::size_t m = k;
      exc.closed = false;
      exc.beta = horizon_;
      for (;;) {
        const double next_pre = m + 1 < n ? pre_value(m + 1) : value_at(horizon_);
        if (next_pre <= level) {
          exc.beta = times_[m] + (post_value(m) - level) / c_;
          exc.closed = true;
          break;
        }
        if (m + 1 >= n) break;
        ++m;
      }
      exc.last_event = m;
      out.push_back(exc);
      if (!exc.closed) break;
      k = m + 1;
    }
    return out;
  }

  // CSV rows (s, ell); header carries (c, eps, T, seed)
  void dump_csv(std::ostream& os) const {
    os << "# c=" << c_ << " eps=" << eps_ << " T=" << horizon_ << " seed=" << seed_ << "\n";
    os << "s,ell\n";
    os.precision(17);
    for (std::size_t k = 0; k < times_.size(); ++k) os << times_[k] << "," << sizes_[k] << "\n";
  }

 private:
  void check_time(double t) const {
    if (t < 0 || t > horizon_) throw std::domain_error("time outside [0, horizon]");
  }

  void build() {
    const std::size_t n = times_.size();
    cum_.resize(n);
    prefix_min_.resize(n);
    num::Kahan cum;
    double pmin = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const double pre = cum.value() - c_ * times_[k];
      pmin = std::min(pmin, pre);
      prefix_min_[k] = pmin;
      cum.add(sizes_[k]);
      cum_[k] = cum.value();
    }
    // sparse table over pre-jump dips for range-minimum queries
    if (n > 0) {
      const int levels = std::bit_width(n);
      rmq_.assign(levels, {});
      rmq_[0].resize(n);
      for (std::size_t k = 0; k < n; ++k) rmq_[0][k] = pre_value(k);
      for (int lv = 1; lv < levels; ++lv) {
        const std::size_t len = std::size_t{1} << lv;
        rmq_[lv].resize(n + 1 - len);
        for (std::size_t k = 0; k + len <= n; ++k)
          rmq_[lv][k] = std::min(rmq_[lv - 1][k], rmq_[lv - 1][k + len / 2]);
      }
    }
  }

  // min of pre_value over event indices [a, b], inclusive
  double range_min_pre(std::ptrdiff_t a, std::ptrdiff_t b) const {
    const int lv = std::bit_width(static_cast<std::size_t>(b - a + 1)) - 1;
    const std::size_t len = std::size_t{1} << lv;
    return std::min(rmq_[lv][a], rmq_[lv][b + 1 - len]);
  }

  std::vector<double> times_, sizes_;
  double c_, horizon_, eps_;
  std::uint64_t seed_;
  std::vector<double> cum_;         // cumulative jump mass after event k
  std::vector<double> prefix_min_;  // running min of pre-jump dips
  std::vector<std::vector<double>> rmq_;
};

inline LevyPath path_from_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("# ", 0) != 0)
    throw std::domain_error("path CSV: missing header");
  double c = 0, eps = 0, T = 0;
  std::uint64_t seed = 0;
  {
    std::istringstream hs(line.substr(2));
    std::string tok;
    while (hs >> tok) {
      const auto pos = tok.find('=');
      if (pos == std::string::npos) continue;
      const std::string key = tok.substr(0, pos);
      const std::string val = tok.substr(pos + 1);
      if (key == "c") c = std::stod(val);
      if (key == "eps") eps = std::stod(val);
      if (key == "T") T = std::stod(val);
      if (key == "seed") seed = std::stoull(val);
    }
  }
  std::getline(is, line);  // column header
  std::vector<double> times, sizes;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto pos = line.find(',');
    times.push_back(std::stod(line.substr(0, pos)));
    sizes.push_back(std::stod(line.substr(pos + 1)));
  }
  return LevyPath(std::move(times), std::move(sizes), c, T, eps, seed);
}

}  // namespace lcrt
