#pragma once

// The exploration process of the Levy tree coded by a finite-activity path,
// started from an arbitrary finite initial measure. A downward drift segment
// consumes mass from the top of a frame stack (falling through to the initial
// measure once the stack empties), and each upward jump pushes a frame at the
// current height. The machine keeps the running height, the dual measure, and
// compensated mass accumulators, and verifies the mass identity
//   <rho_t, 1> = (<mu,1> - (-I_t))_+ + (X_t - I_t)
// at every event.
//
// Height rule: a frame (h, rem, orig) on top gives H = h + (orig - rem)/c and
// a new jump is born at that H; eroding the initial measure leaves H at the
// height of its top surviving atom. This is the unique rule matching the
// backward-scan ladder height below, and the agreement of the two independent
// computations is itself a test.

#include "lcrt/measure.hpp"
#include "lcrt/numeric.hpp"
#include "lcrt/path.hpp"

#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

namespace lcrt {

struct Frame {
  double birth_height;
  double remaining;
  double original;
};

// One smooth piece of a drift segment: constant consumption site, height
// moving at slope 0 or 1. Within it,
//   rho_mass(t) = rho_mass0 - [eating] c (t - t0)
//   eta_mass(t) = eta_mass0 + [eating_stack] c (t - t0)
//   H(t) = H0 + H_slope (t - t0)
struct SegmentView {
  double t0, t1;
  double H0;
  double H_slope;      // 1 while a stack frame is consumed, else 0
  double eat_h;        // height of the atom being consumed
  bool eating;         // false when rho = 0
  bool eating_stack;   // distinguishes stack frames from initial-measure atoms
  double consumed;     // exact mass removed over [t0, t1]
  double rho_mass0;
  double eta_mass0;
};

// No-op visitor; estimator visitors override what they need.
struct SweepVisitor {
  void segment(const SegmentView&) {}
  void before_jump(double /*t*/, double /*ell*/, double /*height*/) {}
  void pop(double /*t*/) {}
  void excursion_start(double /*t*/, double /*depth*/) {}
  void excursion_end(double /*t*/) {}
  void sigma(double /*t*/) {}
  void event_done(std::size_t /*event index*/, double /*t*/) {}
};

class ExplorationMachine {
 public:
  ExplorationMachine(const AtomicMeasure& mu0, double drift) : mu0_(&mu0), c_(drift) {
    if (!(c_ > 0)) throw std::domain_error("exploration: drift must be positive");
    mu_live_ = mu0.size();
    mu_top_rem_ = mu_live_ ? mu0.atoms()[mu_live_ - 1].m : 0.0;
    mu_mass_.reset(mu0.total_mass());
    if (mu_live_ == 0) sigma_ = 0.0;
  }

  double t() const { return t_; }
  double drift() const { return c_; }
  double erased() const { return erased_.value(); }   // -I_t
  double x_value() const { return x_jumps_.value() - c_ * t_; }
  double rho0_mass() const { return rho0_mass_.value(); }
  double eta0_mass() const { return eta_mass_.value(); }
  double mu_mass() const { return mu_live_ ? mu_mass_.value() : 0.0; }
  double rho_mass() const { return mu_mass() + rho0_mass(); }
  double sigma() const { return sigma_; }
  bool rho_empty() const { return stack_.empty() && mu_live_ == 0; }
  const std::vector<Frame>& stack() const { return stack_; }
  std::size_t mu_live() const { return mu_live_; }

  double mu_height() const { return mu_live_ ? mu0_->atoms()[mu_live_ - 1].h : 0.0; }

  double height() const {
    if (!stack_.empty()) {
      const Frame& f = stack_.back();
      return f.birth_height + (f.original - f.remaining) / c_;
    }
    return mu_height();
  }

  AtomicMeasure rho() const {
    std::vector<Atom> atoms;
    atoms.reserve(mu_live_ + stack_.size());
    for (std::size_t i = 0; i + 1 < mu_live_; ++i) atoms.push_back(mu0_->atoms()[i]);
    if (mu_live_) atoms.push_back({mu0_->atoms()[mu_live_ - 1].h, mu_top_rem_});
    for (const Frame& f : stack_) atoms.push_back({f.birth_height, f.remaining});
    return AtomicMeasure(std::move(atoms));
  }

  AtomicMeasure eta() const {
    std::vector<Atom> atoms;
    atoms.reserve(stack_.size());
    for (const Frame& f : stack_)
      if (f.original > f.remaining) atoms.push_back({f.birth_height, f.original - f.remaining});
    return AtomicMeasure(std::move(atoms));
  }

  // rho with the initial-measure part stripped and heights shifted back to the
  // excursion's own coordinates.
  AtomicMeasure rho0_shifted() const {
    const double off = mu_height();
    std::vector<Atom> atoms;
    atoms.reserve(stack_.size());
    for (const Frame& f : stack_) atoms.push_back({f.birth_height - off, f.remaining});
    return AtomicMeasure(std::move(atoms));
  }

  template <class V>
  void drift_to(double target, V& v) {
    while (t_ < target) {
      SegmentView sv;
      sv.t0 = t_;
      sv.H0 = height();
      sv.rho_mass0 = rho_mass();
      sv.eta_mass0 = eta_mass_.value();
      if (!stack_.empty()) {
        Frame& top = stack_.back();
        const double t_pop = t_ + top.remaining / c_;
        const bool pops = t_pop <= target;
        sv.t1 = pops ? t_pop : target;
        sv.H_slope = 1.0;
        sv.eat_h = top.birth_height;
        sv.eating = true;
        sv.eating_stack = true;
        sv.consumed = pops ? top.remaining : c_ * (target - t_);
        v.segment(sv);
        if (pops) {
          eta_mass_.add(top.remaining);
          rho0_mass_.add(-top.remaining);
          eta_mass_.add(-top.original);
          stack_.pop_back();
          t_ = t_pop;
          v.pop(t_);
          if (stack_.empty()) v.excursion_end(t_);
        } else {
          top.remaining -= sv.consumed;
          rho0_mass_.add(-sv.consumed);
          eta_mass_.add(sv.consumed);
          t_ = target;
        }
      } else if (mu_live_ > 0) {
        const double t_atom = t_ + mu_top_rem_ / c_;
        const bool dies = t_atom <= target;
        sv.t1 = dies ? t_atom : target;
        sv.H_slope = 0.0;
        sv.eat_h = mu0_->atoms()[mu_live_ - 1].h;
        sv.eating = true;
        sv.eating_stack = false;
        sv.consumed = dies ? mu_top_rem_ : c_ * (target - t_);
        v.segment(sv);
        erased_.add(sv.consumed);
        mu_mass_.add(-sv.consumed);
        if (dies) {
          --mu_live_;
          mu_top_rem_ = mu_live_ ? mu0_->atoms()[mu_live_ - 1].m : 0.0;
          t_ = t_atom;
          if (mu_live_ == 0 && std::isinf(sigma_)) {
            sigma_ = t_;
            v.sigma(t_);
          }
        } else {
          mu_top_rem_ -= sv.consumed;
          t_ = target;
        }
      } else {
        // rho = 0: the path creeps along its running infimum
        sv.t1 = target;
        sv.H_slope = 0.0;
        sv.eat_h = 0.0;
        sv.eating = false;
        sv.eating_stack = false;
        sv.consumed = 0.0;
        v.segment(sv);
        erased_.add(c_ * (target - t_));
        t_ = target;
      }
    }
  }

  template <class V>
  void jump(double t_jump, double ell, V& v) {
    drift_to(t_jump, v);
    const double h = height();
    const bool opens = stack_.empty();
    v.before_jump(t_jump, ell, h);
    if (opens) v.excursion_start(t_jump, erased_.value());
    stack_.push_back({h, ell, ell});
    rho0_mass_.add(ell);
    x_jumps_.add(ell);
  }

  // <rho,1> = (<mu,1> - (-I))_+ + (X - I), enforced to 1e-9
  void check_mass_identity() const {
    const double X = x_value();
    const double I = -erased_.value();
    const double lhs = rho_mass();
    const double rhs = std::max(mu0_->total_mass() - erased_.value(), 0.0) + (X - I);
    const double scale = std::max({1.0, std::abs(X), erased_.value(), mu0_->total_mass()});
    if (!(std::abs(lhs - rhs) <= 1e-9 * scale))
      throw std::runtime_error("exploration: mass bookkeeping violated beyond 1e-9");
  }

 private:
  const AtomicMeasure* mu0_;
  double c_;
  double t_ = 0;
  std::size_t mu_live_ = 0;
  double mu_top_rem_ = 0;
  num::Kahan mu_mass_;
  num::Kahan erased_;
  num::Kahan rho0_mass_;
  num::Kahan eta_mass_;
  num::Kahan x_jumps_;
  double sigma_ = num::inf;
  std::vector<Frame> stack_;
};

// Sweep a stored path through a machine, firing visitor callbacks and checking
// the mass identity at every event.
template <class V>
void sweep_path_range(ExplorationMachine& m, const LevyPath& path, std::size_t first_event,
                      V& v, double t_end) {
  const auto times = path.times();
  const auto sizes = path.sizes();
  for (std::size_t k = first_event; k < times.size() && times[k] <= t_end; ++k) {
    m.jump(times[k], sizes[k], v);
    m.check_mass_identity();
    v.event_done(k, times[k]);
  }
  m.drift_to(t_end, v);
  m.check_mass_identity();
}

template <class V>
ExplorationMachine sweep_path(const LevyPath& path, const AtomicMeasure& mu0, V& v,
                              double t_end = -1) {
  ExplorationMachine m(mu0, path.drift());
  if (t_end < 0) t_end = path.horizon();
  sweep_path_range(m, path, 0, v, t_end);
  return m;
}

// Independent height computation by a backward scan over the raw event list:
//   H = (1/c) * sum over surviving jumps s <= t of (X_s - inf_{[s,t]} X).
// A jump survives when its pre-jump level lies strictly below the future
// infimum. This recomputes every future infimum from scratch and shares no
// state with the stack machine.
inline double ladder_height(const LevyPath& path, double t) {
  if (t < 0 || t > path.horizon()) throw std::domain_error("ladder_height: t outside horizon");
  double m = path.value_at(t);
  num::Kahan sum;
  for (std::ptrdiff_t k = path.segment_index(t); k >= 0; --k) {
    const double pre = path.pre_value(static_cast<std::size_t>(k));
    const double post = path.post_value(static_cast<std::size_t>(k));
    if (pre < m && post > m) sum.add(post - m);
    m = std::min(m, pre);
  }
  return sum.value() / path.drift();
}

class ExplorationTrajectory {
 public:
  struct EventRow {
    double t;
    double rho_mass;
    double height;
    std::uint64_t n_atoms;
  };

  ExplorationTrajectory(const LevyPath& path, AtomicMeasure mu0,
                        std::size_t checkpoint_every = 4096)
      : path_(&path),
        mu0_(std::make_shared<const AtomicMeasure>(std::move(mu0))),
        every_(std::max<std::size_t>(1, checkpoint_every)) {
    struct BuildVisitor : SweepVisitor {
      ExplorationTrajectory* self;
      ExplorationMachine* m;
      bool place_checkpoint = false;
      void excursion_start(double, double) { place_checkpoint = true; }
      void event_done(std::size_t k, double t) {
        self->rows_.push_back({t, m->rho_mass(), m->height(),
                               static_cast<std::uint64_t>(m->stack().size() + m->mu_live())});
        if (place_checkpoint || (k + 1) % self->every_ == 0) {
          self->checkpoints_.push_back({k + 1, *m});
          place_checkpoint = false;
        }
      }
    };
    ExplorationMachine m(*mu0_, path.drift());
    checkpoints_.push_back({0, m});
    BuildVisitor v;
    v.self = this;
    v.m = &m;
    sweep_path_range(m, path, 0, v, path.horizon());
    final_.push_back(std::move(m));
  }

  const LevyPath& path() const { return *path_; }
  const AtomicMeasure& mu0() const { return *mu0_; }
  std::span<const EventRow> rows() const { return rows_; }
  double sigma() const { return final_.front().sigma(); }

  // machine state at time t (replayed from the nearest checkpoint)
  ExplorationMachine state_at(double t) const {
    const auto k = path_->segment_index(t);
    ExplorationMachine m = checkpoint_before(static_cast<std::size_t>(k + 1));
    SweepVisitor v;
    replay_to(m, static_cast<std::size_t>(k + 1), v);
    m.drift_to(t, v);
    return m;
  }

  // state just before event k (the opening jump excluded)
  ExplorationMachine state_before_event(std::size_t k) const {
    ExplorationMachine m = checkpoint_before(k);
    SweepVisitor v;
    replay_to(m, k, v);
    m.drift_to(path_->times()[k], v);
    return m;
  }

  AtomicMeasure rho_at(double t) const { return state_at(t).rho(); }
  AtomicMeasure eta_at(double t) const { return state_at(t).eta(); }
  double height_at(double t) const { return state_at(t).height(); }

  std::vector<ExcursionInterval> excursions() const { return path_->excursions(); }

  // rho^i of the excursion decomposition, in the excursion's own coordinates
  AtomicMeasure excursion_measure(const ExcursionInterval& exc, double local_t) const {
    const double t = std::min(exc.alpha + local_t, exc.beta);
    return state_at(t).rho0_shifted();
  }

  // rows (t, total_mass, H_t, n_atoms) at event times
  void summary_csv(std::ostream& os) const {
    os << "t,total_mass,H,n_atoms\n";
    os.precision(17);
    for (const auto& r : rows_)
      os << r.t << "," << r.rho_mass << "," << r.height << "," << r.n_atoms << "\n";
  }

 private:
  struct Checkpoint {
    std::size_t next_event;
    ExplorationMachine state;
  };

  // latest checkpoint not beyond `event`, together with its resume index
  std::pair<const ExplorationMachine*, std::size_t> locate(std::size_t event) const {
    std::size_t best = 0;
    for (std::size_t i = 0; i < checkpoints_.size(); ++i)
      if (checkpoints_[i].next_event <= event) best = i;
    return {&checkpoints_[best].state, checkpoints_[best].next_event};
  }

  ExplorationMachine checkpoint_before(std::size_t event) const {
    ExplorationMachine m = *locate(event).first;
    return m;
  }

  template <class V>
  void replay_to(ExplorationMachine& m, std::size_t event_end, V& v) const {
    const auto times = path_->times();
    const auto sizes = path_->sizes();
    for (std::size_t k = locate(event_end).second; k < event_end; ++k)
      m.jump(times[k], sizes[k], v);
  }

  const LevyPath* path_;
  std::shared_ptr<const AtomicMeasure> mu0_;
  std::size_t every_;
  std::vector<EventRow> rows_;
  std::vector<Checkpoint> checkpoints_;
  std::vector<ExplorationMachine> final_;
};

inline ExplorationTrajectory explore(const LevyPath& path, AtomicMeasure mu0) {
  return ExplorationTrajectory(path, std::move(mu0));
}

inline AtomicMeasure dual_eta(const ExplorationTrajectory& traj, double t) {
  return traj.eta_at(t);
}

}  // namespace lcrt
