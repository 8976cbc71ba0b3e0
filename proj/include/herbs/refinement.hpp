#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "herbs/ops.hpp"

namespace herbs {

// Epoch-indexed temperature decay. The printed decay 0.5^floor(e / I) with
// I = floor(-log2(0.0625 / T)) starts at 1 regardless of T; the scaled
// interpretation (default) multiplies by T so the schedule actually starts
// at the configured initial temperature. literal mode keeps the printed
// form for comparability.
struct TemperatureSchedule {
  enum class Mode { scaled, literal };

  double initial = 64.0;
  Mode mode = Mode::scaled;

  int64_t halving_interval() const {
    if (initial <= 0.0) throw std::invalid_argument("temperature must be positive");
    const int64_t interval = int64_t(std::floor(std::log2(initial / 0.0625)));
    if (interval < 1)
      throw std::invalid_argument("temperature " + std::to_string(initial) +
                                  " too small for the decay schedule (needs T >= 0.125)");
    return interval;
  }
};

inline TemperatureSchedule::Mode schedule_mode_from_string(const std::string& s) {
  if (s == "scaled") return TemperatureSchedule::Mode::scaled;
  if (s == "literal") return TemperatureSchedule::Mode::literal;
  throw std::invalid_argument("unknown schedule mode: " + s);
}

inline std::string to_string(TemperatureSchedule::Mode m) {
  return m == TemperatureSchedule::Mode::scaled ? "scaled" : "literal";
}

inline double temperature_at(int64_t epoch, const TemperatureSchedule& sched) {
  if (epoch < 0) throw std::invalid_argument("temperature_at: epoch must be >= 0");
  const int64_t interval = sched.halving_interval();
  const double decay = std::pow(0.5, double(epoch / interval));
  return sched.mode == TemperatureSchedule::Mode::scaled ? sched.initial * decay : decay;
}

// student (top-down head) and teacher (bottom-up head) logits, [B, C_gt]
struct ClassifierPair {
  Var student;
  Var teacher;
};

// Temperature-scaled KL between the softened teacher and student
// distributions, teacher detached. Mean over pairs and batch rows. No T^2
// rescaling unless explicitly requested.
inline Var refinement_loss(const std::vector<ClassifierPair>& pairs, double temperature,
                           bool t_squared = false) {
  if (temperature <= 0.0) throw std::invalid_argument("refinement_loss: temperature must be > 0");
  if (pairs.empty()) throw std::invalid_argument("refinement_loss: no classifier pairs");
  Var total;
  int64_t rows = 0;
  for (const auto& pr : pairs) {
    if (pr.student.shape() != pr.teacher.shape())
      throw std::invalid_argument("refinement_loss: pair shape mismatch");
    Var t_scaled = ops::mul_scalar(ops::detach(pr.teacher), 1.0 / temperature);
    Var p_teacher = ops::softmax_rows(t_scaled);
    Var log_p_teacher = ops::log_softmax_rows(t_scaled);
    Var log_p_student = ops::log_softmax_rows(ops::mul_scalar(pr.student, 1.0 / temperature));
    Var kl = ops::sum_all(ops::mul(p_teacher, ops::sub(log_p_teacher, log_p_student)));
    total = total.defined() ? ops::add(total, kl) : kl;
    rows = pr.student.shape()[0];
  }
  Var mean = ops::mul_scalar(total, 1.0 / (double(pairs.size()) * double(rows)));
  return t_squared ? ops::mul_scalar(mean, temperature * temperature) : mean;
}

enum class RefinementMode { full, basic };

inline RefinementMode refinement_mode_from_string(const std::string& s) {
  if (s == "full") return RefinementMode::full;
  if (s == "basic") return RefinementMode::basic;
  throw std::invalid_argument("unknown refinement mode: " + s);
}

// Which classifier heads get paired. full: one (student, teacher) pair per
// stage across the two paths. basic: a single pair over the last two blocks
// of a plain chain, the final head acting as teacher.
inline std::vector<std::pair<int, int>> plan_refinement_pairs(RefinementMode mode,
                                                              int student_heads,
                                                              int teacher_heads) {
  std::vector<std::pair<int, int>> pairs;
  if (mode == RefinementMode::full) {
    if (student_heads != teacher_heads || student_heads < 1)
      throw std::invalid_argument("full refinement requires matching head counts per path");
    for (int i = 0; i < student_heads; ++i) pairs.emplace_back(i, i);
  } else {
    // plain chain of `teacher_heads` block classifiers
    if (teacher_heads < 2)
      throw std::invalid_argument("basic refinement needs at least two blocks with heads");
    pairs.emplace_back(teacher_heads - 2, teacher_heads - 1);
  }
  return pairs;
}

}  // namespace herbs
