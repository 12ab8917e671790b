#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mmfuse/autodiff.hpp"
#include "mmfuse/losses.hpp"

namespace mmfuse {

// Independent brute-force references. These deliberately share no code with
// the production losses: the CTC oracle enumerates raw label sequences
// instead of running the extended-label DP, and the contrastive oracles are
// literal double loops.

// -log sum over all V^T frame-label sequences whose blank-collapse equals
// `target` of the product of per-frame probabilities. `probs` are plain
// probabilities, not logs. Enumeration guard: V^T <= 10^6.
double ctc_bruteforce(const Matrix& probs, const std::vector<int>& target);

double scl_bruteforce(const Matrix& reps, const std::vector<int>& labels, const LossConfig& cfg);
double acl_bruteforce(const Matrix& reps, const Matrix& reps_aug, const LossConfig& cfg);

// --- finite-difference gradient verification --------------------------------

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  int worst_row = -1;
  int worst_col = -1;
  double analytic = 0.0;
  double finite_diff = 0.0;
  int coords_checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double step = 0.0;
  double tolerance = 0.0;

  bool passed() const;
  double worst() const;
  std::string worst_tensor() const;
};

// `f` must rebuild the computation, run backward() so analytic gradients land
// in Param::g, and return the scalar loss. Central differences are compared
// per coordinate; when max_coords_per_tensor > 0 a seeded sample of
// coordinates per tensor is used instead of all of them.
GradCheckReport finite_diff_check(const std::function<double()>& f, const std::vector<Param*>& params,
                                  double step, double tolerance, int max_coords_per_tensor = 0,
                                  std::uint64_t sample_seed = 1);

}  // namespace mmfuse
