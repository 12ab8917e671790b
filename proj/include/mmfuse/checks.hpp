#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace mmfuse {

struct CheckResult {
  std::string name;
  bool passed = false;
  double observed = 0.0;   // worst value seen
  double threshold = 0.0;  // what it must stay under
  std::string note;
  double seconds = 0.0;
};

// DP CTC loss vs exhaustive alignment enumeration on random instances.
CheckResult check_ctc_oracle_agreement(int instances, int max_frames, int max_target_len,
                                       int max_vocab, double tolerance, std::uint64_t seed);

// Vectorized contrastive losses vs literal double-loop oracles, degenerate
// batches included.
CheckResult check_contrastive_oracle_agreement(int batches, int max_batch, double tolerance,
                                               std::uint64_t seed);

// Full forward (encoders -> fusion -> all four losses at alpha=beta=gamma=0.1)
// against central finite differences over every parameter tensor.
// corrupt_gradient doubles one tensor's analytic gradient; the check must
// then fail and name it.
CheckResult check_full_gradient(int d, double tolerance, bool corrupt_gradient, std::uint64_t seed);

// Attention rows on the simplex, gate strictly inside (0,1), classifier
// output on the 4-simplex, and all advertised shapes, across randomized
// forward passes.
CheckResult check_structural_invariants(int passes, std::uint64_t seed);

std::vector<CheckResult> run_check_suite(const std::string& level, bool negative_control);
void print_check_table(const std::vector<CheckResult>& results, std::ostream& os);
bool all_passed(const std::vector<CheckResult>& results);

}  // namespace mmfuse
