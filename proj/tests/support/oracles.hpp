#pragma once

// Independent reference implementations used as test oracles. They use
// plain loops in long double and share no code with the library.

#include <vector>

namespace lnscope::testkit::oracle {

std::vector<double> layer_norm(const std::vector<double>& x, const std::vector<double>& gamma,
                               const std::vector<double>& beta, double eps);

struct Stats {
  double mean;
  double std;
  std::vector<double> z;
};
Stats population_stats(const std::vector<double>& v);

// Brute-force joint-outlier enumeration over per-layer (γ, β) vectors.
std::vector<int> outlier_dims(const std::vector<std::vector<double>>& gammas,
                              const std::vector<std::vector<double>>& betas, double k, double fraction,
                              bool require_both = true);

// Mean natural-log cross-entropy of logits rows against labels.
double cross_entropy(const std::vector<std::vector<double>>& logits, const std::vector<int>& labels);

}  // namespace lnscope::testkit::oracle
