#pragma once

#include <span>
#include <vector>

namespace lnscope {

// y = γ ⊙ (x − μ) / sqrt(σ² + ε) + β with μ, σ² the population mean and
// variance of x. Statistics are accumulated in double for both scalar types.
template <class T>
std::vector<T> layer_norm_forward(std::span<const T> x, std::span<const T> gamma, std::span<const T> beta, double eps);

extern template std::vector<float> layer_norm_forward(std::span<const float>, std::span<const float>,
                                                      std::span<const float>, double);
extern template std::vector<double> layer_norm_forward(std::span<const double>, std::span<const double>,
                                                       std::span<const double>, double);

}  // namespace lnscope
