#include "lnscope/layer_norm.hpp"

#include <cmath>
#include <string>

#include "lnscope/error.hpp"

namespace lnscope {

template <class T>
std::vector<T> layer_norm_forward(std::span<const T> x, std::span<const T> gamma, std::span<const T> beta, double eps) {
  const std::size_t m = x.size();
  if (m == 0 || gamma.size() != m || beta.size() != m) throw UsageError("layer_norm_forward: length mismatch");
  if (!(eps > 0.0)) throw UsageError("layer_norm_forward: eps must be positive");
  double sum = 0.0;
  for (T v : x) {
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("layer_norm_forward: non-finite input");
    sum += v;
  }
  const double mean = sum / static_cast<double>(m);
  double ss = 0.0;
  for (T v : x) ss += (v - mean) * (v - mean);
  const double rstd = 1.0 / std::sqrt(ss / static_cast<double>(m) + eps);
  std::vector<T> y(m);
  for (std::size_t j = 0; j < m; ++j) {
    y[j] = static_cast<T>(static_cast<double>(gamma[j]) * ((x[j] - mean) * rstd) + static_cast<double>(beta[j]));
  }
  return y;
}

template std::vector<float> layer_norm_forward(std::span<const float>, std::span<const float>, std::span<const float>,
                                               double);
template std::vector<double> layer_norm_forward(std::span<const double>, std::span<const double>,
                                                std::span<const double>, double);

}  // namespace lnscope
