#pragma once

#include <cstdint>

#include "mlnmt/model.hpp"
#include "mlnmt/tensor.hpp"

namespace mlnmt {

struct ModelGradCheckOptions {
  std::size_t layers = 2;
  std::size_t d_model = 16;
  std::size_t heads = 2;
  std::size_t d_ff = 32;
  std::size_t vocab = 14;
  std::size_t sentences = 3;
  std::size_t coordinates = 500;
  double eps = 1e-5;
  std::uint64_t seed = 1;
};

// Builds a random 64-bit model and a padded batch, then compares tape
// gradients of the token-mean NLL (no dropout, no smoothing) against
// central differences.
GradCheckResult model_grad_check(const ModelGradCheckOptions& options);

// Rebinds a flat list of tape variables, in visit order, into weights.
template <typename T>
TransformerWeights<Var<T>> unflatten(const ModelConfig& config, std::span<const Var<T>> vars);

}  // namespace mlnmt
