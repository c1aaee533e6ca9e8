#pragma once

#include <span>
#include <string>
#include <vector>

#include "soul/linalg.hpp"
#include "soul/nn.hpp"

namespace soul::gpm {

using linalg::Matrix;

// Per-layer orthonormal bases spanning the gradient-relevant subspace of the
// tasks trained so far. Basis k lives in the input space of layer k.
struct GpmMemory {
  std::vector<Matrix> basis;          // one (possibly empty) matrix per layer
  double energy_threshold = 0.97;     // Eq.-style energy criterion per layer
  std::size_t exemplar_count = 10000;

  bool empty() const;
  std::size_t total_columns() const;
};

GpmMemory make_gpm(const nn::MlpModel& model, double energy_threshold = 0.97,
                   std::size_t exemplar_count = 10000);

// One column per exemplar; each column is the representation entering
// `layer` (the raw input for layer 0, the previous post-activation otherwise).
Matrix build_representation_matrix(
    const nn::MlpModel& model,
    const std::vector<std::vector<double>>& exemplars, std::size_t layer);

// First q left singular vectors where q is minimal with
// sum_{i<=q} s_i^2 >= delta * sum_i s_i^2. Zero matrix -> zero columns.
Matrix extract_basis(const Matrix& r, double delta);

// R - M M^T R against the existing basis of `layer`.
Matrix remove_shared_basis(const Matrix& r, const GpmMemory& mem,
                           std::size_t layer);

// Builds representations per layer, strips the span already in memory,
// extracts a fresh basis and appends it. Throws NoExemplars on empty input.
void update_gpm(GpmMemory& mem, const nn::MlpModel& model,
                const std::vector<std::vector<double>>& exemplars);

// Projects weight gradients onto the complement of each layer's basis:
// G <- G - G M M^T. Bias and batchnorm gradients pass through.
nn::Gradients project_gradients(const nn::Gradients& g, const GpmMemory& mem);

// bit-exact binary round trip, stored alongside model checkpoints
void save_gpm(const GpmMemory& mem, const std::string& path);
GpmMemory load_gpm(const std::string& path);

}  // namespace soul::gpm
