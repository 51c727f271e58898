#pragma once

// Kozachenko-Leonenko entropy regularizer on a batch of embeddings:
//
//   L = -(1/n) * sum_i log(rho_i),   rho_i = min_{j != i} ||x_i - x_j||
//
// Minimising L pushes every point away from its nearest batch neighbour, which
// spreads the batch uniformly over the sphere.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "sbc/embedding.hpp"
#include "sbc/error.hpp"

namespace sbc {

double koleo_loss(const EmbeddingMatrix& batch);

// dL/dx for every row. Each term -log||x_i - x_j|| contributes
// -(x_i - x_j)/||x_i - x_j||^2 to the anchor i and the negation to its
// nearest neighbour j. Nearest-neighbour ties resolve to the lowest index.
EmbeddingMatrix koleo_grad(const EmbeddingMatrix& batch);

namespace koleo {

// Index of the nearest other row for each row (lowest index on ties), plus the
// distance to it.
struct Neighbors {
  std::vector<std::size_t> index;
  std::vector<double> distance;
};

template <typename Scalar>
Neighbors nearest_neighbors(const Scalar* x, std::size_t n, std::size_t d) {
  if (n < 2) throw InvalidArgument("KoLeo needs a batch of at least 2 rows");
  Neighbors nn;
  nn.index.assign(n, 0);
  nn.distance.assign(n, std::numeric_limits<double>::infinity());
  std::vector<double> best_sq(n, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double sq = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = static_cast<double>(x[i * d + k]) - static_cast<double>(x[j * d + k]);
        sq += diff * diff;
      }
      // j visits in ascending order for both endpoints, so strict < keeps the lowest index.
      if (sq < best_sq[i]) {
        best_sq[i] = sq;
        nn.index[i] = j;
      }
      if (sq < best_sq[j]) {
        best_sq[j] = sq;
        nn.index[j] = i;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(best_sq[i] > 0.0)) {
      throw DegenerateBatch("KoLeo batch row " + std::to_string(i) + " duplicates row " +
                            std::to_string(nn.index[i]) + " (zero nearest-neighbour distance)");
    }
    nn.distance[i] = std::sqrt(best_sq[i]);
  }
  return nn;
}

// Returns L for the n x d row-major batch `x`. When `grad` is non-null,
// adds scale * dL/dx into it (same layout as x).
template <typename Scalar>
double loss_and_grad(const Scalar* x, std::size_t n, std::size_t d, Scalar* grad,
                     double scale = 1.0) {
  const Neighbors nn = nearest_neighbors(x, n, d);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) loss -= std::log(nn.distance[i]);
  loss /= static_cast<double>(n);

  if (grad != nullptr) {
    const double inv_n = scale / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = nn.index[i];
      const double coeff = inv_n / (nn.distance[i] * nn.distance[i]);
      for (std::size_t k = 0; k < d; ++k) {
        const double g =
            coeff * (static_cast<double>(x[i * d + k]) - static_cast<double>(x[j * d + k]));
        grad[i * d + k] -= static_cast<Scalar>(g);
        grad[j * d + k] += static_cast<Scalar>(g);
      }
    }
  }
  return loss;
}

}  // namespace koleo
}  // namespace sbc
