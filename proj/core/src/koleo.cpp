#include "sbc/koleo.hpp"

namespace sbc {

double koleo_loss(const EmbeddingMatrix& batch) {
  return koleo::loss_and_grad<float>(batch.data().data(), batch.rows(), batch.dim(), nullptr);
}

EmbeddingMatrix koleo_grad(const EmbeddingMatrix& batch) {
  std::vector<double> x(batch.data().begin(), batch.data().end());
  std::vector<double> g(x.size(), 0.0);
  koleo::loss_and_grad<double>(x.data(), batch.rows(), batch.dim(), g.data());
  return EmbeddingMatrix(batch.rows(), batch.dim(), std::vector<float>(g.begin(), g.end()));
}

}  // namespace sbc
