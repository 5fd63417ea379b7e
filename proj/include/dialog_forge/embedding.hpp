#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace dialog_forge {

/// Cosine similarity; zero when either side has zero norm.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_similarity(const Eigen::MatrixBase<DerivedA>& a,
                                            const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  const Scalar denom = a.norm() * b.norm();
  if (denom == Scalar(0)) return Scalar(0);
  return a.dot(b) / denom;
}

/// Row-normalized embedding matrix for exact linear-scan similarity search.
template <typename Scalar>
class EmbeddingIndex {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  EmbeddingIndex() = default;

  explicit EmbeddingIndex(const std::vector<Vector>& rows) {
    if (rows.empty()) return;
    unit_rows_.resize(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const Scalar norm = rows[i].norm();
      if (norm == Scalar(0)) {
        unit_rows_.row(static_cast<Eigen::Index>(i)).setZero();
      } else {
        unit_rows_.row(static_cast<Eigen::Index>(i)) = (rows[i] / norm).transpose();
      }
    }
  }

  /// Cosine similarity of row `i` against every row.
  Vector similarities_to(Eigen::Index i) const { return unit_rows_ * unit_rows_.row(i).transpose(); }

  Eigen::Index size() const noexcept { return unit_rows_.rows(); }
  Eigen::Index dim() const noexcept { return unit_rows_.cols(); }

 private:
  Matrix unit_rows_;
};

}  // namespace dialog_forge
