#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include <Eigen/Dense>

namespace afcp {

using Index = Eigen::Index;

/// Rows are points.
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kDefaultCutoff = 1e-12;

enum class KernelFamily { laplacian, gaussian_rbf };

std::string to_string(KernelFamily family);
KernelFamily kernel_family_from_string(const std::string& name);

/// Translation-invariant bounded kernel with k(x,x) = 1.
///   laplacian:    exp(-gamma * |x - x'|_1)
///   gaussian_rbf: exp(-gamma * |x - x'|_2^2)
/// An empty bandwidth means "auto", i.e. gamma = 1/d.
struct KernelSpec {
  KernelFamily family = KernelFamily::laplacian;
  std::optional<double> bandwidth;

  double resolved_bandwidth(Index dim) const;
};

double eval_kernel(const KernelSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& x2);

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
struct SymmetricEigen {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;

  double max_value() const { return values.size() ? values.maxCoeff() : 0.0; }
};

SymmetricEigen symmetric_eigen(const Eigen::MatrixXd& matrix);

/// H^+ rhs where eigenvalues <= cutoff * lambda_max are treated as zero.
Eigen::VectorXd pseudo_inverse_apply(const Eigen::MatrixXd& matrix, const Eigen::VectorXd& rhs,
                                     double cutoff = kDefaultCutoff);
Eigen::VectorXd pseudo_inverse_apply(const SymmetricEigen& eig, const Eigen::VectorXd& rhs,
                                     double cutoff = kDefaultCutoff);

/// Kernel matrix over the augmented sample (training inputs followed by the
/// query input). Immutable; the eigendecomposition is computed on first use
/// and shared between copies.
class GramMatrix {
 public:
  explicit GramMatrix(Eigen::MatrixXd entries);

  Index size() const { return entries_.rows(); }
  const Eigen::MatrixXd& entries() const { return entries_; }
  double operator()(Index i, Index j) const { return entries_(i, j); }
  const Eigen::VectorXd& diagonal() const { return diagonal_; }
  /// max_i K_ii
  double diag_max() const { return diag_max_; }

  const SymmetricEigen& eigen() const;

  /// Smallest eigenvalue of K/(n+1) above cutoff * lambda_max.
  double mu_star(double cutoff = kDefaultCutoff) const;

  /// Orthogonal projection onto the span of eigenvectors with eigenvalue
  /// above cutoff * lambda_max.
  Eigen::VectorXd project_to_range(const Eigen::VectorXd& a, double cutoff = kDefaultCutoff) const;

  /// min eigenvalue >= -tol * max eigenvalue.
  bool is_psd(double tol = 1e-10) const;

 private:
  struct EigenCache {
    std::once_flag once;
    SymmetricEigen eig;
  };

  Eigen::MatrixXd entries_;
  Eigen::VectorXd diagonal_;
  double diag_max_ = 0.0;
  std::shared_ptr<EigenCache> cache_;
};

/// Gram matrix of the rows of `points`, upper triangle computed in parallel
/// and mirrored so that symmetry is exact.
GramMatrix gram(const KernelSpec& spec, const PointMatrix& points);

/// Serial reference for `gram`.
GramMatrix gram_serial(const KernelSpec& spec, const PointMatrix& points);

/// (k(p_1, x), ..., k(p_m, x)) for the rows p_i of `points`.
Eigen::VectorXd kernel_row(const KernelSpec& spec, const PointMatrix& points,
                           const Eigen::Ref<const Eigen::VectorXd>& x);

/// Cross-kernel block k(a_i, b_j).
Eigen::MatrixXd kernel_cross(const KernelSpec& spec, const PointMatrix& a, const PointMatrix& b);

}  // namespace afcp
