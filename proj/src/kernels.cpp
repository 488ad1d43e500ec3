#include "afcp/kernels.hpp"

#include <cmath>
#include <sstream>

#include "afcp/diagnostics.hpp"

namespace afcp {

namespace {

// Distance term inside the exponential: |x - x'|_1 or |x - x'|_2^2.
inline double kernel_distance(KernelFamily family, const double* x, const double* x2, Index d) {
  double acc = 0.0;
  if (family == KernelFamily::laplacian) {
    for (Index k = 0; k < d; ++k) acc += std::abs(x[k] - x2[k]);
  } else {
    for (Index k = 0; k < d; ++k) {
      const double diff = x[k] - x2[k];
      acc += diff * diff;
    }
  }
  return acc;
}

void check_points(const PointMatrix& points) {
  if (points.rows() == 0) throw InputError("gram: empty point list");
  if (points.cols() == 0) throw InputError("gram: points must have dimension >= 1");
}

}  // namespace

std::string to_string(KernelFamily family) {
  switch (family) {
    case KernelFamily::laplacian:
      return "laplacian";
    case KernelFamily::gaussian_rbf:
      return "gaussian_rbf";
  }
  return "unknown";
}

KernelFamily kernel_family_from_string(const std::string& name) {
  if (name == "laplacian") return KernelFamily::laplacian;
  if (name == "gaussian_rbf" || name == "gaussian" || name == "rbf") return KernelFamily::gaussian_rbf;
  throw InputError("unknown kernel family '" + name + "'");
}

double KernelSpec::resolved_bandwidth(Index dim) const {
  if (dim < 1) throw InputError("kernel: dimension must be >= 1");
  const double gamma = bandwidth ? *bandwidth : 1.0 / static_cast<double>(dim);
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw InputError("kernel: bandwidth must be positive and finite");
  return gamma;
}

double eval_kernel(const KernelSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& x2) {
  if (x.size() != x2.size()) {
    std::ostringstream msg;
    msg << "eval_kernel: dimension mismatch (" << x.size() << " vs " << x2.size() << ")";
    throw InputError(msg.str());
  }
  const double gamma = spec.resolved_bandwidth(x.size());
  return std::exp(-gamma * kernel_distance(spec.family, x.data(), x2.data(), x.size()));
}

SymmetricEigen symmetric_eigen(const Eigen::MatrixXd& matrix) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(matrix);
  if (solver.info() != Eigen::Success) throw std::runtime_error("symmetric eigendecomposition failed");
  return {solver.eigenvalues(), solver.eigenvectors()};
}

Eigen::VectorXd pseudo_inverse_apply(const SymmetricEigen& eig, const Eigen::VectorXd& rhs, double cutoff) {
  if (rhs.size() != eig.values.size()) throw InputError("pseudo_inverse_apply: size mismatch");
  const double threshold = cutoff * std::max(eig.max_value(), 0.0);
  Eigen::VectorXd coords = eig.vectors.transpose() * rhs;
  for (Index k = 0; k < coords.size(); ++k) {
    const double ev = eig.values(k);
    coords(k) = (ev > threshold && ev > 0.0) ? coords(k) / ev : 0.0;
  }
  return eig.vectors * coords;
}

Eigen::VectorXd pseudo_inverse_apply(const Eigen::MatrixXd& matrix, const Eigen::VectorXd& rhs, double cutoff) {
  if (matrix.rows() != matrix.cols()) throw InputError("pseudo_inverse_apply: matrix must be square");
  return pseudo_inverse_apply(symmetric_eigen(matrix), rhs, cutoff);
}

GramMatrix::GramMatrix(Eigen::MatrixXd entries)
    : entries_(std::move(entries)), cache_(std::make_shared<EigenCache>()) {
  if (entries_.rows() != entries_.cols() || entries_.rows() == 0)
    throw InputError("GramMatrix: entries must be a nonempty square matrix");
  diagonal_ = entries_.diagonal();
  if (!diagonal_.allFinite()) throw InputError("GramMatrix: non-finite diagonal entry");
  diag_max_ = diagonal_.maxCoeff();
}

const SymmetricEigen& GramMatrix::eigen() const {
  std::call_once(cache_->once, [this] {
    cache_->eig = symmetric_eigen(entries_);
    const double lmax = cache_->eig.max_value();
    const double lmin = cache_->eig.values.size() ? cache_->eig.values.minCoeff() : 0.0;
    if (lmin < -1e-10 * std::max(lmax, 0.0)) {
      std::ostringstream msg;
      msg << "Gram matrix is not PSD within tolerance (min eigenvalue " << lmin << ", max " << lmax << ")";
      warn(msg.str());
    }
  });
  return cache_->eig;
}

double GramMatrix::mu_star(double cutoff) const {
  const auto& eig = eigen();
  const double threshold = cutoff * std::max(eig.max_value(), 0.0);
  double best = 0.0;
  for (Index k = 0; k < eig.values.size(); ++k) {
    const double ev = eig.values(k);
    if (ev > threshold && ev > 0.0) {
      best = ev;
      break;  // ascending order
    }
  }
  return best / static_cast<double>(size());
}

Eigen::VectorXd GramMatrix::project_to_range(const Eigen::VectorXd& a, double cutoff) const {
  const auto& eig = eigen();
  const double threshold = cutoff * std::max(eig.max_value(), 0.0);
  Eigen::VectorXd coords = eig.vectors.transpose() * a;
  for (Index k = 0; k < coords.size(); ++k) {
    if (!(eig.values(k) > threshold && eig.values(k) > 0.0)) coords(k) = 0.0;
  }
  return eig.vectors * coords;
}

bool GramMatrix::is_psd(double tol) const {
  const auto& eig = eigen();
  return eig.values.minCoeff() >= -tol * std::max(eig.max_value(), 0.0);
}

GramMatrix gram(const KernelSpec& spec, const PointMatrix& points) {
  check_points(points);
  const Index m = points.rows();
  const Index d = points.cols();
  const double gamma = spec.resolved_bandwidth(d);
  Eigen::MatrixXd k(m, m);
#pragma omp parallel for schedule(dynamic, 8)
  for (Index i = 0; i < m; ++i) {
    const double* xi = points.row(i).data();
    k(i, i) = 1.0;
    for (Index j = i + 1; j < m; ++j) {
      k(i, j) = std::exp(-gamma * kernel_distance(spec.family, xi, points.row(j).data(), d));
    }
  }
  for (Index i = 0; i < m; ++i) {
    for (Index j = i + 1; j < m; ++j) k(j, i) = k(i, j);
  }
  return GramMatrix(std::move(k));
}

GramMatrix gram_serial(const KernelSpec& spec, const PointMatrix& points) {
  check_points(points);
  const Index m = points.rows();
  Eigen::MatrixXd k(m, m);
  for (Index i = 0; i < m; ++i) {
    k(i, i) = eval_kernel(spec, points.row(i).transpose(), points.row(i).transpose());
    for (Index j = i + 1; j < m; ++j) {
      k(i, j) = eval_kernel(spec, points.row(i).transpose(), points.row(j).transpose());
      k(j, i) = k(i, j);
    }
  }
  return GramMatrix(std::move(k));
}

Eigen::VectorXd kernel_row(const KernelSpec& spec, const PointMatrix& points,
                           const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (points.cols() != x.size()) throw InputError("kernel_row: dimension mismatch");
  const double gamma = spec.resolved_bandwidth(x.size());
  Eigen::VectorXd row(points.rows());
  for (Index i = 0; i < points.rows(); ++i)
    row(i) = std::exp(-gamma * kernel_distance(spec.family, points.row(i).data(), x.data(), x.size()));
  return row;
}

Eigen::MatrixXd kernel_cross(const KernelSpec& spec, const PointMatrix& a, const PointMatrix& b) {
  if (a.cols() != b.cols()) throw InputError("kernel_cross: dimension mismatch");
  const double gamma = spec.resolved_bandwidth(a.cols());
  Eigen::MatrixXd out(a.rows(), b.rows());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < b.rows(); ++j)
      out(i, j) = std::exp(-gamma * kernel_distance(spec.family, a.row(i).data(), b.row(j).data(), a.cols()));
  return out;
}

}  // namespace afcp
