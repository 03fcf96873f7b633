#pragma once

#include <cmath>
#include <vector>

#include "billiards/common.hpp"

namespace billiards {

/// Small dense matrix, row-major. Sized for the tiny systems that appear in
/// this toolkit (KKT projections, return-map Jacobians, bounce Hessians).
class Mat {
  public:
    Mat() = default;
    Mat(int rows, int cols) : r_(rows), c_(cols), a_(static_cast<size_t>(rows) * cols, 0.0) {}
    int rows() const { return r_; }
    int cols() const { return c_; }
    double operator()(int i, int j) const { return a_[static_cast<size_t>(i) * c_ + j]; }
    double& operator()(int i, int j) { return a_[static_cast<size_t>(i) * c_ + j]; }

  private:
    int r_ = 0, c_ = 0;
    std::vector<double> a_;
};

/// Solves A x = b in place by Gaussian elimination with partial pivoting.
/// Returns false when the pivot drops below `tol` (singular system).
bool solve_dense(Mat a, std::vector<double> b, std::vector<double>& x, double tol = 1e-14);

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
std::vector<double> symmetric_eigenvalues(Mat a, int sweeps = 64);

/// Orthonormal basis of the complement of unit vector `u` in R^n
/// (n-1 vectors), built by Gram-Schmidt over the coordinate axes.
std::vector<Vec> orthonormal_complement(const Vec& u);

}  // namespace billiards
