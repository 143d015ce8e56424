#pragma once

#include "korol/image.hpp"

#include <Eigen/Dense>

namespace korol {

// Orthonormal DCT-II basis of size n: row k holds c_k cos(pi (2i+1) k / 2n).
Eigen::MatrixXd dct_matrix(int n);

// Orthonormal 2-D DCT-II (rows then columns). Energy preserving.
Eigen::MatrixXd dct2(const Eigen::MatrixXd& channel);

// Inverse of dct2 (2-D DCT-III under the same scaling).
Eigen::MatrixXd idct2(const Eigen::MatrixXd& coeffs);

// Returns the spatial stack, with dct2 / sqrt(H W) of every channel appended
// when `use_frequency` is set.
ImageStack make_input_stack(const ImageStack& spatial, bool use_frequency);

}  // namespace korol
