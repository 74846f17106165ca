#pragma once

#include <Eigen/Dense>

namespace teamred {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

}  // namespace teamred
