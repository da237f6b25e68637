#pragma once

#include <Eigen/Core>

namespace npiv {

// One sample: outcome y1, structural regressors y2 (first column is the
// derivative target), instruments x. Columns of y2 and x may be shared.
struct Dataset {
  Eigen::VectorXd y1;
  Eigen::MatrixXd y2;
  Eigen::MatrixXd x;

  int n() const { return static_cast<int>(y1.size()); }
};

}  // namespace npiv
