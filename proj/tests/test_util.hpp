#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "flowfuse/random.hpp"

namespace flowfuse::testing {

inline Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                                     double lo = -1.0, double hi = 1.0) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.uniform(lo, hi);
    return m;
}

/// Entries in [-1, 1] with |x| >= gap, for checking ops with a kink at 0.
inline Eigen::MatrixXd random_away_from_zero(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                                             double gap = 1e-3) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        const double mag = rng.uniform(gap, 1.0);
        m(i) = rng.uniform() < 0.5 ? -mag : mag;
    }
    return m;
}

}  // namespace flowfuse::testing
