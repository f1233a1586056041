#pragma once

#include <Eigen/Core>

namespace profmon {

// Gaussian posterior q(z|x) = N(mu, diag(sigma^2)).
struct LatentPosterior {
    Eigen::VectorXd mu;
    Eigen::VectorXd sigma;

    Eigen::Index dim() const { return mu.size(); }
};

}  // namespace profmon
