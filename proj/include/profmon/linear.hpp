#pragma once

#include "profmon/posterior.hpp"
#include "profmon/profile.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <variant>

namespace profmon {

// Either a fixed component count or the smallest count reaching an
// explained-variance share.
struct ComponentSelector {
    int k = 0;
    double ratio = 0.0;

    static ComponentSelector fixed(int k) { return {k, 0.0}; }
    static ComponentSelector explained(double ratio) { return {0, ratio}; }
    bool is_fixed() const { return k > 0; }
};

struct PCAModel {
    Eigen::VectorXd mean;
    Eigen::MatrixXd W;           // d x k, orthonormal columns
    Eigen::VectorXd latent_var;  // diagonal of the latent covariance
    Eigen::VectorXd eigenvalues; // all nonzero sample-covariance eigenvalues, descending

    int components() const { return static_cast<int>(W.cols()); }
    Eigen::Index dim() const { return mean.size(); }
};

// Columns of x are samples. Throws InvalidInput for fewer than 2 samples and
// ModelFitError for degenerate data.
PCAModel fit_pca(const Eigen::MatrixXd& x, const ComponentSelector& selector);
PCAModel fit_pca(const Dataset& train, const ComponentSelector& selector);

double pca_q(const PCAModel& model, const Eigen::VectorXd& x);
double pca_t2(const PCAModel& model, const Eigen::VectorXd& x);

enum class PosteriorConvention {
    NoiseScaled,  // sigma^2 M^-1
    Literal,      // M^-1
};

struct PPCAModel {
    Eigen::VectorXd mean;
    Eigen::MatrixXd W;  // d x r
    double sigma2 = 0.0;
    Eigen::MatrixXd M;  // W'W + sigma^2 I
    PosteriorConvention convention = PosteriorConvention::NoiseScaled;

    int latent_dim() const { return static_cast<int>(W.cols()); }
    Eigen::Index dim() const { return mean.size(); }
    Eigen::MatrixXd posterior_cov() const;
};

// Maximum-likelihood closed form on the 1/n sample covariance.
PPCAModel fit_ppca(const Eigen::MatrixXd& x, int r);
PPCAModel fit_ppca(const Dataset& train, int r);

// Assembles M from explicit parts; throws InvalidInput unless sigma2 > 0.
PPCAModel make_ppca(Eigen::VectorXd mean, Eigen::MatrixXd W, double sigma2,
                    PosteriorConvention convention = PosteriorConvention::NoiseScaled);

LatentPosterior ppca_posterior(const PPCAModel& model, const Eigen::VectorXd& x);
double ppca_t2kld(const PPCAModel& model, const Eigen::VectorXd& x);
double ppca_qere(const PPCAModel& model, const Eigen::VectorXd& x);

// "PWLIN1" container.
void save_linear(const std::filesystem::path& path, const PCAModel& model);
void save_linear(const std::filesystem::path& path, const PPCAModel& model);
std::variant<PCAModel, PPCAModel> load_linear(const std::filesystem::path& path);

}  // namespace profmon
