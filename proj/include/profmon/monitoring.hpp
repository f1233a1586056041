#pragma once

#include "profmon/autoencoder.hpp"
#include "profmon/linear.hpp"
#include "profmon/posterior.hpp"
#include "profmon/profile.hpp"

#include <Eigen/Core>

#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace profmon {

// Uniform view of a fitted model for scoring: an encoder producing a Gaussian
// posterior and a decoder mapping codes back to profiles. Implementations are
// immutable and safe to share across threads.
class Monitor {
public:
    virtual ~Monitor() = default;

    virtual ModelKind kind() const = 0;
    virtual Eigen::Index dim() const = 0;
    virtual int latent_dim() const = 0;

    // Columns of x are flattened profiles.
    virtual std::vector<LatentPosterior> posteriors(const Eigen::MatrixXd& x) const = 0;
    virtual Eigen::MatrixXd decode(const Eigen::MatrixXd& z) const = 0;

    virtual bool supports_t2() const { return true; }
    // Per-dimension contributions to T2; the default is the diagonal-Gaussian KLD to N(0, I).
    virtual Eigen::VectorXd t2_terms(const LatentPosterior& post) const;
};

// Q is the squared residual from the principal subspace, T2 the Mahalanobis
// distance of the code.
class PCAMonitor final : public Monitor {
public:
    explicit PCAMonitor(PCAModel model) : model_(std::move(model)) {}
    ModelKind kind() const override { return ModelKind::PCA; }
    Eigen::Index dim() const override { return model_.dim(); }
    int latent_dim() const override { return model_.components(); }
    std::vector<LatentPosterior> posteriors(const Eigen::MatrixXd& x) const override;
    Eigen::MatrixXd decode(const Eigen::MatrixXd& z) const override;
    Eigen::VectorXd t2_terms(const LatentPosterior& post) const override;
    const PCAModel& model() const { return model_; }

private:
    PCAModel model_;
};

// With squared_mean_t2 the T2 statistic is ||mu||^2 instead of the KLD.
class PPCAMonitor final : public Monitor {
public:
    explicit PPCAMonitor(PPCAModel model, bool squared_mean_t2 = false)
        : model_(std::move(model)), squared_mean_t2_(squared_mean_t2) {}
    ModelKind kind() const override { return ModelKind::PPCA; }
    Eigen::Index dim() const override { return model_.dim(); }
    int latent_dim() const override { return model_.latent_dim(); }
    std::vector<LatentPosterior> posteriors(const Eigen::MatrixXd& x) const override;
    Eigen::MatrixXd decode(const Eigen::MatrixXd& z) const override;
    Eigen::VectorXd t2_terms(const LatentPosterior& post) const override;
    const PPCAModel& model() const { return model_; }

private:
    PPCAModel model_;
    bool squared_mean_t2_;
};

// Deterministic AE posteriors are degenerate (sigma = 0) and have no T2.
class AutoencoderMonitor final : public Monitor {
public:
    explicit AutoencoderMonitor(std::shared_ptr<const Autoencoder<float>> model);
    ModelKind kind() const override { return model_->kind; }
    Eigen::Index dim() const override;
    int latent_dim() const override { return model_->r; }
    std::vector<LatentPosterior> posteriors(const Eigen::MatrixXd& x) const override;
    Eigen::MatrixXd decode(const Eigen::MatrixXd& z) const override;
    bool supports_t2() const override { return model_->probabilistic(); }
    Eigen::VectorXd t2_terms(const LatentPosterior& post) const override;
    const Autoencoder<float>& model() const { return *model_; }

private:
    std::shared_ptr<const Autoencoder<float>> model_;
};

Eigen::VectorXd to_vector(const Profile& p);

LatentPosterior posterior(const Monitor& model, const Profile& x);

// m = 0 uses the posterior mean; m >= 1 averages m reparameterized draws.
double q_ere(const Monitor& model, const Profile& x, int m, std::mt19937_64& rng);

// Throws UnsupportedStatistic for a deterministic AE.
double t2_kld(const Monitor& model, const Profile& x);

struct Decomposition {
    Eigen::VectorXd q;                 // per pixel, sums to Q_ERE
    std::optional<Eigen::VectorXd> t2; // per latent dimension, absent for AE
};

Decomposition decompose(const Monitor& model, const Profile& x, int m, std::mt19937_64& rng);

struct MonitoringRecord {
    std::string sample_id;
    std::optional<int> label;
    double q_ere = 0.0;
    std::optional<double> t2_kld;
    std::optional<Eigen::VectorXd> q_decomp;
    std::optional<Eigen::VectorXd> t2_decomp;
};

struct ScoreOptions {
    int mc_samples = 0;
    std::uint64_t seed = 0;   // sample i draws from a generator seeded by (seed, i)
    bool decompose = false;
};

std::vector<MonitoringRecord> score(const Monitor& model, const Dataset& data, const ScoreOptions& opt = {});

// Linear interpolation at rank (n - 1) * percentile / 100 of the sorted values.
double compute_ucl(std::span<const double> values, double percentile = 95.0);

// Fraction strictly above the limit.
double estimate_far(std::span<const double> test_values, double ucl);
double detection_power(std::span<const double> oc_values, double ucl);

struct ControlLimits {
    double ucl_q = 0.0;
    std::optional<double> ucl_t2;
    double percentile = 95.0;
    double estimated_far = 0.0;  // Q statistic on the test set
    std::optional<double> estimated_far_t2;

    void validate() const;
};

std::vector<double> q_values(const std::vector<MonitoringRecord>& records);
// Throws UnsupportedStatistic when any record lacks T2.
std::vector<double> t2_values(const std::vector<MonitoringRecord>& records);

// Limits from validation records, FAR from test records.
ControlLimits set_limits(const std::vector<MonitoringRecord>& validation, const std::vector<MonitoringRecord>& test,
                         double percentile = 95.0);

}  // namespace profmon
