#pragma once

#include "profmon/nn/network.hpp"
#include "profmon/posterior.hpp"
#include "profmon/profile.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace profmon {

enum class ModelKind { PCA, PPCA, AE, VAE, AAE };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& text);
inline bool is_deep(ModelKind k) { return k == ModelKind::AE || k == ModelKind::VAE || k == ModelKind::AAE; }

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 32;
    int epochs = 200;
    double dropout = 0.0;
    int latent_dim = 4;
    double lambda = 1.0;        // AAE fooling-loss weight
    std::uint64_t seed = 0;
    int mc_samples = 1;         // reparameterized draws per sample in the ELBO
    double decoder_var = 1.0;   // VAE likelihood variance
    bool disc_on_raw_half = false;  // AAE: feed the raw second encoder half instead of sampled codes
    bool frozen = false;        // run the loop without applying any update

    // Throws InvalidInput. epochs may be 0.
    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// AE: encoder emits r values. VAE/AAE: encoder emits (mu, log sigma^2), 2r values.
// The decoder always consumes r values; only AAE has a discriminator.
template <typename T>
struct Autoencoder {
    ModelKind kind = ModelKind::AE;
    int r = 0;
    double lambda = 1.0;
    double decoder_var = 1.0;
    bool disc_on_raw_half = false;
    std::uint64_t seed = 0;
    nn::Network<T> encoder;
    nn::Network<T> decoder;
    nn::Network<T> discriminator;

    bool probabilistic() const { return kind != ModelKind::AE; }
    int encoder_outputs() const { return probabilistic() ? 2 * r : r; }
};

// Table-style convolutional networks for 64x64 profiles, initialised from config.seed.
template <typename T>
Autoencoder<T> make_autoencoder(ModelKind kind, const TrainConfig& config);

// Arbitrary networks, e.g. small dense stand-ins for testing.
template <typename T>
Autoencoder<T> assemble_autoencoder(ModelKind kind, int r, nn::Network<T> encoder, nn::Network<T> decoder,
                                    nn::Network<T> discriminator = {});

// Batch tensor of a dataset's profiles, shape (height, width, 1).
template <typename T>
nn::Tensor<T> to_tensor(const Dataset& data, std::size_t first = 0, std::size_t count = SIZE_MAX);

struct LossOptions {
    nn::Mode mode = nn::Mode::Eval;
    nn::Rng* rng = nullptr;  // dropout and reparameterization noise
    bool backprop = false;   // accumulate parameter gradients (callers zero them)
};

// Per-pixel mean of squared residuals between the batch and the decoding of
// the posterior mean, averaged over the batch.
template <typename T>
double ae_loss(Autoencoder<T>& model, const nn::Tensor<T>& batch, const LossOptions& opt = {});

// 0.5 * sum(mu^2 + sigma^2 - log sigma^2 - 1). Throws InvalidInput unless sigma > 0.
double kld_diag_gaussian(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma);

// Negative ELBO averaged over the batch, m reparameterized draws per sample.
// Throws TrainingError if the value is not finite.
template <typename T>
double vae_loss(Autoencoder<T>& model, const nn::Tensor<T>& batch, int m, nn::Rng& rng,
                const LossOptions& opt = {});

// -(mean log(1 - D(z_prior)) + mean log D(z_posterior)), probabilities clamped
// to [1e-7, 1 - 1e-7]. Batches are r x n matrices.
template <typename T>
double aae_discriminator_loss(nn::Network<T>& disc, const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& prior,
                              const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& posterior,
                              bool backprop = false);

// Eval-mode posterior of every sample. For AE, sigma is all zeros.
template <typename T>
std::vector<LatentPosterior> encode(const Autoencoder<T>& model, const Dataset& data);

// Per-pixel mean squared error of posterior-mean reconstructions in eval mode.
template <typename T>
double validation_error(const Autoencoder<T>& model, const Dataset& data);

struct TrainingReport {
    std::vector<double> epoch_loss;       // reconstruction / ELBO loss per epoch
    std::vector<double> epoch_disc_loss;  // AAE only
    std::vector<double> epoch_gen_loss;   // AAE only
    double validation_error = 0.0;
    double wall_seconds = 0.0;
    ModelKind kind = ModelKind::AE;
    TrainConfig config;

    // Everything except wall time.
    bool same_outcome(const TrainingReport& other) const;
};

// Minibatch Adam training. Non-finite losses or gradients raise TrainingError
// carrying the epoch index.
template <typename T>
TrainingReport train(Autoencoder<T>& model, const Dataset& train_set, const Dataset& validation_set,
                     const TrainConfig& config);

// Sub-networks as PWNET1 files next to a JSON manifest.
void save_autoencoder(const std::filesystem::path& manifest, const Autoencoder<float>& model);
Autoencoder<float> load_autoencoder(const std::filesystem::path& manifest);

extern template struct Autoencoder<float>;
extern template struct Autoencoder<double>;

}  // namespace profmon
