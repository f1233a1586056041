#include "profmon/autoencoder.hpp"

#include "profmon/errors.hpp"
#include "profmon/nn/architectures.hpp"
#include "profmon/nn/serialize.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

namespace profmon {

using nn::Mode;
using nn::Network;
using nn::Shape3;
using nn::Tensor;

std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::PCA: return "pca";
        case ModelKind::PPCA: return "ppca";
        case ModelKind::AE: return "ae";
        case ModelKind::VAE: return "vae";
        case ModelKind::AAE: return "aae";
    }
    return "unknown";
}

ModelKind parse_model_kind(const std::string& text) {
    if (text == "pca") return ModelKind::PCA;
    if (text == "ppca") return ModelKind::PPCA;
    if (text == "ae") return ModelKind::AE;
    if (text == "vae") return ModelKind::VAE;
    if (text == "aae") return ModelKind::AAE;
    throw InvalidInput("unknown model kind '" + text + "'");
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InvalidInput("learning rate must be positive");
    if (batch_size < 1) throw InvalidInput("batch size must be positive");
    if (epochs < 0) throw InvalidInput("epoch count must be nonnegative");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidInput("dropout must lie in [0, 1)");
    if (latent_dim < 1) throw InvalidInput("latent dimension must be positive");
    if (!(lambda > 0.0)) throw InvalidInput("lambda must be positive");
    if (mc_samples < 1) throw InvalidInput("Monte Carlo sample count must be at least 1");
    if (!(decoder_var > 0.0)) throw InvalidInput("decoder variance must be positive");
}

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

constexpr double kClampLo = 1e-7;
constexpr double kClampHi = 1.0 - 1e-7;

template <typename T>
Tensor<T> code_tensor(const Mat<T>& z) {
    Tensor<T> t(static_cast<int>(z.cols()), Shape3{1, 1, static_cast<int>(z.rows())});
    t.matrix() = z;
    return t;
}

template <typename T>
void check_reconstruction(const Tensor<T>& xhat, const Tensor<T>& x) {
    if (!(xhat.shape == x.shape) || xhat.n != x.n)
        throw ShapeError("decoder output " + xhat.shape.str() + " does not match input " + x.shape.str());
}

template <typename T>
void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw TrainingError(std::string(what) + " is not finite");
}

template <typename T>
Mat<T> standard_normal(Eigen::Index rows, Eigen::Index cols, nn::Rng& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    Mat<T> e(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) e(i, j) = static_cast<T>(n01(rng));
    return e;
}

// -lambda * mean log(1 - D(z)); returns the loss and, through dz, its gradient
// with respect to z.
template <typename T>
double generator_loss(Network<T>& disc, const Mat<T>& z, double lambda, Mat<T>* dz) {
    const Tensor<T>& d = disc.forward(code_tensor(z), Mode::Train);
    const auto n = static_cast<double>(z.cols());
    double loss = 0.0;
    Tensor<T> dd(d.n, d.shape);
    for (int i = 0; i < d.n; ++i) {
        const double p = d.data[i];
        const double pc = std::clamp(p, kClampLo, kClampHi);
        loss -= std::log(1.0 - pc);
        if (p > kClampLo && p < kClampHi) dd.data[i] = static_cast<T>(lambda / (n * (1.0 - p)));
    }
    loss *= lambda / n;
    if (dz) *dz = disc.backward(dd, true).matrix();
    return loss;
}

template <typename T>
Tensor<T> gather(const Tensor<T>& all, const std::vector<std::size_t>& order, std::size_t first, std::size_t count) {
    Tensor<T> b(static_cast<int>(count), all.shape);
    const std::size_t f = all.features();
    for (std::size_t i = 0; i < count; ++i)
        std::copy_n(all.data.begin() + static_cast<std::ptrdiff_t>(order[first + i] * f), f,
                    b.data.begin() + static_cast<std::ptrdiff_t>(i * f));
    return b;
}

constexpr std::size_t kInferChunk = 64;

}  // namespace

template <typename T>
Autoencoder<T> assemble_autoencoder(ModelKind kind, int r, Network<T> encoder, Network<T> decoder,
                                    Network<T> discriminator) {
    if (!is_deep(kind)) throw InvalidInput("not an autoencoder kind: " + to_string(kind));
    Autoencoder<T> m;
    m.kind = kind;
    m.r = r;
    m.encoder = std::move(encoder);
    m.decoder = std::move(decoder);
    m.discriminator = std::move(discriminator);
    const auto e = static_cast<std::size_t>(m.encoder_outputs());
    if (m.encoder.output_shape().size() != e)
        throw ShapeError("encoder emits " + std::to_string(m.encoder.output_shape().size()) + " values, expected " +
                         std::to_string(e));
    if (m.decoder.input_shape().size() != static_cast<std::size_t>(r))
        throw ShapeError("decoder input does not have " + std::to_string(r) + " values");
    if (!(m.decoder.output_shape() == m.encoder.input_shape()))
        throw ShapeError("decoder output " + m.decoder.output_shape().str() + " does not match encoder input " +
                         m.encoder.input_shape().str());
    if (kind == ModelKind::AAE) {
        if (m.discriminator.size() == 0) throw InvalidInput("AAE requires a discriminator");
        if (m.discriminator.input_shape().size() != static_cast<std::size_t>(r) ||
            m.discriminator.output_shape().size() != 1)
            throw ShapeError("discriminator must map r values to one probability");
    }
    return m;
}

template <typename T>
Autoencoder<T> make_autoencoder(ModelKind kind, const TrainConfig& config) {
    config.validate();
    const int r = config.latent_dim;
    const auto act = kind == ModelKind::AAE ? nn::Activation::LeakyReLU : nn::Activation::ReLU;
    const int outputs = kind == ModelKind::AE ? r : 2 * r;
    nn::Rng rng(config.seed);
    Network<T> enc(nn::conv_encoder(outputs, act, config.dropout), Shape3{64, 64, 1});
    enc.initialize(rng);
    Network<T> dec(nn::conv_decoder(r, act), Shape3{1, 1, r});
    dec.initialize(rng);
    Network<T> disc;
    if (kind == ModelKind::AAE) {
        disc = Network<T>(nn::discriminator(r), Shape3{1, 1, r});
        disc.initialize(rng);
    }
    auto m = assemble_autoencoder(kind, r, std::move(enc), std::move(dec), std::move(disc));
    m.lambda = config.lambda;
    m.decoder_var = config.decoder_var;
    m.disc_on_raw_half = config.disc_on_raw_half;
    m.seed = config.seed;
    return m;
}

template <typename T>
Tensor<T> to_tensor(const Dataset& data, std::size_t first, std::size_t count) {
    if (first > data.size()) throw InvalidInput("tensor range starts past the dataset");
    count = std::min(count, data.size() - first);
    Tensor<T> t(static_cast<int>(count), Shape3{data.height(), data.width(), 1});
    const std::size_t d = data.dim();
    for (std::size_t i = 0; i < count; ++i) {
        const auto v = data[first + i].values();
        std::transform(v.begin(), v.end(), t.data.begin() + static_cast<std::ptrdiff_t>(i * d),
                       [](float x) { return static_cast<T>(x); });
    }
    return t;
}

template <typename T>
double ae_loss(Autoencoder<T>& model, const Tensor<T>& batch, const LossOptions& opt) {
    if (!(batch.shape == model.encoder.input_shape()))
        throw ShapeError("batch shape " + batch.shape.str() + " does not match encoder input " +
                         model.encoder.input_shape().str());
    const Tensor<T>& h = model.encoder.forward(batch, opt.mode, opt.rng);
    const Mat<T> mu = h.matrix().topRows(model.r);
    const Tensor<T>& xhat = model.decoder.forward(code_tensor(mu), opt.mode, opt.rng);
    check_reconstruction(xhat, batch);

    const double scale = 1.0 / (static_cast<double>(batch.features()) * batch.n);
    Tensor<T> dxhat(xhat.n, xhat.shape);
    double sum = 0.0;
    for (std::size_t i = 0; i < xhat.data.size(); ++i) {
        const double diff = static_cast<double>(xhat.data[i]) - static_cast<double>(batch.data[i]);
        sum += diff * diff;
        dxhat.data[i] = static_cast<T>(2.0 * diff * scale);
    }
    const double loss = sum * scale;
    if (opt.backprop) {
        check_finite<T>(loss, "reconstruction loss");
        const Tensor<T>& dz = model.decoder.backward(dxhat, true);
        Tensor<T> dh(h.n, h.shape);
        dh.matrix().topRows(model.r) = dz.matrix();
        model.encoder.backward(dh, false);
    }
    return loss;
}

double kld_diag_gaussian(const Eigen::VectorXd& mu, const Eigen::VectorXd& sigma) {
    if (mu.size() != sigma.size()) throw InvalidInput("mu and sigma lengths differ");
    double k = 0.0;
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
        const double s = sigma(i);
        if (!(s > 0.0)) throw InvalidInput("posterior standard deviations must be positive");
        const double s2 = s * s;
        k += mu(i) * mu(i) + s2 - std::log(s2) - 1.0;
    }
    return 0.5 * k;
}

template <typename T>
double vae_loss(Autoencoder<T>& model, const Tensor<T>& batch, int m, nn::Rng& rng, const LossOptions& opt) {
    if (!model.probabilistic()) throw InvalidInput("vae_loss needs an encoder with a variance head");
    if (m < 1) throw InvalidInput("Monte Carlo sample count must be at least 1");
    if (!(batch.shape == model.encoder.input_shape()))
        throw ShapeError("batch shape " + batch.shape.str() + " does not match encoder input " +
                         model.encoder.input_shape().str());
    nn::Rng* layer_rng = opt.rng ? opt.rng : &rng;
    const Tensor<T>& h = model.encoder.forward(batch, opt.mode, layer_rng);
    const int r = model.r;
    const Mat<T> mu = h.matrix().topRows(r);
    const Mat<T> lv = h.matrix().bottomRows(r);
    const Mat<T> sigma = (lv.array() * T(0.5)).exp().matrix();
    const double n = batch.n;

    double kld = 0.0;
    for (Eigen::Index j = 0; j < mu.cols(); ++j)
        for (Eigen::Index i = 0; i < r; ++i) {
            const double u = mu(i, j), l = lv(i, j);
            kld += 0.5 * (u * u + std::exp(l) - l - 1.0);
        }

    Mat<T> dmu = Mat<T>::Zero(r, mu.cols());
    Mat<T> dlv = Mat<T>::Zero(r, mu.cols());
    const double rec_scale = 1.0 / (m * model.decoder_var * n);
    double rec = 0.0;
    for (int s = 0; s < m; ++s) {
        const Mat<T> eps = standard_normal<T>(r, mu.cols(), rng);
        const Mat<T> z = mu + (sigma.array() * eps.array()).matrix();
        const Tensor<T>& xhat = model.decoder.forward(code_tensor(z), opt.mode, layer_rng);
        check_reconstruction(xhat, batch);
        Tensor<T> dxhat(xhat.n, xhat.shape);
        for (std::size_t i = 0; i < xhat.data.size(); ++i) {
            const double diff = static_cast<double>(xhat.data[i]) - static_cast<double>(batch.data[i]);
            rec += diff * diff;
            dxhat.data[i] = static_cast<T>(2.0 * diff * rec_scale);
        }
        if (opt.backprop) {
            const auto dz = model.decoder.backward(dxhat, true).matrix();
            dmu += dz;
            dlv.array() += dz.array() * eps.array() * sigma.array() * T(0.5);
        }
    }
    const double loss = rec * rec_scale + kld / n;
    if (!std::isfinite(loss)) throw TrainingError("VAE loss is not finite");
    if (opt.backprop) {
        dmu.array() += mu.array() / T(n);
        dlv.array() += (lv.array().exp() - T(1)) * T(0.5 / n);
        Tensor<T> dh(h.n, h.shape);
        dh.matrix().topRows(r) = dmu;
        dh.matrix().bottomRows(r) = dlv;
        model.encoder.backward(dh, false);
    }
    return loss;
}

template <typename T>
double aae_discriminator_loss(Network<T>& disc, const Mat<T>& prior, const Mat<T>& posterior, bool backprop) {
    const auto r = static_cast<Eigen::Index>(disc.input_shape().size());
    if (prior.rows() != r || posterior.rows() != r)
        throw ShapeError("discriminator expects codes of length " + std::to_string(r));
    if (prior.cols() == 0 || posterior.cols() == 0) throw InvalidInput("discriminator batches must be nonempty");

    // Prior samples are pushed toward D = 0, posterior samples toward D = 1.
    auto term = [&](const Mat<T>& z, bool is_prior) {
        const Tensor<T>& d = disc.forward(code_tensor(z), Mode::Train);
        const auto n = static_cast<double>(z.cols());
        double sum = 0.0;
        Tensor<T> dd(d.n, d.shape);
        for (int i = 0; i < d.n; ++i) {
            const double p = d.data[i];
            const double pc = std::clamp(p, kClampLo, kClampHi);
            sum += is_prior ? std::log(1.0 - pc) : std::log(pc);
            if (p > kClampLo && p < kClampHi) dd.data[i] = static_cast<T>(is_prior ? 1.0 / (n * (1.0 - p)) : -1.0 / (n * p));
        }
        if (backprop) disc.backward(dd, false);
        return -sum / n;
    };
    return term(prior, true) + term(posterior, false);
}

template <typename T>
std::vector<LatentPosterior> encode(const Autoencoder<T>& model, const Dataset& data) {
    std::vector<LatentPosterior> out;
    out.reserve(data.size());
    for (std::size_t first = 0; first < data.size(); first += kInferChunk) {
        const Tensor<T> h = model.encoder.infer(to_tensor<T>(data, first, kInferChunk));
        const auto hm = h.matrix();
        for (int j = 0; j < h.n; ++j) {
            LatentPosterior p;
            p.mu = hm.col(j).topRows(model.r).template cast<double>();
            if (model.probabilistic())
                p.sigma = (hm.col(j).bottomRows(model.r).template cast<double>().array() * 0.5).exp().matrix();
            else
                p.sigma = Eigen::VectorXd::Zero(model.r);
            out.push_back(std::move(p));
        }
    }
    return out;
}

template <typename T>
double validation_error(const Autoencoder<T>& model, const Dataset& data) {
    if (data.empty()) throw InvalidInput("validation set is empty");
    double sum = 0.0;
    for (std::size_t first = 0; first < data.size(); first += kInferChunk) {
        const Tensor<T> x = to_tensor<T>(data, first, kInferChunk);
        const Tensor<T> h = model.encoder.infer(x);
        const Mat<T> mu = h.matrix().topRows(model.r);
        const Tensor<T> xhat = model.decoder.infer(code_tensor(mu));
        check_reconstruction(xhat, x);
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            const double diff = static_cast<double>(xhat.data[i]) - static_cast<double>(x.data[i]);
            sum += diff * diff;
        }
    }
    return sum / (static_cast<double>(data.size()) * static_cast<double>(data.dim()));
}

bool TrainingReport::same_outcome(const TrainingReport& o) const {
    return epoch_loss == o.epoch_loss && epoch_disc_loss == o.epoch_disc_loss && epoch_gen_loss == o.epoch_gen_loss &&
           validation_error == o.validation_error && kind == o.kind && config == o.config;
}

template <typename T>
TrainingReport train(Autoencoder<T>& model, const Dataset& train_set, const Dataset& validation_set,
                     const TrainConfig& config) {
    config.validate();
    if (train_set.empty()) throw InvalidInput("training set is empty");
    if (validation_set.empty()) throw InvalidInput("validation set is empty");
    if (config.latent_dim != model.r) throw InvalidInput("config latent dimension does not match the model");
    const auto start = std::chrono::steady_clock::now();

    TrainingReport report;
    report.kind = model.kind;
    report.config = config;

    const Tensor<T> all = to_tensor<T>(train_set);
    if (!(all.shape == model.encoder.input_shape()))
        throw ShapeError("training profiles " + all.shape.str() + " do not match encoder input " +
                         model.encoder.input_shape().str());

    nn::Rng rng(config.seed ^ 0x6a09e667f3bcc909ULL);
    nn::Adam<T> opt_enc(config.learning_rate), opt_dec(config.learning_rate), opt_disc(config.learning_rate),
        opt_gen(config.learning_rate);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const LossOptions train_opt{Mode::Train, &rng, true};
    const int r = model.r;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0, disc_sum = 0.0, gen_sum = 0.0;
        try {
            for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(config.batch_size)) {
                const std::size_t count = std::min<std::size_t>(config.batch_size, order.size() - first);
                const Tensor<T> xb = gather(all, order, first, count);
                double loss = 0.0;

                model.encoder.zero_grad();
                model.decoder.zero_grad();
                if (model.kind == ModelKind::VAE)
                    loss = vae_loss(model, xb, config.mc_samples, rng, train_opt);
                else
                    loss = ae_loss(model, xb, train_opt);
                check_finite<T>(loss, "training loss");
                if (!config.frozen) {
                    opt_enc.step(model.encoder);
                    opt_dec.step(model.decoder);
                }
                loss_sum += loss * static_cast<double>(count);

                if (model.kind != ModelKind::AAE) continue;

                // Discriminator step on fresh prior draws.
                const Tensor<T>& h = model.encoder.forward(xb, Mode::Train, &rng);
                const Mat<T> mu = h.matrix().topRows(r);
                const Mat<T> lv = h.matrix().bottomRows(r);
                const Mat<T> sigma = (lv.array() * T(0.5)).exp().matrix();
                const Mat<T> eps = standard_normal<T>(r, mu.cols(), rng);
                const Mat<T> zq = model.disc_on_raw_half ? lv : Mat<T>(mu + (sigma.array() * eps.array()).matrix());
                const Mat<T> zp = standard_normal<T>(r, mu.cols(), rng);
                model.discriminator.zero_grad();
                const double dl = aae_discriminator_loss(model.discriminator, zp, zq, true);
                check_finite<T>(dl, "discriminator loss");
                if (!config.frozen) opt_disc.step(model.discriminator);
                disc_sum += dl * static_cast<double>(count);

                // Generator step: the encoder learns to make posterior codes look like prior draws.
                Mat<T> dz;
                const double gl = generator_loss(model.discriminator, zq, model.lambda, &dz);
                check_finite<T>(gl, "generator loss");
                Tensor<T> dh(static_cast<int>(count), model.encoder.output_shape());
                if (model.disc_on_raw_half) {
                    dh.matrix().bottomRows(r) = dz;
                } else {
                    dh.matrix().topRows(r) = dz;
                    dh.matrix().bottomRows(r) = (dz.array() * eps.array() * sigma.array() * T(0.5)).matrix();
                }
                model.encoder.zero_grad();
                model.encoder.backward(dh, false);
                if (!config.frozen) opt_gen.step(model.encoder);
                gen_sum += gl * static_cast<double>(count);
            }
        } catch (const TrainingError& e) {
            throw TrainingError("epoch " + std::to_string(epoch) + ": " + e.what(), epoch);
        }
        const double n = static_cast<double>(order.size());
        report.epoch_loss.push_back(loss_sum / n);
        if (model.kind == ModelKind::AAE) {
            report.epoch_disc_loss.push_back(disc_sum / n);
            report.epoch_gen_loss.push_back(gen_sum / n);
        }
    }
    report.validation_error = validation_error(model, validation_set);
    if (!std::isfinite(report.validation_error))
        throw TrainingError("validation error is not finite", config.epochs);
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

void save_autoencoder(const std::filesystem::path& manifest, const Autoencoder<float>& model) {
    const auto dir = manifest.parent_path();
    const std::string stem = manifest.stem().string();
    nlohmann::json j;
    j["format"] = "profmon-autoencoder";
    j["version"] = 1;
    j["kind"] = to_string(model.kind);
    j["r"] = model.r;
    j["lambda"] = model.lambda;
    j["decoder_var"] = model.decoder_var;
    j["disc_on_raw_half"] = model.disc_on_raw_half;
    j["seed"] = model.seed;
    j["encoder"] = stem + ".encoder.pwnet";
    j["decoder"] = stem + ".decoder.pwnet";
    nn::save_network(dir / j["encoder"].get<std::string>(), model.encoder);
    nn::save_network(dir / j["decoder"].get<std::string>(), model.decoder);
    if (model.kind == ModelKind::AAE) {
        j["discriminator"] = stem + ".discriminator.pwnet";
        nn::save_network(dir / j["discriminator"].get<std::string>(), model.discriminator);
    }
    std::ofstream out(manifest);
    if (!out) throw IoError("cannot write " + manifest.string());
    out << j.dump(2) << '\n';
}

Autoencoder<float> load_autoencoder(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw IoError("cannot open " + manifest.string());
    nlohmann::json j;
    try {
        in >> j;
        if (j.at("format") != "profmon-autoencoder" || j.at("version") != 1)
            throw CompatibilityError(manifest.string() + ": unsupported model manifest version");
        const auto dir = manifest.parent_path();
        const ModelKind kind = parse_model_kind(j.at("kind").get<std::string>());
        Network<float> disc;
        if (kind == ModelKind::AAE) disc = nn::load_network<float>(dir / j.at("discriminator").get<std::string>());
        auto m = assemble_autoencoder(kind, j.at("r").get<int>(),
                                      nn::load_network<float>(dir / j.at("encoder").get<std::string>()),
                                      nn::load_network<float>(dir / j.at("decoder").get<std::string>()),
                                      std::move(disc));
        m.lambda = j.at("lambda").get<double>();
        m.decoder_var = j.at("decoder_var").get<double>();
        m.disc_on_raw_half = j.at("disc_on_raw_half").get<bool>();
        m.seed = j.at("seed").get<std::uint64_t>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw CompatibilityError(manifest.string() + ": malformed model manifest: " + e.what());
    }
}

#define PROFMON_INSTANTIATE(T)                                                                                   \
    template struct Autoencoder<T>;                                                                              \
    template Autoencoder<T> make_autoencoder<T>(ModelKind, const TrainConfig&);                                  \
    template Autoencoder<T> assemble_autoencoder<T>(ModelKind, int, Network<T>, Network<T>, Network<T>);         \
    template Tensor<T> to_tensor<T>(const Dataset&, std::size_t, std::size_t);                                   \
    template double ae_loss<T>(Autoencoder<T>&, const Tensor<T>&, const LossOptions&);                           \
    template double vae_loss<T>(Autoencoder<T>&, const Tensor<T>&, int, nn::Rng&, const LossOptions&);           \
    template double aae_discriminator_loss<T>(Network<T>&, const Mat<T>&, const Mat<T>&, bool);                  \
    template std::vector<LatentPosterior> encode<T>(const Autoencoder<T>&, const Dataset&);                      \
    template double validation_error<T>(const Autoencoder<T>&, const Dataset&);                                  \
    template TrainingReport train<T>(Autoencoder<T>&, const Dataset&, const Dataset&, const TrainConfig&);

PROFMON_INSTANTIATE(float)
PROFMON_INSTANTIATE(double)

}  // namespace profmon
