#include "profmon/monitoring.hpp"

#include "profmon/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace profmon {

Eigen::VectorXd Monitor::t2_terms(const LatentPosterior& post) const {
    Eigen::VectorXd t(post.dim());
    for (Eigen::Index i = 0; i < post.dim(); ++i) {
        const double s = post.sigma(i);
        if (!(s > 0.0)) throw InvalidInput("posterior standard deviations must be positive");
        const double s2 = s * s;
        t(i) = 0.5 * (post.mu(i) * post.mu(i) + s2 - std::log(s2) - 1.0);
    }
    return t;
}

std::vector<LatentPosterior> PCAMonitor::posteriors(const Eigen::MatrixXd& x) const {
    const Eigen::MatrixXd z = model_.W.transpose() * (x.colwise() - model_.mean);
    std::vector<LatentPosterior> out(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        out[static_cast<std::size_t>(j)].mu = z.col(j);
        out[static_cast<std::size_t>(j)].sigma = Eigen::VectorXd::Zero(z.rows());
    }
    return out;
}

Eigen::MatrixXd PCAMonitor::decode(const Eigen::MatrixXd& z) const {
    return (model_.W * z).colwise() + model_.mean;
}

Eigen::VectorXd PCAMonitor::t2_terms(const LatentPosterior& post) const {
    return (post.mu.array().square() / model_.latent_var.array()).matrix();
}

std::vector<LatentPosterior> PPCAMonitor::posteriors(const Eigen::MatrixXd& x) const {
    const auto ldlt = model_.M.ldlt();
    const Eigen::MatrixXd mu = ldlt.solve(model_.W.transpose() * (x.colwise() - model_.mean));
    const Eigen::VectorXd sigma = model_.posterior_cov().diagonal().cwiseSqrt();
    std::vector<LatentPosterior> out(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        out[static_cast<std::size_t>(j)].mu = mu.col(j);
        out[static_cast<std::size_t>(j)].sigma = sigma;
    }
    return out;
}

Eigen::MatrixXd PPCAMonitor::decode(const Eigen::MatrixXd& z) const {
    return (model_.W * z).colwise() + model_.mean;
}

Eigen::VectorXd PPCAMonitor::t2_terms(const LatentPosterior& post) const {
    if (squared_mean_t2_) return post.mu.array().square().matrix();
    return Monitor::t2_terms(post);
}

AutoencoderMonitor::AutoencoderMonitor(std::shared_ptr<const Autoencoder<float>> model) : model_(std::move(model)) {
    if (!model_) throw InvalidInput("null autoencoder");
}

Eigen::Index AutoencoderMonitor::dim() const {
    return static_cast<Eigen::Index>(model_->encoder.input_shape().size());
}

namespace {

constexpr Eigen::Index kChunk = 64;

nn::Tensor<float> as_tensor(const Eigen::MatrixXd& x, nn::Shape3 shape) {
    nn::Tensor<float> t(static_cast<int>(x.cols()), shape);
    t.matrix() = x.cast<float>();
    return t;
}

void check_rows(const Monitor& m, Eigen::Index rows) {
    if (rows != m.dim())
        throw InvalidInput("profile has dimension " + std::to_string(rows) + ", model expects " +
                           std::to_string(m.dim()));
}

}  // namespace

std::vector<LatentPosterior> AutoencoderMonitor::posteriors(const Eigen::MatrixXd& x) const {
    check_rows(*this, x.rows());
    std::vector<LatentPosterior> out;
    out.reserve(static_cast<std::size_t>(x.cols()));
    const int r = model_->r;
    for (Eigen::Index first = 0; first < x.cols(); first += kChunk) {
        const Eigen::Index count = std::min(kChunk, x.cols() - first);
        const auto h = model_->encoder.infer(as_tensor(x.middleCols(first, count), model_->encoder.input_shape()));
        const auto hm = h.matrix();
        for (int j = 0; j < h.n; ++j) {
            LatentPosterior p;
            p.mu = hm.col(j).topRows(r).cast<double>();
            p.sigma = model_->probabilistic()
                          ? Eigen::VectorXd((hm.col(j).bottomRows(r).cast<double>().array() * 0.5).exp())
                          : Eigen::VectorXd::Zero(r);
            out.push_back(std::move(p));
        }
    }
    return out;
}

Eigen::MatrixXd AutoencoderMonitor::decode(const Eigen::MatrixXd& z) const {
    Eigen::MatrixXd out(dim(), z.cols());
    const nn::Shape3 code{1, 1, model_->r};
    for (Eigen::Index first = 0; first < z.cols(); first += kChunk) {
        const Eigen::Index count = std::min(kChunk, z.cols() - first);
        const auto xhat = model_->decoder.infer(as_tensor(z.middleCols(first, count), code));
        out.middleCols(first, count) = xhat.matrix().cast<double>();
    }
    return out;
}

Eigen::VectorXd AutoencoderMonitor::t2_terms(const LatentPosterior& post) const {
    if (!model_->probabilistic())
        throw UnsupportedStatistic("T2_KLD is undefined for a deterministic autoencoder");
    return Monitor::t2_terms(post);
}

Eigen::VectorXd to_vector(const Profile& p) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(p.size()));
    const auto vals = p.values();
    for (std::size_t i = 0; i < vals.size(); ++i) v(static_cast<Eigen::Index>(i)) = vals[i];
    return v;
}

namespace {

Eigen::MatrixXd one_column(const Monitor& m, const Profile& x) {
    Eigen::MatrixXd c = to_vector(x);
    check_rows(m, c.rows());
    return c;
}

// Per-pixel mean squared residual over the posterior mean (m = 0) or m draws.
Eigen::VectorXd residual_terms(const Monitor& model, const Eigen::VectorXd& x, const LatentPosterior& post, int m,
                               std::mt19937_64& rng) {
    if (m < 0) throw InvalidInput("Monte Carlo sample count must be nonnegative");
    if (m == 0) return (x - model.decode(post.mu)).array().square().matrix();
    std::normal_distribution<double> n01(0.0, 1.0);
    Eigen::MatrixXd z(post.dim(), m);
    for (int j = 0; j < m; ++j)
        for (Eigen::Index i = 0; i < post.dim(); ++i) z(i, j) = post.mu(i) + post.sigma(i) * n01(rng);
    const Eigen::MatrixXd xhat = model.decode(z);
    return (xhat.colwise() - x).array().square().rowwise().sum().matrix() / static_cast<double>(m);
}

}  // namespace

LatentPosterior posterior(const Monitor& model, const Profile& x) {
    return model.posteriors(one_column(model, x)).front();
}

double q_ere(const Monitor& model, const Profile& x, int m, std::mt19937_64& rng) {
    const Eigen::MatrixXd c = one_column(model, x);
    const auto post = model.posteriors(c).front();
    return residual_terms(model, c.col(0), post, m, rng).sum();
}

double t2_kld(const Monitor& model, const Profile& x) {
    if (!model.supports_t2()) throw UnsupportedStatistic("T2_KLD is undefined for a deterministic autoencoder");
    return model.t2_terms(posterior(model, x)).sum();
}

Decomposition decompose(const Monitor& model, const Profile& x, int m, std::mt19937_64& rng) {
    const Eigen::MatrixXd c = one_column(model, x);
    const auto post = model.posteriors(c).front();
    Decomposition d;
    d.q = residual_terms(model, c.col(0), post, m, rng);
    if (model.supports_t2()) d.t2 = model.t2_terms(post);
    return d;
}

std::vector<MonitoringRecord> score(const Monitor& model, const Dataset& data, const ScoreOptions& opt) {
    std::vector<MonitoringRecord> out;
    if (data.empty()) return out;
    if (opt.mc_samples < 0) throw InvalidInput("Monte Carlo sample count must be nonnegative");
    out.reserve(data.size());
    const auto n = static_cast<Eigen::Index>(data.size());
    for (Eigen::Index first = 0; first < n; first += 256) {
        const Eigen::Index count = std::min<Eigen::Index>(256, n - first);
        Eigen::MatrixXd x(static_cast<Eigen::Index>(data.dim()), count);
        for (Eigen::Index j = 0; j < count; ++j) x.col(j) = to_vector(data[static_cast<std::size_t>(first + j)]);
        check_rows(model, x.rows());
        const auto posts = model.posteriors(x);
        Eigen::MatrixXd resid;
        if (opt.mc_samples == 0) {
            Eigen::MatrixXd mu(model.latent_dim(), count);
            for (Eigen::Index j = 0; j < count; ++j) mu.col(j) = posts[static_cast<std::size_t>(j)].mu;
            resid = (model.decode(mu) - x).array().square().matrix();
        } else {
            resid.resize(x.rows(), count);
            for (Eigen::Index j = 0; j < count; ++j) {
                std::seed_seq seq{opt.seed, static_cast<std::uint64_t>(first + j)};
                std::mt19937_64 rng(seq);
                resid.col(j) = residual_terms(model, x.col(j), posts[static_cast<std::size_t>(j)], opt.mc_samples, rng);
            }
        }
        for (Eigen::Index j = 0; j < count; ++j) {
            const auto i = static_cast<std::size_t>(first + j);
            MonitoringRecord rec;
            rec.sample_id = data.name(i);
            rec.label = data.label(i);
            rec.q_ere = resid.col(j).sum();
            if (model.supports_t2()) {
                Eigen::VectorXd t = model.t2_terms(posts[static_cast<std::size_t>(j)]);
                rec.t2_kld = t.sum();
                if (opt.decompose) rec.t2_decomp = std::move(t);
            }
            if (opt.decompose) rec.q_decomp = resid.col(j);
            out.push_back(std::move(rec));
        }
    }
    return out;
}

double compute_ucl(std::span<const double> values, double percentile) {
    if (values.empty()) throw InvalidInput("cannot compute a control limit from no values");
    if (!(percentile >= 0.0 && percentile <= 100.0)) throw InvalidInput("percentile must lie in [0, 100]");
    std::vector<double> v(values.begin(), values.end());
    for (double x : v)
        if (std::isnan(x)) throw InvalidInput("statistic values contain NaN");
    std::sort(v.begin(), v.end());
    const double rank = static_cast<double>(v.size() - 1) * percentile / 100.0;
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return frac == 0.0 ? v[lo] : v[lo] + frac * (v[hi] - v[lo]);
}

namespace {

double exceedance(std::span<const double> values, double ucl, const char* what) {
    if (values.empty()) throw InvalidInput(std::string("cannot estimate ") + what + " from no values");
    const auto k = std::count_if(values.begin(), values.end(), [ucl](double v) { return v > ucl; });
    return static_cast<double>(k) / static_cast<double>(values.size());
}

}  // namespace

double estimate_far(std::span<const double> test_values, double ucl) {
    return exceedance(test_values, ucl, "a false alarm rate");
}

double detection_power(std::span<const double> oc_values, double ucl) {
    return exceedance(oc_values, ucl, "detection power");
}

void ControlLimits::validate() const {
    if (!(percentile > 0.0 && percentile < 100.0)) throw InvalidInput("control-limit percentile must lie in (0, 100)");
    if (!(estimated_far >= 0.0 && estimated_far <= 1.0)) throw InvalidInput("estimated FAR must lie in [0, 1]");
}

std::vector<double> q_values(const std::vector<MonitoringRecord>& records) {
    std::vector<double> v;
    v.reserve(records.size());
    for (const auto& r : records) v.push_back(r.q_ere);
    return v;
}

std::vector<double> t2_values(const std::vector<MonitoringRecord>& records) {
    std::vector<double> v;
    v.reserve(records.size());
    for (const auto& r : records) {
        if (!r.t2_kld) throw UnsupportedStatistic("record " + r.sample_id + " has no T2_KLD value");
        v.push_back(*r.t2_kld);
    }
    return v;
}

ControlLimits set_limits(const std::vector<MonitoringRecord>& validation, const std::vector<MonitoringRecord>& test,
                         double percentile) {
    ControlLimits lim;
    lim.percentile = percentile;
    lim.ucl_q = compute_ucl(q_values(validation), percentile);
    lim.estimated_far = estimate_far(q_values(test), lim.ucl_q);
    const bool has_t2 = !validation.empty() && validation.front().t2_kld.has_value();
    if (has_t2) {
        lim.ucl_t2 = compute_ucl(t2_values(validation), percentile);
        lim.estimated_far_t2 = estimate_far(t2_values(test), *lim.ucl_t2);
    }
    lim.validate();
    return lim;
}

}  // namespace profmon
