#include "profmon/linear.hpp"

#include "profmon/errors.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace profmon {
namespace {

struct Spectrum {
    Eigen::VectorXd values;   // descending, strictly positive
    Eigen::MatrixXd vectors;  // matching unit eigenvectors
    double total = 0.0;       // trace of the covariance
};

// Flip each column so its largest-magnitude entry is positive.
void normalize_signs(Eigen::MatrixXd& v) {
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
        Eigen::Index arg = 0;
        v.col(j).cwiseAbs().maxCoeff(&arg);
        if (v(arg, j) < 0.0) v.col(j) = -v.col(j);
    }
}

// Eigen-decomposition of Xc Xc' / denom. Uses the n x n Gram matrix when
// there are fewer samples than dimensions.
Spectrum spectrum(const Eigen::MatrixXd& xc, double denom) {
    const Eigen::Index d = xc.rows(), n = xc.cols();
    Spectrum s;
    s.total = xc.squaredNorm() / denom;

    Eigen::VectorXd values;
    Eigen::MatrixXd vectors;
    if (n < d) {
        const Eigen::MatrixXd gram = xc.transpose() * xc;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
        if (es.info() != Eigen::Success) throw ModelFitError("eigendecomposition of the Gram matrix failed");
        values = es.eigenvalues().reverse();
        vectors = es.eigenvectors().rowwise().reverse();
        const double top = std::max(values(0), 0.0);
        Eigen::Index keep = 0;
        while (keep < values.size() && values(keep) > top * 1e-12 && values(keep) > 0.0) ++keep;
        Eigen::MatrixXd u = xc * vectors.leftCols(keep);
        for (Eigen::Index j = 0; j < keep; ++j) u.col(j) /= std::sqrt(values(j));
        s.vectors = std::move(u);
        s.values = values.head(keep) / denom;
    } else {
        const Eigen::MatrixXd cov = xc * xc.transpose() / denom;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
        if (es.info() != Eigen::Success) throw ModelFitError("eigendecomposition of the covariance failed");
        values = es.eigenvalues().reverse();
        vectors = es.eigenvectors().rowwise().reverse();
        const double top = std::max(values(0), 0.0);
        Eigen::Index keep = 0;
        while (keep < values.size() && values(keep) > top * 1e-12 && values(keep) > 0.0) ++keep;
        s.vectors = vectors.leftCols(keep);
        s.values = values.head(keep);
    }
    normalize_signs(s.vectors);
    return s;
}

void check_dim(Eigen::Index expected, const Eigen::VectorXd& x) {
    if (x.size() != expected)
        throw InvalidInput("sample has dimension " + std::to_string(x.size()) + ", model expects " +
                           std::to_string(expected));
}

}  // namespace

PCAModel fit_pca(const Eigen::MatrixXd& x, const ComponentSelector& selector) {
    const Eigen::Index n = x.cols();
    if (n < 2) throw InvalidInput("PCA needs at least 2 training samples");
    if (!x.allFinite()) throw InvalidInput("training data contains non-finite values");
    if (!selector.is_fixed() && !(selector.ratio > 0.0 && selector.ratio <= 1.0))
        throw InvalidInput("explained-variance ratio must lie in (0, 1]");

    PCAModel m;
    m.mean = x.rowwise().mean();
    const Eigen::MatrixXd xc = x.colwise() - m.mean;
    const Spectrum s = spectrum(xc, static_cast<double>(n - 1));
    if (s.values.size() == 0 || !(s.total > 0.0)) throw ModelFitError("training data has zero variance");

    Eigen::Index k = 0;
    if (selector.is_fixed()) {
        k = selector.k;
        if (k > s.values.size())
            throw ModelFitError("requested " + std::to_string(k) + " components but the data has rank " +
                                std::to_string(s.values.size()));
    } else {
        double cum = 0.0;
        while (k < s.values.size()) {
            cum += s.values(k++);
            if (cum / s.total >= selector.ratio - 1e-12) break;
        }
    }
    m.W = s.vectors.leftCols(k);
    m.eigenvalues = s.values;
    const Eigen::MatrixXd z = m.W.transpose() * xc;
    m.latent_var = z.rowwise().squaredNorm() / static_cast<double>(n - 1);
    for (Eigen::Index i = 0; i < k; ++i)
        if (!(m.latent_var(i) > 0.0)) throw ModelFitError("latent component has zero variance");
    return m;
}

PCAModel fit_pca(const Dataset& train, const ComponentSelector& selector) {
    return fit_pca(train.matrix(), selector);
}

double pca_q(const PCAModel& model, const Eigen::VectorXd& x) {
    check_dim(model.dim(), x);
    const Eigen::VectorXd xc = x - model.mean;
    return (xc - model.W * (model.W.transpose() * xc)).squaredNorm();
}

double pca_t2(const PCAModel& model, const Eigen::VectorXd& x) {
    check_dim(model.dim(), x);
    const Eigen::VectorXd z = model.W.transpose() * (x - model.mean);
    return (z.array().square() / model.latent_var.array()).sum();
}

Eigen::MatrixXd PPCAModel::posterior_cov() const {
    const Eigen::MatrixXd inv = M.ldlt().solve(Eigen::MatrixXd::Identity(M.rows(), M.cols()));
    return convention == PosteriorConvention::NoiseScaled ? Eigen::MatrixXd(sigma2 * inv) : inv;
}

PPCAModel make_ppca(Eigen::VectorXd mean, Eigen::MatrixXd W, double sigma2, PosteriorConvention convention) {
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw InvalidInput("PPCA noise variance must be positive");
    if (W.rows() != mean.size() || W.cols() < 1) throw InvalidInput("PPCA loading matrix does not match the mean");
    PPCAModel m;
    m.mean = std::move(mean);
    m.W = std::move(W);
    m.sigma2 = sigma2;
    m.M = m.W.transpose() * m.W;
    m.M.diagonal().array() += sigma2;
    m.convention = convention;
    return m;
}

PPCAModel fit_ppca(const Eigen::MatrixXd& x, int r) {
    const Eigen::Index n = x.cols(), d = x.rows();
    if (n < 2) throw InvalidInput("PPCA needs at least 2 training samples");
    if (r < 1 || r >= d) throw InvalidInput("PPCA latent dimension must satisfy 1 <= r < d");
    if (!x.allFinite()) throw InvalidInput("training data contains non-finite values");

    Eigen::VectorXd mean = x.rowwise().mean();
    const Eigen::MatrixXd xc = x.colwise() - mean;
    const Spectrum s = spectrum(xc, static_cast<double>(n));
    if (s.values.size() < r)
        throw ModelFitError("data rank " + std::to_string(s.values.size()) + " is below the latent dimension " +
                            std::to_string(r));
    const double kept = s.values.head(r).sum();
    const double sigma2 = (s.total - kept) / static_cast<double>(d - r);
    if (!(sigma2 > 0.0)) throw ModelFitError("residual variance estimate is not positive");
    if (!(s.values(r - 1) > sigma2))
        throw ModelFitError("eigenvalue " + std::to_string(r) + " does not exceed the residual variance");

    Eigen::MatrixXd W = s.vectors.leftCols(r);
    for (int j = 0; j < r; ++j) W.col(j) *= std::sqrt(s.values(j) - sigma2);
    return make_ppca(std::move(mean), std::move(W), sigma2);
}

PPCAModel fit_ppca(const Dataset& train, int r) { return fit_ppca(train.matrix(), r); }

LatentPosterior ppca_posterior(const PPCAModel& model, const Eigen::VectorXd& x) {
    check_dim(model.dim(), x);
    LatentPosterior post;
    post.mu = model.M.ldlt().solve(model.W.transpose() * (x - model.mean));
    post.sigma = model.posterior_cov().diagonal().cwiseSqrt();
    return post;
}

double ppca_t2kld(const PPCAModel& model, const Eigen::VectorXd& x) {
    return ppca_posterior(model, x).mu.squaredNorm();
}

double ppca_qere(const PPCAModel& model, const Eigen::VectorXd& x) {
    check_dim(model.dim(), x);
    const Eigen::VectorXd xc = x - model.mean;
    const Eigen::VectorXd mu = model.M.ldlt().solve(model.W.transpose() * xc);
    const double trace = ((model.W.transpose() * model.W) * model.posterior_cov()).trace();
    return (xc - model.W * mu).squaredNorm() + trace;
}

namespace {

constexpr char kLinearMagic[6] = {'P', 'W', 'L', 'I', 'N', '1'};

void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }
void put_doubles(std::ostream& out, const double* p, Eigen::Index n) {
    out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}

std::uint64_t get_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw CompatibilityError("truncated linear model file");
    return v;
}
void get_doubles(std::istream& in, double* p, Eigen::Index n) {
    in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw CompatibilityError("truncated linear model file");
}

std::ofstream open_out(const std::filesystem::path& path, char kind, char convention, const Eigen::MatrixXd& W) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kLinearMagic, sizeof kLinearMagic);
    out.put(kind);
    out.put(convention);
    put_u64(out, static_cast<std::uint64_t>(W.rows()));
    put_u64(out, static_cast<std::uint64_t>(W.cols()));
    return out;
}

}  // namespace

void save_linear(const std::filesystem::path& path, const PCAModel& model) {
    auto out = open_out(path, 'P', 0, model.W);
    put_doubles(out, model.mean.data(), model.mean.size());
    put_doubles(out, model.W.data(), model.W.size());
    put_doubles(out, model.latent_var.data(), model.latent_var.size());
    put_u64(out, static_cast<std::uint64_t>(model.eigenvalues.size()));
    put_doubles(out, model.eigenvalues.data(), model.eigenvalues.size());
    if (!out) throw IoError("failed writing " + path.string());
}

void save_linear(const std::filesystem::path& path, const PPCAModel& model) {
    auto out = open_out(path, 'G', model.convention == PosteriorConvention::Literal ? 1 : 0, model.W);
    put_doubles(out, model.mean.data(), model.mean.size());
    put_doubles(out, model.W.data(), model.W.size());
    put_doubles(out, &model.sigma2, 1);
    if (!out) throw IoError("failed writing " + path.string());
}

std::variant<PCAModel, PPCAModel> load_linear(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[sizeof kLinearMagic] = {};
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kLinearMagic, sizeof magic) != 0)
        throw CompatibilityError(path.string() + ": not a PWLIN1 linear model");
    const int kind = in.get();
    const int convention = in.get();
    const auto d = static_cast<Eigen::Index>(get_u64(in));
    const auto k = static_cast<Eigen::Index>(get_u64(in));
    if (d < 1 || k < 1 || k > d || d > (Eigen::Index{1} << 28)) throw CompatibilityError("implausible model shape");

    Eigen::VectorXd mean(d);
    Eigen::MatrixXd W(d, k);
    get_doubles(in, mean.data(), d);
    get_doubles(in, W.data(), W.size());
    if (kind == 'P') {
        PCAModel m;
        m.mean = std::move(mean);
        m.W = std::move(W);
        m.latent_var.resize(k);
        get_doubles(in, m.latent_var.data(), k);
        const auto ne = static_cast<Eigen::Index>(get_u64(in));
        if (ne > d) throw CompatibilityError("implausible eigenvalue count");
        m.eigenvalues.resize(ne);
        get_doubles(in, m.eigenvalues.data(), ne);
        return m;
    }
    if (kind == 'G') {
        double sigma2 = 0.0;
        get_doubles(in, &sigma2, 1);
        return make_ppca(std::move(mean), std::move(W), sigma2,
                         convention == 1 ? PosteriorConvention::Literal : PosteriorConvention::NoiseScaled);
    }
    throw CompatibilityError(path.string() + ": unknown linear model kind");
}

}  // namespace profmon
