#include "profmon/gasket.hpp"

#include "profmon/errors.hpp"

#include <cmath>
#include <cstdio>
#include <optional>

namespace profmon {

void GasketParams::validate() const {
    if (!(a > 0.0) || !(b > 0.0)) throw InvalidInput("gasket half-widths a and b must be positive");
    if (!(noise_var >= 0.0)) throw InvalidInput("noise variance must be nonnegative");
    if (height < 2 || width < 2) throw InvalidInput("gasket grid needs at least 2 points per axis");
}

void ICDistribution::validate() const {
    if (!(c0_var >= 0.0) || !(a_var >= 0.0) || !std::isfinite(c0_var) || !std::isfinite(a_var))
        throw InvalidInput("in-control variances must be finite and nonnegative");
    if (!std::isfinite(c0_mean) || !std::isfinite(a_mean)) throw InvalidInput("in-control means must be finite");
}

std::string to_string(ShiftKind kind) {
    switch (kind) {
        case ShiftKind::Location: return "location";
        case ShiftKind::Width: return "width";
        case ShiftKind::Mean: return "mean";
        case ShiftKind::Magnitude: return "magnitude";
    }
    return "unknown";
}

ShiftKind parse_shift_kind(const std::string& text) {
    if (text == "location") return ShiftKind::Location;
    if (text == "width") return ShiftKind::Width;
    if (text == "mean") return ShiftKind::Mean;
    if (text == "magnitude") return ShiftKind::Magnitude;
    throw InvalidInput("unknown shift kind '" + text + "'");
}

void ShiftSpec::validate() const {
    if (!std::isfinite(delta)) throw InvalidInput("shift intensity must be finite");
    if (static_cast<int>(kind) < 0 || static_cast<int>(kind) > 3) throw InvalidInput("unknown shift kind");
}

std::vector<double> grid_points(int n) {
    if (n < 2) throw InvalidInput("grid needs at least 2 points");
    std::vector<double> p(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) p[static_cast<std::size_t>(k)] = static_cast<double>(k) / (n - 1);
    return p;
}

Profile render_gasket(const GasketParams& params, std::span<const double> p0, std::span<const double> p1, Rng& rng) {
    params.validate();
    if (p0.size() != static_cast<std::size_t>(params.width) || p1.size() != static_cast<std::size_t>(params.height))
        throw InvalidInput("grid point arrays do not match the gasket grid size");

    std::optional<std::normal_distribution<double>> noise;
    if (params.noise_var > 0.0) noise.emplace(0.0, std::sqrt(params.noise_var));

    std::vector<float> px(static_cast<std::size_t>(params.height) * params.width);
    for (int i = 0; i < params.height; ++i) {
        const double v = (p1[i] - params.c1) / params.b;
        for (int j = 0; j < params.width; ++j) {
            const double u = (p0[j] - params.c0) / params.a;
            const double g = 1.0 - u * u - v * v;
            double value = g > 0.0 ? std::sqrt(g) : 0.0;
            if (noise) value += (*noise)(rng);
            px[static_cast<std::size_t>(i) * params.width + j] = static_cast<float>(value);
        }
    }
    return Profile(params.height, params.width, std::move(px));
}

namespace {

Dataset sample(int n, const ICDistribution& dist, const std::optional<ShiftSpec>& shift, Rng& rng,
               const GasketParams& base) {
    if (n < 1) throw InvalidInput("sample count must be at least 1");
    dist.validate();
    base.validate();
    if (shift) shift->validate();

    const auto p0 = grid_points(base.width);
    const auto p1 = grid_points(base.height);
    std::normal_distribution<double> c0_draw(dist.c0_mean, std::sqrt(dist.c0_var));
    std::normal_distribution<double> a_draw(dist.a_mean, std::sqrt(dist.a_var));

    const std::string prefix = shift ? to_string(shift->kind) : std::string("ic");
    Dataset data;
    for (int s = 0; s < n; ++s) {
        GasketParams p = base;
        p.c0 = c0_draw(rng);
        p.a = a_draw(rng);
        SampleTruth truth{p.c0, p.a, "none", 0.0};
        if (shift) {
            truth.shift_kind = to_string(shift->kind);
            truth.delta = shift->delta;
            if (shift->kind == ShiftKind::Location) p.c0 += 0.1 * shift->delta;
            if (shift->kind == ShiftKind::Width) p.a += 0.025 * shift->delta;
            truth.c0 = p.c0;
            truth.a = p.a;
        }
        if (!(p.a > 0.0)) throw InvalidInput("drawn half-width a is not positive; in-control distribution too wide");
        Profile img = render_gasket(p, p0, p1, rng);
        if (shift && (shift->kind == ShiftKind::Mean || shift->kind == ShiftKind::Magnitude)) {
            auto v = flatten(img);
            for (float& x : v) {
                x = shift->kind == ShiftKind::Mean ? static_cast<float>(x + shift->delta)
                                                   : static_cast<float>(x * shift->delta);
            }
            img = Profile(img.height(), img.width(), std::move(v));
        }
        char name[64];
        std::snprintf(name, sizeof name, "%s_%05d", prefix.c_str(), s);
        data.add(std::move(img), name, shift ? 1 : kInControlLabel, truth);
    }
    return data;
}

}  // namespace

Dataset sample_ic(int n, const ICDistribution& dist, Rng& rng, const GasketParams& base) {
    return sample(n, dist, std::nullopt, rng, base);
}

Dataset sample_oc(int n, const ICDistribution& dist, const ShiftSpec& shift, Rng& rng, const GasketParams& base) {
    return sample(n, dist, shift, rng, base);
}

}  // namespace profmon
