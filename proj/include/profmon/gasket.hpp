#pragma once

#include "profmon/profile.hpp"

#include <random>
#include <span>
#include <string>
#include <vector>

namespace profmon {

using Rng = std::mt19937_64;

// Elliptic bead cross-section: sqrt(g) inside the ellipse, 0 outside, plus
// i.i.d. Gaussian pixel noise. Row index follows p1, column index follows p0.
struct GasketParams {
    double c0 = 0.5;
    double c1 = 0.5;
    double a = 0.2;
    double b = 0.2;
    double noise_var = 0.01;
    int height = 64;
    int width = 64;

    void validate() const;
};

// Variances, not standard deviations.
struct ICDistribution {
    double c0_mean = 0.5;
    double c0_var = 1e-2;
    double a_mean = 0.2;
    double a_var = 6.25e-4;

    void validate() const;
};

enum class ShiftKind { Location, Width, Mean, Magnitude };

std::string to_string(ShiftKind kind);
ShiftKind parse_shift_kind(const std::string& text);

struct ShiftSpec {
    ShiftKind kind = ShiftKind::Location;
    double delta = 0.0;

    void validate() const;
};

// n equally spaced points from 0 to 1 inclusive.
std::vector<double> grid_points(int n);

Profile render_gasket(const GasketParams& params, std::span<const double> p0, std::span<const double> p1, Rng& rng);

// Draws (c0, a) then renders, once per sample, so a null shift consumes the
// generator exactly as the in-control sampler does.
Dataset sample_ic(int n, const ICDistribution& dist, Rng& rng, const GasketParams& base = {});
Dataset sample_oc(int n, const ICDistribution& dist, const ShiftSpec& shift, Rng& rng,
                  const GasketParams& base = {});

}  // namespace profmon
