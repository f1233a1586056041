#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace profmon {

// One 2-D grid of intensities, row-major.
class Profile {
public:
    Profile() = default;
    // Throws InvalidInput on a size mismatch or a non-finite value.
    Profile(int height, int width, std::vector<float> values);

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return values_.size(); }

    float at(int row, int col) const { return values_[static_cast<std::size_t>(row) * width_ + col]; }
    std::span<const float> values() const { return values_; }

    friend bool operator==(const Profile&, const Profile&) = default;

private:
    int height_ = 0;
    int width_ = 0;
    std::vector<float> values_;
};

std::vector<float> flatten(const Profile& p);
Profile unflatten(std::span<const float> v, int height, int width);

inline constexpr int kInControlLabel = 0;

// Latent factors a simulated sample was generated from.
struct SampleTruth {
    double c0 = 0.0;
    double a = 0.0;
    std::string shift_kind = "none";
    double delta = 0.0;
};

// Ordered, shape-homogeneous collection of profiles. Immutable once handed out.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(std::uint64_t seed) : seed_(seed) {}

    // Throws InvalidInput when the shape differs from earlier samples.
    void add(Profile p, std::string name, std::optional<int> label = std::nullopt,
             std::optional<SampleTruth> truth = std::nullopt);

    std::size_t size() const { return samples_.size(); }
    bool empty() const { return samples_.empty(); }
    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t dim() const { return static_cast<std::size_t>(height_) * width_; }
    std::uint64_t seed() const { return seed_; }

    const Profile& operator[](std::size_t i) const { return samples_[i]; }
    const std::string& name(std::size_t i) const { return names_[i]; }
    std::optional<int> label(std::size_t i) const { return labels_[i]; }
    const std::optional<SampleTruth>& truth(std::size_t i) const { return truths_[i]; }
    bool has_truth() const;

    // d x n matrix of 64-bit intensities, one column per sample.
    Eigen::MatrixXd matrix() const;

    // Copy of the samples at the given indices, in that order.
    Dataset subset(std::span<const std::size_t> indices) const;

private:
    std::uint64_t seed_ = 0;
    int height_ = 0;
    int width_ = 0;
    std::vector<Profile> samples_;
    std::vector<std::string> names_;
    std::vector<std::optional<int>> labels_;
    std::vector<std::optional<SampleTruth>> truths_;
};

struct SplitSpec {
    double train = 0.6;
    double validation = 0.2;
    double test = 0.2;
    std::uint64_t seed = 0;

    // Throws InvalidInput unless fractions are nonnegative and sum to 1 (1e-9).
    void validate() const;
};

struct Partition {
    Dataset train;
    Dataset validation;
    Dataset test;
};

// Shuffles by split.seed; validation and test sizes are floor(n * fraction),
// train takes the remainder.
Partition partition(const Dataset& data, const SplitSpec& split);

}  // namespace profmon
