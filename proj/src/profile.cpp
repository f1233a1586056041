#include "profmon/profile.hpp"

#include "profmon/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace profmon {

Profile::Profile(int height, int width, std::vector<float> values)
    : height_(height), width_(width), values_(std::move(values)) {
    if (height < 1 || width < 1) throw InvalidInput("profile dimensions must be positive");
    if (values_.size() != static_cast<std::size_t>(height) * width)
        throw InvalidInput("profile has " + std::to_string(values_.size()) + " values, expected " +
                           std::to_string(height) + "x" + std::to_string(width));
    for (float v : values_)
        if (!std::isfinite(v)) throw InvalidInput("profile contains a non-finite intensity");
}

std::vector<float> flatten(const Profile& p) { return {p.values().begin(), p.values().end()}; }

Profile unflatten(std::span<const float> v, int height, int width) {
    if (height < 1 || width < 1 || v.size() != static_cast<std::size_t>(height) * width)
        throw InvalidInput("cannot unflatten " + std::to_string(v.size()) + " values into " + std::to_string(height) +
                           "x" + std::to_string(width));
    return Profile(height, width, {v.begin(), v.end()});
}

void Dataset::add(Profile p, std::string name, std::optional<int> label, std::optional<SampleTruth> truth) {
    if (samples_.empty()) {
        height_ = p.height();
        width_ = p.width();
    } else if (p.height() != height_ || p.width() != width_) {
        throw InvalidInput("sample '" + name + "' is " + std::to_string(p.height()) + "x" + std::to_string(p.width()) +
                           " but the dataset is " + std::to_string(height_) + "x" + std::to_string(width_));
    }
    samples_.push_back(std::move(p));
    names_.push_back(std::move(name));
    labels_.push_back(label);
    truths_.push_back(std::move(truth));
}

bool Dataset::has_truth() const {
    return !truths_.empty() && std::all_of(truths_.begin(), truths_.end(), [](const auto& t) { return t.has_value(); });
}

Eigen::MatrixXd Dataset::matrix() const {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(dim()), static_cast<Eigen::Index>(size()));
    for (std::size_t j = 0; j < samples_.size(); ++j) {
        const auto v = samples_[j].values();
        for (std::size_t i = 0; i < v.size(); ++i) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[i];
    }
    return x;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out(seed_);
    for (std::size_t i : indices) {
        if (i >= samples_.size()) throw InvalidInput("subset index out of range");
        out.add(samples_[i], names_[i], labels_[i], truths_[i]);
    }
    return out;
}

void SplitSpec::validate() const {
    if (train < 0.0 || validation < 0.0 || test < 0.0) throw InvalidInput("split fractions must be nonnegative");
    if (std::abs(train + validation + test - 1.0) > 1e-9) throw InvalidInput("split fractions must sum to 1");
}

Partition partition(const Dataset& data, const SplitSpec& split) {
    if (data.empty()) throw InvalidInput("cannot partition an empty dataset");
    split.validate();
    const std::size_t n = data.size();
    // The small slack keeps exact products such as 768/3 from flooring one short.
    auto share = [n](double f) { return static_cast<std::size_t>(std::floor(static_cast<double>(n) * f + 1e-9)); };
    const std::size_t n_val = share(split.validation);
    const std::size_t n_test = share(split.test);
    const std::size_t n_train = n - n_val - n_test;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(split.seed);
    std::shuffle(order.begin(), order.end(), rng);

    const std::span<const std::size_t> all(order);
    return Partition{data.subset(all.subspan(0, n_train)), data.subset(all.subspan(n_train, n_val)),
                     data.subset(all.subspan(n_train + n_val, n_test))};
}

}  // namespace profmon
