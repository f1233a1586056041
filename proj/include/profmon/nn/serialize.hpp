#pragma once

#include "profmon/nn/network.hpp"

#include <filesystem>
#include <iosfwd>

namespace profmon::nn {

// "PWNET1": input shape, architecture string, scalar width, then every
// parameter blob in declaration order. Loading converts to the requested
// precision.
template <typename T>
void save_network(std::ostream& out, const Network<T>& net);
template <typename T>
void save_network(const std::filesystem::path& path, const Network<T>& net);

template <typename T>
Network<T> load_network(std::istream& in);
template <typename T>
Network<T> load_network(const std::filesystem::path& path);

}  // namespace profmon::nn
