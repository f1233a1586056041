#include "profmon/nn/serialize.hpp"

#include "profmon/errors.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace profmon::nn {
namespace {

constexpr char kMagic[6] = {'P', 'W', 'N', 'E', 'T', '1'};

void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t get_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw CompatibilityError("truncated network file");
    return v;
}

template <typename S, typename T>
void read_blob(std::istream& in, Buffer<T>& dst) {
    std::vector<S> tmp(dst.size());
    in.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(tmp.size() * sizeof(S)));
    if (!in) throw CompatibilityError("truncated network parameters");
    for (std::size_t i = 0; i < tmp.size(); ++i) dst[i] = static_cast<T>(tmp[i]);
}

}  // namespace

template <typename T>
void save_network(std::ostream& out, const Network<T>& net) {
    out.write(kMagic, sizeof kMagic);
    const Shape3 in = net.input_shape();
    put_u64(out, static_cast<std::uint64_t>(in.h));
    put_u64(out, static_cast<std::uint64_t>(in.w));
    put_u64(out, static_cast<std::uint64_t>(in.c));
    const std::string arch = architecture_str(net.specs());
    put_u64(out, arch.size());
    out.write(arch.data(), static_cast<std::streamsize>(arch.size()));
    put_u64(out, sizeof(T));
    const auto params = net.parameters();
    put_u64(out, params.size());
    for (const auto* p : params) {
        put_u64(out, p->value.size());
        out.write(reinterpret_cast<const char*>(p->value.data()),
                  static_cast<std::streamsize>(p->value.size() * sizeof(T)));
    }
}

template <typename T>
void save_network(const std::filesystem::path& path, const Network<T>& net) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    save_network(out, net);
    if (!out) throw IoError("failed writing " + path.string());
}

template <typename T>
Network<T> load_network(std::istream& in) {
    char magic[sizeof kMagic] = {};
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw CompatibilityError("not a PWNET1 network");
    Shape3 shape;
    shape.h = static_cast<int>(get_u64(in));
    shape.w = static_cast<int>(get_u64(in));
    shape.c = static_cast<int>(get_u64(in));
    const auto len = get_u64(in);
    if (len > (1u << 20)) throw CompatibilityError("implausible architecture length");
    std::string arch(len, '\0');
    in.read(arch.data(), static_cast<std::streamsize>(len));
    if (!in) throw CompatibilityError("truncated architecture string");
    const auto width = get_u64(in);
    if (width != sizeof(float) && width != sizeof(double)) throw CompatibilityError("unsupported scalar width");

    Network<T> net(parse_architecture(arch), shape);
    auto params = net.parameters();
    if (get_u64(in) != params.size()) throw CompatibilityError("parameter count does not match architecture");
    for (auto* p : params) {
        if (get_u64(in) != p->value.size()) throw CompatibilityError("parameter '" + p->name + "' has the wrong size");
        if (width == sizeof(float))
            read_blob<float>(in, p->value);
        else
            read_blob<double>(in, p->value);
    }
    return net;
}

template <typename T>
Network<T> load_network(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return load_network<T>(in);
    } catch (const CompatibilityError& e) {
        throw CompatibilityError(path.string() + ": " + e.what());
    }
}

template void save_network(std::ostream&, const Network<float>&);
template void save_network(std::ostream&, const Network<double>&);
template void save_network(const std::filesystem::path&, const Network<float>&);
template void save_network(const std::filesystem::path&, const Network<double>&);
template Network<float> load_network<float>(std::istream&);
template Network<double> load_network<double>(std::istream&);
template Network<float> load_network<float>(const std::filesystem::path&);
template Network<double> load_network<double>(const std::filesystem::path&);

}  // namespace profmon::nn
