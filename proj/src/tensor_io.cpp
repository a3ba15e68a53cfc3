#include "avdg/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "avdg/errors.hpp"

namespace avdg {

namespace {

constexpr std::array<char, 8> kMagic = {'A', 'V', 'D', 'G', 'T', 'N', 'S', '1'};

template <typename T>
void put_le(std::ostream& os, T value) {
    static_assert(std::is_integral_v<T>);
    std::array<char, sizeof(T)> buf{};
    auto u = static_cast<std::make_unsigned_t<T>>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        buf[i] = static_cast<char>(u & 0xFFu);
        u = static_cast<decltype(u)>(u >> 8);
    }
    os.write(buf.data(), buf.size());
}

template <typename T>
T get_le(std::istream& is) {
    static_assert(std::is_integral_v<T>);
    std::array<unsigned char, sizeof(T)> buf{};
    if (!is.read(reinterpret_cast<char*>(buf.data()), buf.size())) {
        throw IoError("tensor container: unexpected end of data");
    }
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = sizeof(T); i-- > 0;) u = static_cast<decltype(u)>((u << 8) | buf[i]);
    return static_cast<T>(u);
}

}  // namespace

void write_tensors(std::ostream& os, const NamedTensors& tensors) {
    os.write(kMagic.data(), kMagic.size());
    put_le<std::uint64_t>(os, tensors.size());
    for (const auto& [name, t] : tensors) {
        put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_le<std::uint8_t>(os, kDtypeFloat64);
        put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) put_le<std::uint64_t>(os, d);
        for (double v : t.data()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
    }
    if (!os) throw IoError("tensor container: write failed");
}

NamedTensors read_tensors(std::istream& is) {
    std::array<char, 8> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
        throw IoError("tensor container: bad magic");
    }
    const auto count = get_le<std::uint64_t>(is);
    NamedTensors out;
    for (std::uint64_t k = 0; k < count; ++k) {
        const auto name_len = get_le<std::uint32_t>(is);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw IoError("tensor container: truncated name");
        const auto dtype = get_le<std::uint8_t>(is);
        if (dtype != kDtypeFloat64) {
            throw IoError("tensor container: unsupported dtype " + std::to_string(dtype) + " for " + name);
        }
        const auto rank = get_le<std::uint32_t>(is);
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(get_le<std::uint64_t>(is));
        std::vector<double> data(shape_numel(shape));
        for (double& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(is));
        out.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return out;
}

void save_tensors(const std::filesystem::path& path, const NamedTensors& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    write_tensors(os, tensors);
}

NamedTensors load_tensors(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return read_tensors(is);
}

}  // namespace avdg
