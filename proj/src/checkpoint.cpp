#include "semd/checkpoint.hpp"

#include "semd/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace semd {

namespace {

constexpr char kMagic[4] = {'S', 'E', 'M', 'D'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxNameLen = 1u << 16;
constexpr std::uint32_t kMaxRank = 16;

static_assert(std::numeric_limits<double>::is_iec559, "requires IEEE-754 doubles");

template <typename T>
void put_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(buf, &v, sizeof(T));
    } else {
        for (std::size_t i = 0; i < sizeof(T); ++i)
            buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    }
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(T)))
        throw CorruptContainerError("container truncated");
    if constexpr (std::endian::native == std::endian::little) {
        T v;
        std::memcpy(&v, buf, sizeof(T));
        return v;
    } else {
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
        return v;
    }
}

} // namespace

namespace wire {

void put_u32(std::ostream& os, std::uint32_t v) { put_le<std::uint32_t>(os, v); }
void put_u64(std::ostream& os, std::uint64_t v) { put_le<std::uint64_t>(os, v); }

void put_string(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_f64(std::ostream& os, const double* p, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            std::uint64_t bits;
            std::memcpy(&bits, p + i, sizeof(double));
            put_le<std::uint64_t>(os, bits);
        }
    }
}

void put_array(std::ostream& os, const NamedArray& a) {
    std::int64_t numel = 1;
    for (std::int64_t d : a.shape) numel *= d;
    if (numel != static_cast<std::int64_t>(a.data.size()))
        throw DimensionError("put_array: shape of '" + a.name + "' does not match payload");
    put_string(os, a.name);
    put_u32(os, static_cast<std::uint32_t>(a.shape.size()));
    for (std::int64_t d : a.shape) put_u64(os, static_cast<std::uint64_t>(d));
    put_f64(os, a.data.data(), a.data.size());
}

void put_arrays(std::ostream& os, const std::vector<NamedArray>& arrays) {
    put_u64(os, static_cast<std::uint64_t>(arrays.size()));
    for (const NamedArray& a : arrays) put_array(os, a);
}

std::uint32_t get_u32(std::istream& is) { return get_le<std::uint32_t>(is); }
std::uint64_t get_u64(std::istream& is) { return get_le<std::uint64_t>(is); }

std::string get_string(std::istream& is) {
    const std::uint32_t n = get_u32(is);
    if (n > kMaxNameLen) throw CorruptContainerError("container string length out of range");
    std::string s(n, '\0');
    if (n > 0 && !is.read(s.data(), n)) throw CorruptContainerError("container truncated");
    return s;
}

void get_f64(std::istream& is, double* p, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        if (!is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double))))
            throw CorruptContainerError("container truncated");
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint64_t bits = get_le<std::uint64_t>(is);
            std::memcpy(p + i, &bits, sizeof(double));
        }
    }
}

NamedArray get_array(std::istream& is) {
    NamedArray a;
    a.name = get_string(is);
    const std::uint32_t rank = get_u32(is);
    if (rank > kMaxRank) throw CorruptContainerError("array rank out of range");
    a.shape.resize(rank);
    std::uint64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        const std::uint64_t d = get_u64(is);
        if (d == 0 || numel > (1ull << 40) / std::max<std::uint64_t>(d, 1))
            throw CorruptContainerError("array dimensions out of range");
        a.shape[i] = static_cast<std::int64_t>(d);
        numel *= d;
    }
    a.data.resize(numel);
    get_f64(is, a.data.data(), a.data.size());
    return a;
}

std::vector<NamedArray> get_arrays(std::istream& is) {
    const std::uint64_t count = get_u64(is);
    if (count > (1u << 20)) throw CorruptContainerError("array count out of range");
    std::vector<NamedArray> arrays;
    arrays.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) arrays.push_back(get_array(is));
    return arrays;
}

} // namespace wire

void write_checkpoint(const std::string& path, const std::vector<NamedArray>& arrays) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    wire::put_u32(os, kVersion);
    wire::put_arrays(os, arrays);
    os.flush();
    if (!os) throw IoError("failed writing '" + path + "'");
}

std::vector<NamedArray> read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "' for reading");
    char magic[4];
    if (!is.read(magic, 4)) throw CorruptContainerError("'" + path + "': truncated header");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw CorruptContainerError("'" + path + "': bad magic, not a checkpoint");
    const std::uint32_t version = wire::get_u32(is);
    if (version != kVersion)
        throw VersionError("'" + path + "': unsupported checkpoint version " +
                           std::to_string(version));
    return wire::get_arrays(is);
}

} // namespace semd
