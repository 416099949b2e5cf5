#include "aanreg/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace aanreg {

std::string to_string(const Dims& d) {
    return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

FormatError::FormatError(const std::string& what, std::size_t offset)
    : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

DisplacementField::DisplacementField(Volume ux, Volume uy, Volume uz)
    : u_{std::move(ux), std::move(uy), std::move(uz)} {
    require_same_dims(u_[0].dims(), u_[1].dims(), "displacement components");
    require_same_dims(u_[0].dims(), u_[2].dims(), "displacement components");
}

void require_same_dims(const Dims& a, const Dims& b, const char* what) {
    if (a != b)
        throw std::invalid_argument(std::string(what) + ": dims mismatch " + to_string(a) + " vs " +
                                    to_string(b));
}

namespace {

constexpr char kMagic[4] = {'V', 'O', 'L', '1'};

void put_u32(std::vector<char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::vector<char>& buf, std::size_t pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    return v;
}

std::vector<char> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::filesystem::path& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::size_t dtype_bytes(VolDtype t) { return t == VolDtype::F32 ? 4 : 2; }

}  // namespace

Vol1Contents read_vol1(const std::filesystem::path& path) {
    const std::vector<char> buf = slurp(path);
    if (buf.size() < 4) throw FormatError("truncated VOL1 magic", buf.size());
    if (std::memcmp(buf.data(), kMagic, 4) != 0) throw FormatError("bad VOL1 magic", 0);
    if (buf.size() < kVol1HeaderBytes) throw FormatError("truncated VOL1 header", buf.size());

    Vol1Contents c;
    c.dims = {get_u32(buf, 4), get_u32(buf, 8), get_u32(buf, 12)};
    c.channels = get_u32(buf, 16);
    const auto flag = static_cast<unsigned char>(buf[20]);
    if (flag > 1) throw FormatError("unknown VOL1 dtype flag " + std::to_string(flag), 20);
    c.dtype = static_cast<VolDtype>(flag);
    if (c.dims.empty()) throw FormatError("VOL1 dims must be positive", 4);
    if (c.channels == 0) throw FormatError("VOL1 channel count must be positive", 16);

    // Guard the multiplication before trusting it.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() / 8;
    std::uint64_t n = 1;
    for (std::uint64_t f : {std::uint64_t{c.dims.nx}, std::uint64_t{c.dims.ny}, std::uint64_t{c.dims.nz},
                            std::uint64_t{c.channels}}) {
        if (n > limit / f) throw FormatError("VOL1 dims overflow", 4);
        n *= f;
    }
    const std::uint64_t payload = n * dtype_bytes(c.dtype);
    const std::uint64_t have = buf.size() - kVol1HeaderBytes;
    if (have < payload) throw FormatError("truncated VOL1 payload", buf.size());
    if (have > payload) throw FormatError("trailing bytes after VOL1 payload", kVol1HeaderBytes + payload);

    c.values.resize(n);
    const char* p = buf.data() + kVol1HeaderBytes;
    for (std::size_t i = 0; i < n; ++i) {
        if (c.dtype == VolDtype::F32) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b)
                bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[4 * i + b])) << (8 * b);
            const float f = std::bit_cast<float>(bits);
            if (!std::isfinite(f)) throw FormatError("non-finite VOL1 value", kVol1HeaderBytes + 4 * i);
            c.values[i] = f;
        } else {
            const auto lo = static_cast<unsigned char>(p[2 * i]);
            const auto hi = static_cast<unsigned char>(p[2 * i + 1]);
            c.values[i] = static_cast<double>(lo | (hi << 8));
        }
    }
    return c;
}

void write_vol1(const std::filesystem::path& path, Dims dims, std::uint32_t channels, VolDtype dtype,
                std::span<const double> values) {
    if (dims.empty()) throw std::invalid_argument("cannot write VOL1 with empty dims");
    if (values.size() != dims.count() * channels)
        throw std::invalid_argument("VOL1 payload length does not match dims");
    std::vector<char> out;
    out.reserve(kVol1HeaderBytes + values.size() * dtype_bytes(dtype));
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, static_cast<std::uint32_t>(dims.nx));
    put_u32(out, static_cast<std::uint32_t>(dims.ny));
    put_u32(out, static_cast<std::uint32_t>(dims.nz));
    put_u32(out, channels);
    out.push_back(static_cast<char>(dtype));
    for (double v : values) {
        if (dtype == VolDtype::F32) {
            if (!std::isfinite(v)) throw std::invalid_argument("cannot write non-finite value");
            put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        } else {
            if (v < 0 || v > 65535 || v != std::floor(v))
                throw std::invalid_argument("value not representable as u16");
            const auto u = static_cast<std::uint16_t>(v);
            out.push_back(static_cast<char>(u & 0xFF));
            out.push_back(static_cast<char>(u >> 8));
        }
    }
    dump(path, out);
}

namespace {

Vol1Contents read_expect(const std::filesystem::path& path, std::uint32_t channels, VolDtype dtype) {
    Vol1Contents c = read_vol1(path);
    if (c.channels != channels)
        throw FormatError("expected " + std::to_string(channels) + " channel(s), file has " +
                              std::to_string(c.channels),
                          16);
    if (c.dtype != dtype) throw FormatError("unexpected VOL1 dtype", 20);
    return c;
}

template <typename T>
Grid<T> to_grid(const Vol1Contents& c) {
    std::vector<T> data(c.values.size());
    std::transform(c.values.begin(), c.values.end(), data.begin(), [](double v) { return static_cast<T>(v); });
    return Grid<T>(c.dims, std::move(data));
}

template <typename T>
std::vector<double> to_doubles(std::span<const T> data) {
    return {data.begin(), data.end()};
}

}  // namespace

Volume read_volume(const std::filesystem::path& path) {
    Vol1Contents c = read_expect(path, 1, VolDtype::F32);
    return Volume(c.dims, std::move(c.values));
}

void write_volume(const Volume& v, const std::filesystem::path& path) {
    write_vol1(path, v.dims(), 1, VolDtype::F32, v.data());
}

LabelMap read_labels(const std::filesystem::path& path) {
    return to_grid<std::uint16_t>(read_expect(path, 1, VolDtype::U16));
}

void write_labels(const LabelMap& m, const std::filesystem::path& path) {
    write_vol1(path, m.dims(), 1, VolDtype::U16, to_doubles(m.data()));
}

EdgeMap read_edges(const std::filesystem::path& path) {
    Vol1Contents c = read_expect(path, 1, VolDtype::U16);
    for (std::size_t i = 0; i < c.values.size(); ++i)
        if (c.values[i] > 1) throw FormatError("edge map value outside {0,1}", kVol1HeaderBytes + 2 * i);
    return to_grid<std::uint8_t>(c);
}

void write_edges(const EdgeMap& e, const std::filesystem::path& path) {
    write_vol1(path, e.dims(), 1, VolDtype::U16, to_doubles(e.data()));
}

DisplacementField read_ddf(const std::filesystem::path& path) {
    Vol1Contents c = read_expect(path, 3, VolDtype::F32);
    const std::size_t n = c.dims.count();
    DisplacementField ddf(c.dims);
    for (int k = 0; k < 3; ++k)
        std::copy_n(c.values.begin() + static_cast<std::ptrdiff_t>(k * n), n, ddf.component(k).storage().begin());
    return ddf;
}

void write_ddf(const DisplacementField& ddf, const std::filesystem::path& path) {
    const std::size_t n = ddf.dims().count();
    std::vector<double> values;
    values.reserve(3 * n);
    for (int k = 0; k < 3; ++k) values.insert(values.end(), ddf.component(k).storage().begin(), ddf.component(k).storage().end());
    write_vol1(path, ddf.dims(), 3, VolDtype::F32, values);
}

Volume normalize_intensity(const Volume& v) {
    Volume out(v.dims(), 0.0);
    if (v.size() == 0) return out;
    const auto [lo, hi] = std::minmax_element(v.storage().begin(), v.storage().end());
    const double vmin = *lo;
    const double range = *hi - vmin;
    if (range <= 0) return out;
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - vmin) / range;
    return out;
}

Axis parse_axis(const std::string& s) {
    if (s == "x" || s == "X") return Axis::X;
    if (s == "y" || s == "Y") return Axis::Y;
    if (s == "z" || s == "Z") return Axis::Z;
    throw std::invalid_argument("unknown axis '" + s + "' (expected x, y or z)");
}

std::vector<std::uint8_t> slice_bytes(const Volume& v, Axis axis, std::size_t index, std::size_t& width,
                                      std::size_t& height) {
    const Dims& d = v.dims();
    const int a = static_cast<int>(axis);
    if (index >= d[a])
        throw std::out_of_range("slice index " + std::to_string(index) + " out of range for axis of size " +
                                std::to_string(d[a]));
    const int r = a == 0 ? 1 : 0;
    const int c = a == 2 ? 1 : 2;
    height = d[r];
    width = d[c];
    std::vector<std::uint8_t> bytes(width * height);
    for (std::size_t i = 0; i < height; ++i) {
        for (std::size_t j = 0; j < width; ++j) {
            std::array<std::size_t, 3> p{};
            p[static_cast<std::size_t>(a)] = index;
            p[static_cast<std::size_t>(r)] = i;
            p[static_cast<std::size_t>(c)] = j;
            const double val = std::clamp(v(p[0], p[1], p[2]), 0.0, 1.0);
            bytes[i * width + j] = static_cast<std::uint8_t>(std::lround(255.0 * val));
        }
    }
    return bytes;
}

void export_slice_pgm(const Volume& v, Axis axis, std::size_t index, const std::filesystem::path& path) {
    std::size_t w = 0, h = 0;
    const auto bytes = slice_bytes(v, axis, index, w, h);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "P5\n" << w << ' ' << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace aanreg
