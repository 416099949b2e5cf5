#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace aanreg {

/// Voxel counts along x, y, z. Linear offset is (x*ny + y)*nz + z (z fastest).
struct Dims {
    std::size_t nx = 0;
    std::size_t ny = 0;
    std::size_t nz = 0;

    constexpr std::size_t count() const { return nx * ny * nz; }
    constexpr std::size_t offset(std::size_t x, std::size_t y, std::size_t z) const {
        return (x * ny + y) * nz + z;
    }
    constexpr std::array<std::size_t, 3> coords(std::size_t offset) const {
        return {offset / (ny * nz), (offset / nz) % ny, offset % nz};
    }
    constexpr std::size_t operator[](int axis) const { return axis == 0 ? nx : axis == 1 ? ny : nz; }
    constexpr bool empty() const { return count() == 0; }
    friend constexpr bool operator==(const Dims&, const Dims&) = default;
};

std::string to_string(const Dims& d);

/// Raised when a VOL1 or PGM file cannot be parsed. `offset` is the byte
/// position where parsing failed.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t offset);
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

/// Dense single-channel grid. Values are stored in z-fastest order.
template <typename T>
class Grid {
public:
    using value_type = T;

    Grid() = default;
    explicit Grid(Dims dims, T fill = T{}) : dims_(dims), data_(dims.count(), fill) {}
    Grid(Dims dims, std::vector<T> data) : dims_(dims), data_(std::move(data)) {
        if (data_.size() != dims_.count())
            throw std::invalid_argument("grid data length does not match dims " + to_string(dims_));
    }

    const Dims& dims() const { return dims_; }
    std::size_t size() const { return data_.size(); }

    T& operator()(std::size_t x, std::size_t y, std::size_t z) { return data_[dims_.offset(x, y, z)]; }
    const T& operator()(std::size_t x, std::size_t y, std::size_t z) const {
        return data_[dims_.offset(x, y, z)];
    }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    Dims dims_;
    std::vector<T> data_;
};

/// Intensity image (moving, fixed, warped, appearance map). 64-bit in memory,
/// 32-bit on disk.
using Volume = Grid<double>;
/// Anatomical labels, 0 = background.
using LabelMap = Grid<std::uint16_t>;
/// Binary edge indicator (1 = edge).
using EdgeMap = Grid<std::uint8_t>;
/// det(I + grad u) per voxel.
using JacobianField = Grid<double>;

/// Per-voxel displacement u(x) in voxel units; the transform is x -> x + u(x).
class DisplacementField {
public:
    DisplacementField() = default;
    explicit DisplacementField(Dims dims) : u_{Volume(dims), Volume(dims), Volume(dims)} {}
    DisplacementField(Volume ux, Volume uy, Volume uz);

    const Dims& dims() const { return u_[0].dims(); }
    Volume& component(int c) { return u_[static_cast<std::size_t>(c)]; }
    const Volume& component(int c) const { return u_[static_cast<std::size_t>(c)]; }
    std::array<double, 3> at(std::size_t i) const { return {u_[0][i], u_[1][i], u_[2][i]}; }

    friend bool operator==(const DisplacementField&, const DisplacementField&) = default;

private:
    std::array<Volume, 3> u_;
};

void require_same_dims(const Dims& a, const Dims& b, const char* what);

// VOL1 files: "VOL1", u32 LE nx ny nz channels, u8 dtype (0 = f32, 1 = u16),
// then the payload little-endian, channel-major, z fastest.
enum class VolDtype : std::uint8_t { F32 = 0, U16 = 1 };
inline constexpr std::size_t kVol1HeaderBytes = 4 + 4 * 4 + 1;

/// Header + raw payload of a VOL1 file, before interpretation.
struct Vol1Contents {
    Dims dims;
    std::uint32_t channels = 0;
    VolDtype dtype = VolDtype::F32;
    std::vector<double> values;  // channel-major, as stored
};

Vol1Contents read_vol1(const std::filesystem::path& path);
void write_vol1(const std::filesystem::path& path, Dims dims, std::uint32_t channels, VolDtype dtype,
                std::span<const double> values);

/// Reads a single-channel f32 VOL1 file.
Volume read_volume(const std::filesystem::path& path);
/// Writes `v` as single-channel f32. Values are rounded to float; volumes whose
/// values are float-representable round-trip bit-exactly.
void write_volume(const Volume& v, const std::filesystem::path& path);

LabelMap read_labels(const std::filesystem::path& path);
void write_labels(const LabelMap& m, const std::filesystem::path& path);

EdgeMap read_edges(const std::filesystem::path& path);
void write_edges(const EdgeMap& e, const std::filesystem::path& path);

DisplacementField read_ddf(const std::filesystem::path& path);
void write_ddf(const DisplacementField& ddf, const std::filesystem::path& path);

/// Affine map of intensities onto [0,1]; a constant volume maps to all zeros.
Volume normalize_intensity(const Volume& v);

enum class Axis { X = 0, Y = 1, Z = 2 };
Axis parse_axis(const std::string& s);

/// Writes one slice as binary P5 PGM, gray = round(255 * clamp(v, 0, 1)).
/// Slice rows run along the first remaining axis, columns along the second.
void export_slice_pgm(const Volume& v, Axis axis, std::size_t index, const std::filesystem::path& path);

/// Raw 8-bit slice used by export_slice_pgm; exposed for tests and plots.
std::vector<std::uint8_t> slice_bytes(const Volume& v, Axis axis, std::size_t index, std::size_t& width,
                                      std::size_t& height);

}  // namespace aanreg
