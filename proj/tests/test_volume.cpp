#include <doctest.h>

#include "aanreg/volume.hpp"
#include "support.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

using namespace aanreg;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "aanreg_test_volume";
    fs::create_directories(dir);
    return dir / name;
}

std::vector<unsigned char> file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST_CASE("linear offset is z fastest") {
    const Dims d{3, 4, 5};
    CHECK(d.offset(0, 0, 1) == 1);
    CHECK(d.offset(0, 1, 0) == 5);
    CHECK(d.offset(1, 0, 0) == 20);
    for (std::size_t i = 0; i < d.count(); ++i) {
        const auto c = d.coords(i);
        CHECK(d.offset(c[0], c[1], c[2]) == i);
    }
}

TEST_CASE("grid rejects a payload of the wrong length") {
    CHECK_THROWS_AS(Volume(Dims{2, 2, 2}, std::vector<double>(7)), std::invalid_argument);
}

TEST_CASE("3x2x1 volume round-trips in z-fastest order") {
    Volume v(Dims{3, 2, 1}, {0.0, 0.1, 0.2, 0.3, 0.4, 0.5});
    const auto p = temp_path("small.vol");
    write_volume(v, p);
    const Volume back = read_volume(p);
    CHECK(back.dims() == v.dims());
    CHECK(back(1, 0, 0) == doctest::Approx(0.2).epsilon(1e-7));
    CHECK(back(2, 1, 0) == doctest::Approx(0.5).epsilon(1e-7));
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(back[i] == static_cast<double>(static_cast<float>(v[i])));
}

TEST_CASE("1x1x1 file is the header plus four payload bytes") {
    const auto p = temp_path("one.vol");
    write_volume(Volume(Dims{1, 1, 1}, {0.25}), p);
    const auto b = file_bytes(p);
    REQUIRE(b.size() == kVol1HeaderBytes + 4);
    CHECK(std::memcmp(b.data(), "VOL1", 4) == 0);
    float f;
    std::memcpy(&f, b.data() + kVol1HeaderBytes, 4);
    CHECK(f == 0.25f);
    CHECK(b[20] == 0);  // dtype f32
}

TEST_CASE("bad magic is a format error") {
    const auto p = temp_path("bad.vol");
    write_volume(Volume(Dims{1, 1, 1}, {1.0}), p);
    auto b = file_bytes(p);
    b[0] = 'X';
    write_bytes(p, b);
    CHECK_THROWS_AS(read_volume(p), FormatError);
}

TEST_CASE("truncated payload is a format error") {
    const auto p = temp_path("trunc.vol");
    write_volume(Volume(Dims{2, 2, 2}, 0.5), p);
    auto b = file_bytes(p);
    b.resize(b.size() - 3);
    write_bytes(p, b);
    CHECK_THROWS_AS(read_volume(p), FormatError);
}

TEST_CASE("labels, edges and fields round-trip bit-exactly") {
    std::mt19937_64 rng(4);
    const Dims d{3, 4, 5};
    LabelMap m(d);
    EdgeMap e(d);
    for (std::size_t i = 0; i < d.count(); ++i) {
        m[i] = static_cast<std::uint16_t>(rng() % 7);
        e[i] = static_cast<std::uint8_t>(rng() % 2);
    }
    DisplacementField u = testing_support::random_field(d, rng, 2.0);
    for (int c = 0; c < 3; ++c)
        for (double& x : u.component(c).storage()) x = static_cast<float>(x);
    write_labels(m, temp_path("m.vol"));
    write_edges(e, temp_path("e.vol"));
    write_ddf(u, temp_path("u.vol"));
    CHECK(read_labels(temp_path("m.vol")) == m);
    CHECK(read_edges(temp_path("e.vol")) == e);
    CHECK(read_ddf(temp_path("u.vol")) == u);
    CHECK(read_vol1(temp_path("u.vol")).channels == 3);
    // a field file is not a single-channel volume
    CHECK_THROWS(read_volume(temp_path("u.vol")));
}

TEST_CASE("normalize maps [2,4,6] to [0,0.5,1] and is idempotent") {
    const Volume v(Dims{3, 1, 1}, {2.0, 4.0, 6.0});
    const Volume n = normalize_intensity(v);
    CHECK(n[0] == 0.0);
    CHECK(n[1] == 0.5);
    CHECK(n[2] == 1.0);
    CHECK(normalize_intensity(n) == n);
    CHECK(normalize_intensity(Volume(Dims{2, 2, 2}, 3.0)) == Volume(Dims{2, 2, 2}, 0.0));
}

TEST_CASE("normalize output spans exactly [0,1] on random volumes") {
    std::mt19937_64 rng(9);
    for (int t = 0; t < 10; ++t) {
        const Volume v = testing_support::random_volume(testing_support::random_dims(rng, 2, 6), rng, -5, 7);
        const Volume n = normalize_intensity(v);
        const auto [lo, hi] = std::minmax_element(n.storage().begin(), n.storage().end());
        CHECK(*lo == 0.0);
        CHECK(*hi == doctest::Approx(1.0).epsilon(1e-15));
    }
}

TEST_CASE("PGM slice of a 2x2 plane") {
    const Volume v(Dims{2, 2, 1}, {0.0, 0.5, 0.5, 1.0});
    const auto p = temp_path("s.pgm");
    export_slice_pgm(v, Axis::Z, 0, p);
    const auto b = file_bytes(p);
    REQUIRE(b.size() >= 4);
    const std::vector<unsigned char> tail(b.end() - 4, b.end());
    CHECK(tail == std::vector<unsigned char>{0, 128, 128, 255});
    CHECK(b[0] == 'P');
    CHECK(b[1] == '5');
}

TEST_CASE("slice index out of range throws") {
    const Volume v(Dims{2, 3, 4}, 0.0);
    std::size_t w = 0, h = 0;
    CHECK_THROWS(slice_bytes(v, Axis::X, 2, w, h));
    CHECK_NOTHROW(slice_bytes(v, Axis::Y, 2, w, h));
    CHECK(w * h == 8);
}

TEST_CASE("axis names parse") {
    CHECK(parse_axis("x") == Axis::X);
    CHECK(parse_axis("z") == Axis::Z);
    CHECK_THROWS(parse_axis("w"));
}
