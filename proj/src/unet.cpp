#include "aanreg/unet.hpp"

#include "aanreg/ops.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace aanreg::nn {

void ArchConfig::validate(const Dims& d) const {
    if (levels < 1) throw std::invalid_argument("arch: levels must be >= 1");
    if (base_channels < 1 || in_channels < 1 || out_channels < 1)
        throw std::invalid_argument("arch: channel counts must be positive");
    const std::size_t f = std::size_t{1} << (levels - 1);
    if (d.nx % f || d.ny % f || d.nz % f)
        throw std::invalid_argument("arch: dims " + to_string(d) + " not divisible by " + std::to_string(f) +
                                    " for " + std::to_string(levels) + " levels");
}

ArchConfig default_aan_arch() { return ArchConfig{3, 16, 3, 1, 0.2}; }
ArchConfig default_dlr_arch() { return ArchConfig{3, 16, 2, 3, 0.2}; }

std::size_t ModelParams::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.var->value.size();
    return n;
}

void ModelParams::zero_grad() {
    for (auto& p : params) p.var->zero_grad();
}

const Var& ModelParams::find(const std::string& name) const {
    for (const auto& p : params)
        if (p.name == name) return p.var;
    throw std::out_of_range("no parameter named " + name);
}

ModelParams ModelParams::clone() const {
    ModelParams out{role, {}};
    for (const auto& p : params) out.params.push_back({p.name, parameter(p.var->shape, p.var->value)});
    return out;
}

namespace {

struct Layer {
    std::string name;
    std::size_t in, out;
};

std::vector<Layer> unet_layers(const ArchConfig& cfg) {
    const auto base = static_cast<std::size_t>(cfg.base_channels);
    std::vector<Layer> layers;
    layers.push_back({"enc0", static_cast<std::size_t>(cfg.in_channels), base});
    for (int k = 1; k < cfg.levels; ++k) layers.push_back({"enc" + std::to_string(k), base << (k - 1), base << k});
    // dec_k reads level k (or the concat produced at level k) and feeds level k-1.
    for (int k = cfg.levels - 1; k >= 1; --k) {
        const std::size_t in = k == cfg.levels - 1 ? (base << k) : (base << (k + 1));
        layers.push_back({"dec" + std::to_string(k), in, base << (k - 1)});
    }
    const std::size_t top = cfg.levels > 1 ? 2 * base : base;
    std::size_t last = top;
    if (top != kPreOutputChannels) {
        layers.push_back({"pre", top, kPreOutputChannels});
        last = kPreOutputChannels;
    }
    layers.push_back({"out", last, static_cast<std::size_t>(cfg.out_channels)});
    return layers;
}

}  // namespace

ModelParams init_unet(const ArchConfig& cfg, ModelRole role, std::uint64_t seed) {
    if (cfg.levels < 1) throw std::invalid_argument("arch: levels must be >= 1");
    std::mt19937_64 rng(seed);
    ModelParams mp{role, {}};
    const double gain = std::sqrt(2.0 / (1.0 + cfg.leaky_slope * cfg.leaky_slope));
    for (const Layer& l : unet_layers(cfg)) {
        const Shape ks{l.out, l.in, 3, 3, 3};
        std::vector<double> w(element_count(ks), 0.0);
        if (l.name != "out") {
            const double bound = gain * std::sqrt(3.0 / static_cast<double>(l.in * 27));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (double& v : w) v = dist(rng);
        }
        mp.params.push_back({l.name + ".weight", parameter(ks, std::move(w))});
        mp.params.push_back({l.name + ".bias", parameter({l.out}, std::vector<double>(l.out, 0.0))});
    }
    return mp;
}

Var unet_forward(const ModelParams& p, const ArchConfig& cfg, const Var& input, UNetTrace* trace) {
    cfg.validate(spatial_dims(input->shape));
    if (input->shape[0] != static_cast<std::size_t>(cfg.in_channels))
        throw std::invalid_argument("unet: expected " + std::to_string(cfg.in_channels) + " input channels");
    auto conv = [&](const Var& x, const std::string& name, int stride) {
        return conv3d(x, p.find(name + ".weight"), p.find(name + ".bias"), stride);
    };
    const double slope = cfg.leaky_slope;

    std::vector<Var> enc;
    enc.push_back(leaky_relu(conv(input, "enc0", 1), slope));
    for (int k = 1; k < cfg.levels; ++k) enc.push_back(leaky_relu(conv(enc.back(), "enc" + std::to_string(k), 2), slope));
    if (trace)
        for (const Var& e : enc) trace->encoder.push_back(e->shape);

    Var h = enc.back();
    for (int k = cfg.levels - 1; k >= 1; --k) {
        h = leaky_relu(conv(h, "dec" + std::to_string(k), 1), slope);
        h = concat_channels(upsample_nearest(h), enc[static_cast<std::size_t>(k - 1)]);
        if (trace) trace->decoder.push_back(h->shape);
    }
    if (h->shape[0] != kPreOutputChannels) h = leaky_relu(conv(h, "pre", 1), slope);
    return conv(h, "out", 1);
}

Var unet_forward(const ModelParams& params, const ArchConfig& cfg, const Var& input) {
    return unet_forward(params, cfg, input, nullptr);
}

Var edge_tensor(const EdgeMap& e) {
    return constant(feature_shape(1, e.dims()), std::vector<double>(e.storage().begin(), e.storage().end()));
}

Var aan_graph(const ModelParams& theta, const ArchConfig& cfg, const Var& moving, const Var& fixed,
              const EdgeMap& edges) {
    require_same_dims(spatial_dims(moving->shape), edges.dims(), "aan edges");
    const Var input = concat_channels(concat_channels(moving, fixed), edge_tensor(edges));
    return unet_forward(theta, cfg, input);
}

Volume aan_forward(const ModelParams& theta, const Volume& moving, const Volume& fixed, const EdgeMap& edges,
                   const ArchConfig& cfg) {
    require_same_dims(moving.dims(), fixed.dims(), "aan_forward");
    return to_volume(aan_graph(theta, cfg, from_volume(moving), from_volume(fixed), edges));
}

Var dlr_graph(const ModelParams& params, const ArchConfig& cfg, const Var& moving_adjusted, const Var& fixed) {
    return unet_forward(params, cfg, concat_channels(moving_adjusted, fixed));
}

DisplacementField dlr_forward(const ModelParams& params, const Volume& moving_adjusted, const Volume& fixed,
                              const ArchConfig& cfg) {
    require_same_dims(moving_adjusted.dims(), fixed.dims(), "dlr_forward");
    return to_ddf(dlr_graph(params, cfg, from_volume(moving_adjusted), from_volume(fixed)));
}

DisplacementField to_ddf(const Var& v) {
    if (v->shape.size() != 4 || v->shape[0] != 3) throw std::invalid_argument("to_ddf: expected 3 channels");
    return DisplacementField(to_volume(v, 0), to_volume(v, 1), to_volume(v, 2));
}

Var from_ddf(const DisplacementField& ddf) {
    std::vector<double> data;
    data.reserve(3 * ddf.dims().count());
    for (int c = 0; c < 3; ++c)
        data.insert(data.end(), ddf.component(c).storage().begin(), ddf.component(c).storage().end());
    return constant(feature_shape(3, ddf.dims()), std::move(data));
}

RegistrationModel RegistrationModel::initialize(const ArchConfig& aan_arch, const ArchConfig& dlr_arch,
                                                bool aan_enabled, std::uint64_t seed) {
    RegistrationModel m;
    m.aan_arch = aan_arch;
    m.dlr_arch = dlr_arch;
    m.aan_enabled = aan_enabled;
    m.aan = init_unet(aan_arch, ModelRole::AAN, seed * 2 + 1);
    m.dlr = init_unet(dlr_arch, ModelRole::DLR, seed * 2 + 2);
    return m;
}

namespace {

constexpr char kCkptMagic[4] = {'A', 'A', 'N', 'M'};
constexpr std::uint32_t kCkptVersion = 1;

struct Writer {
    std::vector<char> buf;
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const char*>(p);
        buf.insert(buf.end(), c, c + n);
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void f64(double v) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
    }
};

struct Reader {
    const std::vector<char>& buf;
    std::size_t pos = 0;
    void need(std::size_t n) {
        if (pos + n > buf.size()) throw FormatError("truncated checkpoint", buf.size());
    }
    std::uint64_t le(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    double f64() { return std::bit_cast<double>(le(8)); }
};

void write_arch(Writer& w, const ArchConfig& a) {
    w.i32(a.levels);
    w.i32(a.base_channels);
    w.i32(a.in_channels);
    w.i32(a.out_channels);
    w.f64(a.leaky_slope);
}

ArchConfig read_arch(Reader& r) {
    ArchConfig a;
    a.levels = r.i32();
    a.base_channels = r.i32();
    a.in_channels = r.i32();
    a.out_channels = r.i32();
    a.leaky_slope = r.f64();
    if (a.levels < 1 || a.levels > 16 || a.base_channels < 1 || a.in_channels < 1 || a.out_channels < 1)
        throw FormatError("invalid architecture block", r.pos);
    return a;
}

void write_params(Writer& w, const ModelParams& mp) {
    w.u32(static_cast<std::uint32_t>(mp.params.size()));
    for (const auto& p : mp.params) {
        w.u32(static_cast<std::uint32_t>(p.var->shape.size()));
        for (auto e : p.var->shape) w.u32(static_cast<std::uint32_t>(e));
        for (double v : p.var->value) w.f64(v);
    }
}

void read_params(Reader& r, ModelParams& mp) {
    const std::size_t at = r.pos;
    if (r.u32() != mp.params.size()) throw FormatError("parameter count does not match architecture", at);
    for (auto& p : mp.params) {
        const std::size_t shape_at = r.pos;
        Shape s(r.u32());
        for (auto& e : s) e = r.u32();
        if (s != p.var->shape) throw FormatError("parameter " + p.name + " has shape " + to_string(s), shape_at);
        for (double& v : p.var->value) v = r.f64();
    }
}

}  // namespace

void save_checkpoint(const RegistrationModel& m, const std::filesystem::path& path) {
    Writer w;
    w.bytes(kCkptMagic, 4);
    w.u32(kCkptVersion);
    w.buf.push_back(static_cast<char>(m.aan_enabled ? 1 : 0));
    write_arch(w, m.aan_arch);
    write_arch(w, m.dlr_arch);
    write_params(w, m.aan);
    write_params(w, m.dlr);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
}

RegistrationModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    const std::vector<char> buf{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (buf.size() < 4 || std::memcmp(buf.data(), kCkptMagic, 4) != 0) throw FormatError("bad checkpoint magic", 0);
    Reader r{buf, 4};
    if (r.u32() != kCkptVersion) throw FormatError("unsupported checkpoint version", 4);
    const auto enabled = r.le(1);
    RegistrationModel m;
    m.aan_enabled = enabled != 0;
    m.aan_arch = read_arch(r);
    m.dlr_arch = read_arch(r);
    m.aan = init_unet(m.aan_arch, ModelRole::AAN, 0);
    m.dlr = init_unet(m.dlr_arch, ModelRole::DLR, 0);
    read_params(r, m.aan);
    read_params(r, m.dlr);
    if (r.pos != buf.size()) throw FormatError("trailing bytes in checkpoint", r.pos);
    return m;
}

}  // namespace aanreg::nn
