#include "bitsift/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <zlib.h>

#include "bitsift/error.hpp"

namespace bitsift {

namespace {

constexpr char kMagic[8] = {'B', 'S', 'Q', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

// Little-endian writers into a growing byte buffer.
class Writer {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void i32(std::int32_t v) { raw(&v, sizeof v); }
    void f64(double v) { raw(&v, sizeof v); }
    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }
    void shape(const Shape& s) {
        u64(s.size());
        for (std::size_t d : s) u64(d);
    }
    void tensor(const Tensor& t) {
        shape(t.shape);
        raw(t.data.data(), t.data.size() * sizeof(double));
    }
    const std::vector<std::uint8_t>& bytes() const { return buf_; }

private:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    std::vector<std::uint8_t> buf_;
};

class Reader {
public:
    Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

    std::uint8_t u8() { return *take(1); }
    std::uint32_t u32() { return load<std::uint32_t>(); }
    std::uint64_t u64() { return load<std::uint64_t>(); }
    std::int32_t i32() { return load<std::int32_t>(); }
    double f64() { return load<double>(); }
    std::string str() {
        const std::uint64_t n = u64();
        const std::uint8_t* p = take(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }
    Shape shape() {
        const std::uint64_t rank = u64();
        if (rank > 8) {
            throw FormatError("checkpoint: implausible tensor rank");
        }
        Shape s(rank);
        for (auto& d : s) d = u64();
        return s;
    }
    Tensor tensor() {
        const Shape s = shape();
        const std::size_t n = shape_size(s);
        Tensor t = Tensor::zeros(s);
        std::memcpy(t.data.data(), take(n * sizeof(double)), n * sizeof(double));
        return t;
    }
    bool done() const { return off_ == size_; }

private:
    template <typename T>
    T load() {
        T v;
        std::memcpy(&v, take(sizeof(T)), sizeof(T));
        return v;
    }
    const std::uint8_t* take(std::size_t n) {
        if (off_ + n > size_) {
            throw FormatError("checkpoint: section truncated");
        }
        const std::uint8_t* p = data_ + off_;
        off_ += n;
        return p;
    }
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t off_ = 0;
};

void write_spec(Writer& w, const ModelSpec& spec) {
    w.str(spec.arch);
    w.shape(spec.input_shape);
    w.u64(spec.num_classes);
    w.shape(spec.hidden);
    w.shape(spec.channels);
    w.u64(spec.blocks_per_stage);
    w.i32(spec.act_bits);
    w.i32(spec.act_bits_first);
    w.i32(spec.act_bits_last);
    w.i32(spec.pact_below_bits);
    w.f64(spec.pact_clip_init);
    w.f64(spec.clip_weight_decay);
    w.i32(spec.init_bits);
}

ModelSpec read_spec(Reader& r) {
    ModelSpec spec;
    spec.arch = r.str();
    spec.input_shape = r.shape();
    spec.num_classes = r.u64();
    spec.hidden = r.shape();
    spec.channels = r.shape();
    spec.blocks_per_stage = r.u64();
    spec.act_bits = r.i32();
    spec.act_bits_first = r.i32();
    spec.act_bits_last = r.i32();
    spec.pact_below_bits = r.i32();
    spec.pact_clip_init = r.f64();
    spec.clip_weight_decay = r.f64();
    spec.init_bits = r.i32();
    return spec;
}

void write_model(Writer& w, const Model& model) {
    write_spec(w, model.spec);
    w.u8(static_cast<std::uint8_t>(model.mode));
    w.u64(model.layers.size());
    for (const QuantLayer& l : model.layers) {
        w.str(l.layer_id);
        w.u8(l.kind == LayerKind::linear ? 0 : 1);
        w.shape(l.weight_shape);
        w.i32(l.stride);
        w.i32(l.padding);
        w.u8(l.has_bias ? 1 : 0);
        w.i32(l.act_bits);
        w.i32(l.dorefa_bits);
        w.u8(l.weights.size() ? 1 : 0);
        if (l.weights.size()) {
            w.tensor(l.weights);
        }
        w.i32(l.bit_state.bits);
        if (l.bit_state.bits >= 0) {
            w.f64(l.bit_state.scale);
            w.shape(l.bit_state.shape);
            for (int b = 0; b < l.bit_state.bits; ++b) {
                w.tensor(l.bit_state.pos_planes[static_cast<std::size_t>(b)]);
                w.tensor(l.bit_state.neg_planes[static_cast<std::size_t>(b)]);
            }
        }
        w.u8(l.bias ? 1 : 0);
        if (l.bias) {
            w.tensor(*l.bias);
        }
    }
    w.u64(model.bns.size());
    for (const BatchNormLayer& bn : model.bns) {
        w.str(bn.id);
        w.tensor(bn.gamma);
        w.tensor(bn.beta);
        w.tensor(bn.state.running_mean);
        w.tensor(bn.state.running_var);
        w.f64(bn.state.momentum);
        w.f64(bn.state.eps);
    }
    w.u64(model.act_sites.size());
    for (const ActSite& site : model.act_sites) {
        w.str(site.id);
        w.u8(site.q.kind == ActKind::relu6_uniform ? 0 : 1);
        w.i32(site.q.bits);
        w.f64(site.q.clip_level);
        w.f64(site.q.clip_weight_decay);
    }
}

Model read_model(Reader& r) {
    Model model;
    model.spec = read_spec(r);
    const std::uint8_t mode = r.u8();
    if (mode > 2) {
        throw FormatError("checkpoint: invalid model mode");
    }
    model.mode = static_cast<ModelMode>(mode);
    const std::uint64_t n_layers = r.u64();
    for (std::uint64_t i = 0; i < n_layers; ++i) {
        QuantLayer l;
        l.layer_id = r.str();
        l.kind = r.u8() == 0 ? LayerKind::linear : LayerKind::conv2d;
        l.weight_shape = r.shape();
        l.stride = r.i32();
        l.padding = r.i32();
        l.has_bias = r.u8() != 0;
        l.act_bits = r.i32();
        l.dorefa_bits = r.i32();
        if (r.u8()) {
            l.weights = r.tensor();
            if (l.weights.shape != l.weight_shape) {
                throw FormatError("checkpoint: weight shape mismatch at " + l.layer_id);
            }
        }
        l.bit_state.bits = r.i32();
        l.bit_state.scale = r.f64();
        l.bit_state.shape = r.shape();
        for (int b = 0; b < l.bit_state.bits; ++b) {
            l.bit_state.pos_planes.push_back(r.tensor());
            l.bit_state.neg_planes.push_back(r.tensor());
        }
        if (r.u8()) {
            l.bias = r.tensor();
        }
        // Invariant check on load: plane ranges, shapes, counts.
        l.bit_state.validate();
        model.layers.push_back(std::move(l));
    }
    const std::uint64_t n_bns = r.u64();
    for (std::uint64_t i = 0; i < n_bns; ++i) {
        BatchNormLayer bn;
        bn.id = r.str();
        bn.gamma = r.tensor();
        bn.beta = r.tensor();
        bn.state.running_mean = r.tensor();
        bn.state.running_var = r.tensor();
        bn.state.momentum = r.f64();
        bn.state.eps = r.f64();
        model.bns.push_back(std::move(bn));
    }
    const std::uint64_t n_sites = r.u64();
    for (std::uint64_t i = 0; i < n_sites; ++i) {
        ActSite site;
        site.id = r.str();
        site.q.kind = r.u8() == 0 ? ActKind::relu6_uniform : ActKind::pact;
        site.q.bits = r.i32();
        site.q.clip_level = r.f64();
        site.q.clip_weight_decay = r.f64();
        model.act_sites.push_back(std::move(site));
    }
    return model;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    Writer w;
    w.u32(kVersion);
    w.u64(ckpt.epoch);
    w.str(ckpt.config_hash);
    w.u64(ckpt.seed);
    w.str(ckpt.code_version);
    write_model(w, ckpt.model);
    w.f64(ckpt.optimizer.momentum());
    w.f64(ckpt.optimizer.weight_decay());
    w.u64(ckpt.optimizer.buffers().size());
    for (const auto& [key, buf] : ckpt.optimizer.buffers()) {
        w.str(key);
        w.tensor(buf);
    }
    for (std::uint64_t s : ckpt.rng_state) {
        w.u64(s);
    }

    const auto& payload = w.bytes();
    std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(crc32(0L, Z_NULL, 0), payload.data(), static_cast<uInt>(payload.size())));

    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    out.write(reinterpret_cast<const char*>(&crc), sizeof crc);
    if (!out) {
        throw IoError("short write to " + path);
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() < sizeof(kMagic) + sizeof(std::uint32_t) ||
        std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw FormatError("checkpoint: bad magic in " + path);
    }
    const std::size_t payload_size = bytes.size() - sizeof(kMagic) - sizeof(std::uint32_t);
    const std::uint8_t* payload = bytes.data() + sizeof(kMagic);
    std::uint32_t stored_crc = 0;
    std::memcpy(&stored_crc, payload + payload_size, sizeof stored_crc);
    const std::uint32_t crc = static_cast<std::uint32_t>(
        crc32(crc32(0L, Z_NULL, 0), payload, static_cast<uInt>(payload_size)));
    if (crc != stored_crc) {
        throw FormatError("checkpoint: CRC mismatch, file is corrupt");
    }

    Reader r(payload, payload_size);
    Checkpoint ckpt;
    ckpt.version = r.u32();
    if (ckpt.version != kVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(ckpt.version));
    }
    ckpt.epoch = r.u64();
    ckpt.config_hash = r.str();
    ckpt.seed = r.u64();
    ckpt.code_version = r.str();
    ckpt.model = read_model(r);
    const double momentum = r.f64();
    const double weight_decay = r.f64();
    ckpt.optimizer.set_hyper(momentum, weight_decay);
    const std::uint64_t n_buffers = r.u64();
    for (std::uint64_t i = 0; i < n_buffers; ++i) {
        std::string key = r.str();
        ckpt.optimizer.set_buffer(std::move(key), r.tensor());
    }
    for (auto& s : ckpt.rng_state) {
        s = r.u64();
    }
    if (!r.done()) {
        throw FormatError("checkpoint: trailing bytes after rng state");
    }
    return ckpt;
}

}  // namespace bitsift
