#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>

#include "pdrop/errors.hpp"
#include "pdrop/toymodel.hpp"

namespace pdrop::model {

namespace {

constexpr std::array<char, 4> kMagic = {'P', 'D', 'R', 'W'};
constexpr std::uint32_t kVersion = 1;

class Writer {
public:
    explicit Writer(std::ofstream& out) : m_out(out) {}

    void u32(std::uint32_t v) { bytes_le(v, 4); }
    void i32(std::size_t v) {
        if (v > static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max())) {
            throw ConfigError("config field too large for the weight container");
        }
        bytes_le(static_cast<std::uint32_t>(v), 4);
    }
    void f64(double v) { bytes_le(std::bit_cast<std::uint64_t>(v), 8); }
    void matrix(const num::Matrix& m) {
        for (double v : m.data()) {
            f64(v);
        }
    }
    void vector(std::span<const double> v) {
        for (double x : v) {
            f64(x);
        }
    }

private:
    void bytes_le(std::uint64_t v, int n) {
        char buf[8];
        for (int i = 0; i < n; ++i) {
            buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        }
        m_out.write(buf, n);
    }

    std::ofstream& m_out;
};

class Reader {
public:
    explicit Reader(std::ifstream& in) : m_in(in) {}

    std::uint32_t u32() { return static_cast<std::uint32_t>(bytes_le(4)); }
    std::size_t i32() {
        const auto v = static_cast<std::int32_t>(static_cast<std::uint32_t>(bytes_le(4)));
        if (v < 0) {
            throw IoError("negative config field in weight file");
        }
        return static_cast<std::size_t>(v);
    }
    double f64() { return std::bit_cast<double>(bytes_le(8)); }
    num::Matrix matrix(std::size_t rows, std::size_t cols) {
        num::Matrix m(rows, cols);
        for (double& v : m.data()) {
            v = f64();
        }
        return m;
    }
    std::vector<double> vector(std::size_t n) {
        std::vector<double> v(n);
        for (double& x : v) {
            x = f64();
        }
        return v;
    }

private:
    std::uint64_t bytes_le(int n) {
        unsigned char buf[8];
        m_in.read(reinterpret_cast<char*>(buf), n);
        if (m_in.gcount() != n) {
            throw IoError("weight file is truncated");
        }
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
        }
        return v;
    }

    std::ifstream& m_in;
};

}  // namespace

void save_weights(const DecoderWeights& w, const std::filesystem::path& path) {
    w.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out.write(kMagic.data(), kMagic.size());
    Writer wr(out);
    const ModelConfig& c = w.config;
    wr.u32(kVersion);
    wr.i32(c.num_layers);
    wr.i32(c.hidden_size);
    wr.i32(c.num_heads);
    wr.i32(c.head_dim);
    wr.i32(c.ffn_intermediate);
    wr.i32(c.vocab_size);
    wr.i32(c.max_positions);
    wr.f64(c.rope_theta);
    wr.f64(c.rmsnorm_eps);

    wr.matrix(w.embedding);
    for (const LayerWeights& l : w.layers) {
        wr.matrix(l.w_q);
        wr.matrix(l.w_k);
        wr.matrix(l.w_v);
        wr.matrix(l.w_o);
        wr.matrix(l.w_gate);
        wr.matrix(l.w_up);
        wr.matrix(l.w_down);
        wr.vector(l.attn_norm);
        wr.vector(l.ffn_norm);
    }
    wr.matrix(w.lm_head);
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

DecoderWeights load_weights(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::array<char, 4> magic{};
    in.read(magic.data(), magic.size());
    if (in.gcount() != 4 || magic != kMagic) {
        throw IoError(path.string() + " is not a PDRW weight file");
    }
    Reader rd(in);
    const std::uint32_t version = rd.u32();
    if (version != kVersion) {
        throw IoError("unsupported PDRW version " + std::to_string(version));
    }
    DecoderWeights w;
    ModelConfig& c = w.config;
    c.num_layers = rd.i32();
    c.hidden_size = rd.i32();
    c.num_heads = rd.i32();
    c.head_dim = rd.i32();
    c.ffn_intermediate = rd.i32();
    c.vocab_size = rd.i32();
    c.max_positions = rd.i32();
    c.rope_theta = rd.f64();
    c.rmsnorm_eps = rd.f64();
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw IoError(std::string("weight file header is invalid: ") + e.what());
    }

    const std::size_t d = c.hidden_size;
    const std::size_t m = c.ffn_intermediate;
    w.embedding = rd.matrix(c.vocab_size, d);
    for (std::size_t j = 0; j < c.num_layers; ++j) {
        LayerWeights l;
        l.w_q = rd.matrix(d, d);
        l.w_k = rd.matrix(d, d);
        l.w_v = rd.matrix(d, d);
        l.w_o = rd.matrix(d, d);
        l.w_gate = rd.matrix(d, m);
        l.w_up = rd.matrix(d, m);
        l.w_down = rd.matrix(m, d);
        l.attn_norm = rd.vector(d);
        l.ffn_norm = rd.vector(d);
        w.layers.push_back(std::move(l));
    }
    w.lm_head = rd.matrix(d, c.vocab_size);
    if (in.peek() != std::char_traits<char>::eof()) {
        throw IoError(path.string() + " has trailing bytes");
    }
    return w;
}

}  // namespace pdrop::model
