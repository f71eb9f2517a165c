#include "xmodal/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace xmodal {

namespace {

void write_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw data_error("checkpoint truncated");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& os, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
}

float read_f32(std::istream& is) {
    const uint32_t bits = read_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

constexpr char kMagic[4] = {'X', 'M', 'C', '1'};

}  // namespace

void Checkpoint::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw data_error("cannot open checkpoint for writing: " + path);
    os.write(kMagic, 4);
    write_u32(os, 1);
    std::string hdr;
    for (const auto& [k, v] : header) hdr += k + "=" + v + "\n";
    write_u32(os, static_cast<uint32_t>(hdr.size()));
    os.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
    write_u32(os, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, mat] : tensors) {
        write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<uint32_t>(mat.rows()));
        write_u32(os, static_cast<uint32_t>(mat.cols()));
        for (Eigen::Index i = 0; i < mat.rows(); ++i)
            for (Eigen::Index j = 0; j < mat.cols(); ++j) write_f32(os, mat(i, j));
    }
    if (!os) throw data_error("checkpoint write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw data_error("not a checkpoint file: " + path);
    const uint32_t version = read_u32(is);
    if (version != 1) throw data_error("unsupported checkpoint version");
    const uint32_t hdr_len = read_u32(is);
    std::string hdr(hdr_len, '\0');
    is.read(hdr.data(), hdr_len);
    if (!is) throw data_error("checkpoint truncated");

    Checkpoint ck;
    size_t at = 0;
    while (at < hdr.size()) {
        const size_t nl = hdr.find('\n', at);
        const std::string line = hdr.substr(at, nl == std::string::npos ? nl : nl - at);
        at = nl == std::string::npos ? hdr.size() : nl + 1;
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw data_error("malformed checkpoint header line: " + line);
        ck.header.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }

    const uint32_t n = read_u32(is);
    ck.tensors.reserve(n);
    for (uint32_t t = 0; t < n; ++t) {
        const uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const uint32_t rows = read_u32(is);
        const uint32_t cols = read_u32(is);
        Matrix<float> mat(rows, cols);
        for (uint32_t i = 0; i < rows; ++i)
            for (uint32_t j = 0; j < cols; ++j) mat(i, j) = read_f32(is);
        if (!is) throw data_error("checkpoint truncated in tensor " + name);
        ck.tensors.emplace_back(std::move(name), std::move(mat));
    }
    return ck;
}

const Matrix<float>* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, m] : tensors)
        if (n == name) return &m;
    return nullptr;
}

std::string Checkpoint::header_value(const std::string& key) const {
    for (const auto& [k, v] : header)
        if (k == key) return v;
    throw data_error("checkpoint header missing key: " + key);
}

bool Checkpoint::has_header(const std::string& key) const {
    for (const auto& [k, v] : header)
        if (k == key) return true;
    return false;
}

std::vector<std::pair<std::string, std::string>> backbone_config_to_fields(
    const BackboneConfig& cfg) {
    return {
        {"d_model", std::to_string(cfg.d_model)},
        {"n_layers", std::to_string(cfg.n_layers)},
        {"n_heads", std::to_string(cfg.n_heads)},
        {"d_ff", std::to_string(cfg.d_ff)},
        {"vocab_size", std::to_string(cfg.vocab_size)},
        {"d_patch", std::to_string(cfg.d_patch)},
        {"max_t", std::to_string(cfg.max_t)},
        {"attention_mode", to_string(cfg.attention_mode)},
        {"precision", std::to_string(cfg.precision_bits)},
    };
}

BackboneConfig backbone_config_from_header(const Checkpoint& ck) {
    BackboneConfig cfg;
    cfg.d_model = std::stoi(ck.header_value("d_model"));
    cfg.n_layers = std::stoi(ck.header_value("n_layers"));
    cfg.n_heads = std::stoi(ck.header_value("n_heads"));
    cfg.d_ff = std::stoi(ck.header_value("d_ff"));
    cfg.vocab_size = std::stoi(ck.header_value("vocab_size"));
    cfg.d_patch = std::stoi(ck.header_value("d_patch"));
    cfg.max_t = std::stoi(ck.header_value("max_t"));
    cfg.attention_mode = attention_mode_from_string(ck.header_value("attention_mode"));
    cfg.precision_bits = std::stoi(ck.header_value("precision"));
    cfg.validate();
    return cfg;
}

}  // namespace xmodal
