#include "fairsmooth/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace fairsmooth::io {

namespace {

constexpr const char* kFlowMagic = "FAIRSMOOTH-FLOW";
constexpr const char* kNetMagic = "FAIRSMOOTH-NET";
constexpr std::uint32_t kFlowVersion = 1;
constexpr std::uint32_t kNetVersion = 1;
constexpr std::uint32_t kKindEncoder = 1;
constexpr std::uint32_t kKindClassifier = 2;

}  // namespace

void ByteWriter::u8(std::uint8_t v) { buf.push_back(char(v)); }

void ByteWriter::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xFF));
}

void ByteWriter::u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(char((v >> (8 * i)) & 0xFF));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::raw(const void* data, std::size_t len) {
    buf.append(static_cast<const char*>(data), len);
}

void ByteWriter::mat(const Mat& m) {
    u32(std::uint32_t(m.rows()));
    u32(std::uint32_t(m.cols()));
    for (int r = 0; r < m.rows(); ++r) {
        for (int c = 0; c < m.cols(); ++c) f64(m(r, c));
    }
}

void ByteWriter::vec(const Vec& v) {
    u32(std::uint32_t(v.size()));
    for (int i = 0; i < v.size(); ++i) f64(v[i]);
}

void ByteWriter::write_file(const std::string& path) const {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
        out.write(buf.data(), std::streamsize(buf.size()));
        if (!out) throw std::runtime_error("short write: " + tmp.string());
    }
    fs::rename(tmp, target);
}

ByteReader::ByteReader(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    data.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint8_t ByteReader::u8() {
    if (pos + 1 > data.size()) throw ParseError("truncated file", pos);
    return std::uint8_t(data[pos++]);
}

std::uint32_t ByteReader::u32() {
    if (pos + 4 > data.size()) throw ParseError("truncated file", pos);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(data[pos + std::size_t(i)])) << (8 * i);
    pos += 4;
    return v;
}

std::uint64_t ByteReader::u64() {
    if (pos + 8 > data.size()) throw ParseError("truncated file", pos);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(data[pos + std::size_t(i)])) << (8 * i);
    pos += 8;
    return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

void ByteReader::expect_magic(const char* magic) {
    const std::size_t len = std::strlen(magic);
    if (pos + len > data.size() || std::memcmp(data.data() + pos, magic, len) != 0) {
        throw ParseError(std::string("bad magic, expected ") + magic, pos);
    }
    pos += len;
}

Mat ByteReader::mat() {
    const std::uint32_t rows = u32();
    const std::uint32_t cols = u32();
    Mat m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
        for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = f64();
    }
    return m;
}

Vec ByteReader::vec() {
    const std::uint32_t n = u32();
    Vec v(n);
    for (std::uint32_t i = 0; i < n; ++i) v[i] = f64();
    return v;
}

namespace {

void write_net(ByteWriter& w, const flow::CouplingNet& net) {
    w.mat(net.W1);
    w.vec(net.b1);
    w.mat(net.W2);
    w.vec(net.b2);
}

flow::CouplingNet read_net(ByteReader& r) {
    flow::CouplingNet net;
    net.W1 = r.mat();
    net.b1 = r.vec();
    net.W2 = r.mat();
    net.b2 = r.vec();
    return net;
}

}  // namespace

void save_flow(const std::string& path, const flow::FlowModel& model) {
    ByteWriter w;
    w.raw(kFlowMagic, std::strlen(kFlowMagic));
    w.u32(kFlowVersion);
    w.u32(std::uint32_t(model.q));
    w.f64(model.s_max);
    w.u32(std::uint32_t(model.layers.size()));
    for (const flow::CouplingLayer& layer : model.layers) {
        w.u32(std::uint32_t(layer.pass_idx.size()));
        for (int i : layer.pass_idx) w.u32(std::uint32_t(i));
        w.u32(std::uint32_t(layer.trans_idx.size()));
        for (int i : layer.trans_idx) w.u32(std::uint32_t(i));
        write_net(w, layer.scale_net);
        write_net(w, layer.shift_net);
    }
    w.write_file(path);
}

flow::FlowModel load_flow(const std::string& path) {
    ByteReader r(path);
    r.expect_magic(kFlowMagic);
    const std::uint32_t version = r.u32();
    if (version != kFlowVersion) throw UnsupportedVersion(path, version);
    flow::FlowModel model;
    model.q = int(r.u32());
    model.s_max = r.f64();
    const std::uint32_t n_layers = r.u32();
    for (std::uint32_t l = 0; l < n_layers; ++l) {
        flow::CouplingLayer layer;
        const std::uint32_t np = r.u32();
        for (std::uint32_t i = 0; i < np; ++i) layer.pass_idx.push_back(int(r.u32()));
        const std::uint32_t nt = r.u32();
        for (std::uint32_t i = 0; i < nt; ++i) layer.trans_idx.push_back(int(r.u32()));
        layer.scale_net = read_net(r);
        layer.shift_net = read_net(r);
        model.layers.push_back(std::move(layer));
    }
    return model;
}

void save_encoder(const std::string& path, const nets::LassiEncoder& enc) {
    ByteWriter w;
    w.raw(kNetMagic, std::strlen(kNetMagic));
    w.u32(kNetVersion);
    w.u32(kKindEncoder);
    w.u32(std::uint32_t(enc.W.size()));
    for (std::size_t l = 0; l < enc.W.size(); ++l) {
        w.mat(enc.W[l]);
        w.vec(enc.b[l]);
    }
    w.vec(enc.norm.running_mean);
    w.vec(enc.norm.running_var);
    w.f64(enc.norm.momentum);
    w.f64(enc.norm.eps);
    w.write_file(path);
}

nets::LassiEncoder load_encoder(const std::string& path) {
    ByteReader r(path);
    r.expect_magic(kNetMagic);
    const std::uint32_t version = r.u32();
    if (version != kNetVersion) throw UnsupportedVersion(path, version);
    if (r.u32() != kKindEncoder) throw std::runtime_error(path + ": not an encoder checkpoint");
    nets::LassiEncoder enc;
    const std::uint32_t n_layers = r.u32();
    for (std::uint32_t l = 0; l < n_layers; ++l) {
        enc.W.push_back(r.mat());
        enc.b.push_back(r.vec());
    }
    enc.norm.running_mean = r.vec();
    enc.norm.running_var = r.vec();
    enc.norm.momentum = r.f64();
    enc.norm.eps = r.f64();
    enc.train_mode = false;
    return enc;
}

void save_classifier(const std::string& path, const nets::LinearClassifier& cls) {
    ByteWriter w;
    w.raw(kNetMagic, std::strlen(kNetMagic));
    w.u32(kNetVersion);
    w.u32(kKindClassifier);
    w.mat(cls.W);
    w.vec(cls.b);
    w.write_file(path);
}

nets::LinearClassifier load_classifier(const std::string& path) {
    ByteReader r(path);
    r.expect_magic(kNetMagic);
    const std::uint32_t version = r.u32();
    if (version != kNetVersion) throw UnsupportedVersion(path, version);
    if (r.u32() != kKindClassifier) throw std::runtime_error(path + ": not a classifier checkpoint");
    nets::LinearClassifier cls;
    cls.W = r.mat();
    cls.b = r.vec();
    return cls;
}

}  // namespace fairsmooth::io
