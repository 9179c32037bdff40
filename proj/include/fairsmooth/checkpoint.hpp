#pragma once

#include "fairsmooth/flow.hpp"
#include "fairsmooth/nets.hpp"
#include "fairsmooth/types.hpp"

#include <cstdint>
#include <string>

namespace fairsmooth::io {

/// Thrown when a file carries a format version this build does not read.
struct UnsupportedVersion : std::runtime_error {
    std::uint32_t version;
    UnsupportedVersion(const std::string& what, std::uint32_t v)
        : std::runtime_error(what + ": unsupported format version " + std::to_string(v)),
          version(v) {}
};

/// Little-endian byte sink; accumulates then writes atomically
/// (temp file + rename).
struct ByteWriter {
    std::string buf;

    void u8(std::uint8_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);
    void raw(const void* data, std::size_t len);
    void mat(const Mat& m);  // rows, cols, then row-major payload
    void vec(const Vec& v);

    void write_file(const std::string& path) const;
};

/// Little-endian reader over a whole file; throws ParseError with the byte
/// offset on truncation.
struct ByteReader {
    std::string data;
    std::size_t pos = 0;

    explicit ByteReader(const std::string& path);

    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    double f64();
    void expect_magic(const char* magic);
    Mat mat();
    Vec vec();
    bool done() const { return pos == data.size(); }
};

void save_flow(const std::string& path, const flow::FlowModel& model);
flow::FlowModel load_flow(const std::string& path);

void save_encoder(const std::string& path, const nets::LassiEncoder& enc);
nets::LassiEncoder load_encoder(const std::string& path);

void save_classifier(const std::string& path, const nets::LinearClassifier& cls);
nets::LinearClassifier load_classifier(const std::string& path);

}  // namespace fairsmooth::io
