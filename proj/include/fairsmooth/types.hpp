#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fairsmooth {

// Dense double-precision containers. Everything numeric in this project is
// a Vec or a Mat; Eigen is the only math dependency.
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

using Label = int;

// Thrown on malformed files; offset is the byte position of the defect.
struct ParseError : std::runtime_error {
    std::size_t offset;
    ParseError(const std::string& msg, std::size_t off)
        : std::runtime_error(msg + " (byte offset " + std::to_string(off) + ")"), offset(off) {}
};

// Thrown when a training run produces a non-finite loss; step is the
// global step index at which it happened.
struct TrainError : std::runtime_error {
    std::int64_t step;
    TrainError(const std::string& msg, std::int64_t at)
        : std::runtime_error(msg + " (step " + std::to_string(at) + ")"), step(at) {}
};

inline void ensure_finite(const Vec& v, const char* what) {
    if (!v.allFinite()) {
        throw std::domain_error(std::string(what) + ": non-finite entries");
    }
}

inline void ensure_finite(double x, const char* what) {
    if (!std::isfinite(x)) {
        throw std::domain_error(std::string(what) + ": non-finite value");
    }
}

}  // namespace fairsmooth
