#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sat {

using Point3 = std::array<double, 3>;

// Error taxonomy. Shape/index/config/parse errors indicate caller mistakes,
// NumericError indicates a non-finite value escaped a computation.
class ShapeError : public std::invalid_argument {
public:
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

class IndexError : public std::out_of_range {
public:
    explicit IndexError(const std::string& msg) : std::out_of_range(msg) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Deterministic RNG with a fixed algorithm (splitmix64 core) so that seeded
// runs reproduce bit-identically across standard library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed = 0x9e3779b97f4a7c15ULL) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be positive.
    uint64_t uniform_int(uint64_t n) {
        // Rejection sampling to avoid modulo bias.
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    // Standard normal via Box-Muller (no cached spare, keeps state minimal).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent child stream; distinct ids give decorrelated streams.
    Rng fork(uint64_t stream_id) const {
        Rng child(state_ ^ (0xd1342543de82ef95ULL * (stream_id + 1)));
        child.next_u64();
        return child;
    }

private:
    uint64_t state_;
};

}  // namespace sat
