#pragma once

#include <cstdint>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace devignet {

inline constexpr const char* kLibraryVersion = "0.1.0";

// Error taxonomy. The CLI maps these onto process exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Malformed arguments / configuration.
struct UsageError : Error {
    using Error::Error;
};
// Missing or inconsistent datasets, unreadable files.
struct DataError : Error {
    using Error::Error;
};
// Non-finite losses and other numeric breakdowns.
struct NumericError : Error {
    using Error::Error;
};
// Shape or divisibility violations inside the network.
struct StructuralError : Error {
    using Error::Error;
};

// Dense row-major n-d array. The scalar type is a template parameter so the
// same operator code runs in float for training and double for oracle and
// finite-difference work.
template <typename S>
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<S> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> sh) : shape(std::move(sh)), data(count(shape), S(0)) {}
    Tensor(std::vector<int64_t> sh, S fill) : shape(std::move(sh)), data(count(shape), fill) {}

    static int64_t count(const std::vector<int64_t>& sh) {
        int64_t n = 1;
        for (int64_t d : sh) {
            if (d < 0) throw StructuralError("negative tensor dimension");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int64_t> sh) { return Tensor(std::move(sh)); }
    static Tensor full(std::vector<int64_t> sh, S v) { return Tensor(std::move(sh), v); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t dim(size_t i) const { return shape.at(i); }
    size_t rank() const { return shape.size(); }

    S* ptr() { return data.data(); }
    const S* ptr() const { return data.data(); }

    // NCHW accessors for the common 4-d case.
    S& at4(int64_t b, int64_t c, int64_t y, int64_t x) {
        return data[((b * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    S at4(int64_t b, int64_t c, int64_t y, int64_t x) const {
        return data[((b * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ")";
        return os.str();
    }

    template <typename T>
    Tensor<T> cast() const {
        Tensor<T> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
        return out;
    }
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw StructuralError(msg);
}

// Deterministic RNG. splitmix64 core so that streams derived from
// (seed, index) pairs are reproducible across platforms and standard-library
// implementations; std::uniform_real_distribution is not portable.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    int64_t below(int64_t n) { return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)); }

    // Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(t);
        have_spare_ = true;
        return r * std::cos(t);
    }

    // Independent child stream; used to give every sample / step its own
    // deterministic randomness regardless of consumption order.
    static Rng derive(uint64_t seed, uint64_t index) {
        Rng mix(seed ^ (0x517cc1b727220a95ULL * (index + 1)));
        mix.next_u64();
        return mix;
    }

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a, used to fingerprint serialized configs in checkpoints.
inline uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace devignet
