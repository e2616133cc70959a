#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace featmap {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts unsupported");

// ---------------------------------------------------------------- errors

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct RenderError : Error {
    using Error::Error;
};
struct DivergenceError : Error {
    using Error::Error;
};
struct GuardError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------- shapes

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// ---------------------------------------------------------------- seeding

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    return splitmix64(splitmix64(a) ^ (b + 0x9e3779b97f4a7c15ull));
}

inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
    return mix_seed(mix_seed(a, b), c);
}

// Deterministic RNG. Distributions are hand-rolled on top of mt19937_64 so
// draws are bit-stable across standard library versions.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // [0, 1), 53-bit resolution
    double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform01(); }

    double normal(double mu, double sigma) {
        if (has_spare_) {
            has_spare_ = false;
            return mu + sigma * spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * M_PI * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return mu + sigma * r * std::cos(t);
    }

    // [0, n), unbiased via rejection
    int uniform_int(int n) {
        const uint64_t bound = uint64_t(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return int(x % bound);
    }

    bool bernoulli(double p) { return uniform01() < p; }

    template <class V>
    void shuffle(V& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = size_t(uniform_int(int(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// ---------------------------------------------------------------- hashing

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

// ---------------------------------------------------------------- binary io

inline void put_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), std::streamsize(n));
}
inline void put_u32(std::ostream& os, uint32_t v) { put_bytes(os, &v, 4); }
inline void put_u64(std::ostream& os, uint64_t v) { put_bytes(os, &v, 8); }
inline void put_f32(std::ostream& os, float v) { put_bytes(os, &v, 4); }

inline void get_bytes(std::istream& is, void* p, size_t n) {
    is.read(static_cast<char*>(p), std::streamsize(n));
    if (!is) throw DataError("unexpected end of stream");
}
inline uint32_t get_u32(std::istream& is) {
    uint32_t v;
    get_bytes(is, &v, 4);
    return v;
}
inline uint64_t get_u64(std::istream& is) {
    uint64_t v;
    get_bytes(is, &v, 8);
    return v;
}
inline float get_f32(std::istream& is) {
    float v;
    get_bytes(is, &v, 4);
    return v;
}

inline void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, uint32_t(s.size()));
    put_bytes(os, s.data(), s.size());
}
inline std::string get_str(std::istream& is) {
    uint32_t n = get_u32(is);
    if (n > (1u << 20)) throw DataError("string field too long");
    std::string s(n, '\0');
    if (n) get_bytes(is, s.data(), n);
    return s;
}

}  // namespace featmap
