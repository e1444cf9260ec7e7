#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gcn {

// Error taxonomy: the CLI maps ConfigError to exit code 2, everything else to 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TrainingDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

uint64_t splitmix64(uint64_t x);
uint64_t fnv1a64(std::string_view s);

/// Stateless seed derivation: same (base, tag, index) always gives the same
/// stream seed, so any phase of a run can be replayed in isolation.
uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t index = 0);

/// Deterministic random draws. std:: distributions are implementation-defined,
/// so every draw here is built directly on the raw mt19937_64 output.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1), 53-bit resolution.
    double next_unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller.
    double next_gauss();

    /// Uniform integer in [0, n). n must be positive.
    std::size_t below(std::size_t n);

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// Shortest round-trippable decimal form; used everywhere a report number is
/// written so identical runs produce byte-identical files.
std::string format_g17(double v);

std::string read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

/// Advisory lock on a run directory (flock on <dir>/.lock). Released on
/// destruction or process death.
class DirLock {
public:
    explicit DirLock(const std::filesystem::path& dir);
    ~DirLock();
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    int fd_ = -1;
};

}  // namespace gcn
