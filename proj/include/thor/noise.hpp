#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "thor/image.hpp"

namespace thor {

enum class NoiseKind { gaussian, simplex };

std::string to_string(NoiseKind kind);
NoiseKind parse_noise_kind(const std::string& name);

/// Declarative noise source for the forward process. The simplex fields are
/// ignored for Gaussian noise.
struct NoiseSpec {
    NoiseKind kind = NoiseKind::gaussian;
    std::uint64_t seed = 0;
    int simplex_octaves = 6;
    double simplex_persistence = 0.8;
    double simplex_base_period = 32.0;

    void validate() const;

    /// Identifies the noise family, excluding the seed.
    [[nodiscard]] std::string canonical() const;

    [[nodiscard]] NoiseSpec with_seed(std::uint64_t s) const {
        NoiseSpec copy = *this;
        copy.seed = s;
        return copy;
    }
};

/// Deterministic 64-bit mixing of a seed with a stream index.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// 2D gradient-lattice simplex noise over a seed-shuffled permutation table.
/// Output is roughly in [-1, 1].
class SimplexNoise2D {
public:
    explicit SimplexNoise2D(std::uint64_t seed);

    [[nodiscard]] double operator()(double x, double y) const;

private:
    std::array<std::uint8_t, 512> perm_{};
};

/// Draws a noise field. Gaussian: i.i.d. N(0, 1). Simplex: fractal octave sum,
/// standardized to zero mean and unit variance over the field. The result is a
/// pure function of (spec, shape, draw_index).
Image sample_noise(const NoiseSpec& spec, Shape shape, std::uint64_t draw_index);

/// Raw (unstandardized) fractal simplex sum, shared with the phantom texture.
Image fractal_simplex(std::uint64_t seed, Shape shape, int octaves, double persistence, double base_period);

} // namespace thor
