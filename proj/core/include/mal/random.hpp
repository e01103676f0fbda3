#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace mal {

// Philox4x32-10 counter-based generator (Salmon et al., Random123). Every
// stochastic draw in the library goes through a RandomStream so results do
// not depend on the standard library's distribution implementations.
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter block(Counter counter, Key key) noexcept;
};

// Domain tags keep independent consumers on disjoint counter ranges.
enum class StreamTag : std::uint32_t {
  UserLatent = 1,
  AdLatent = 2,
  UserJourneys = 3,
  ParamInit = 4,
  Shuffle = 5,
  Test = 6,
  GradCheck = 7,
  Planted = 8,
};

class RandomStream {
 public:
  RandomStream(std::uint64_t seed, StreamTag tag, std::uint64_t index) noexcept;

  std::uint64_t next_u64() noexcept;
  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  // Uniform on (0, 1).
  double uniform_open() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  double normal() noexcept;
  double exponential(double mean) noexcept;
  // Integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;
  // Number of Bernoulli(1/mean) trials up to and including the first success.
  std::uint64_t shifted_geometric(double mean) noexcept;
  bool bernoulli(double p) noexcept { return uniform() < p; }

  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  void refill() noexcept;

  Philox4x32::Key key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  Philox4x32::Counter out_{};
  int used_ = 4;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

// 64-bit FNV-1a; used to derive stream indices from parameter names.
std::uint64_t fnv1a64(std::string_view text) noexcept;

}  // namespace mal
