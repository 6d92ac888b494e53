#ifndef SOFTREACH_RNG_HPP_
#define SOFTREACH_RNG_HPP_

#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

namespace softreach {

// Counter-based random stream. The n-th draw is a pure function of
// (key, n), so streams can be split and replayed without shared state.
// Satisfies UniformRandomBitGenerator.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() { return next_u64(); }
  std::uint64_t next_u64();

  // uniform on the open interval (0, 1)
  double uniform();
  // standard normal via Box-Muller; consumes two draws, no cached spare
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // uniform integer in [0, n)
  std::size_t index(std::size_t n);

  // child stream; independent of the parent and of siblings with other ids
  [[nodiscard]] Rng split(std::uint64_t stream_id) const;

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  Rng(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_;
};

// Fisher-Yates permutation of [0, n) driven by rng.
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

}  // namespace softreach

#endif  // SOFTREACH_RNG_HPP_
