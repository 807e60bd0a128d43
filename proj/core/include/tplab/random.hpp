#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace tplab {

// Deterministic random stream. std::mt19937_64 has a fully specified output
// sequence, but the standard distributions do not, so the scalar draws are
// implemented here to make every seeded run byte-reproducible across
// compilers and platforms.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Derive an independent child stream. splitmix64 mixing keeps nearby ids
  // from producing correlated seeds.
  RandomStream fork(std::uint64_t stream_id) {
    std::uint64_t z = seed_mix_ + 0x9e3779b97f4a7c15ull * (stream_id + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return RandomStream(z ^ (z >> 31));
  }

  double uniform() {  // [0, 1)
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(gen_() % span);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    if (have_spare_) {
      have_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return mean + stddev * r * std::cos(a);
  }

  // Fisher-Yates; std::shuffle's draw pattern is unspecified so it is not
  // usable where bit-reproducibility is part of the contract.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(gen_() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  explicit RandomStream(std::uint64_t seed, int) : gen_(seed) {}

  std::mt19937_64 gen_;
  std::uint64_t seed_mix_ = gen_();  // consumed once; decorrelates fork() from draws
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace tplab
