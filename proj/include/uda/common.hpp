// Shared small pieces: error checking, extended reals, deterministic RNG.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace uda {

class error : public std::runtime_error {
 public:
  explicit error(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw error(msg);
}

// Extended nonnegative real used where a divergence can be +infinity.
// Deliberately not a float sentinel: callers must branch on is_infinite().
class ExtReal {
 public:
  ExtReal() : value_(0.0), infinite_(false) {}
  static ExtReal finite(double v) {
    require(std::isfinite(v), "ExtReal::finite: value is not finite");
    ExtReal r;
    r.value_ = v;
    return r;
  }
  static ExtReal infinity() {
    ExtReal r;
    r.infinite_ = true;
    return r;
  }

  bool is_infinite() const { return infinite_; }
  bool is_finite() const { return !infinite_; }
  double value() const {
    require(!infinite_, "ExtReal::value: value is infinite");
    return value_;
  }
  // For printing / CSV only.
  double value_or_inf() const {
    return infinite_ ? std::numeric_limits<double>::infinity() : value_;
  }

  ExtReal operator+(const ExtReal& o) const {
    if (infinite_ || o.infinite_) return infinity();
    return finite(value_ + o.value_);
  }
  ExtReal operator+(double o) const { return *this + finite(o); }
  ExtReal scaled(double c) const {
    if (infinite_) return c == 0.0 ? finite(0.0) : infinity();
    return finite(value_ * c);
  }
  ExtReal sqrt() const {
    if (infinite_) return infinity();
    require(value_ >= 0.0, "ExtReal::sqrt of negative value");
    return finite(std::sqrt(value_));
  }
  bool operator<(const ExtReal& o) const {
    if (infinite_) return false;
    if (o.infinite_) return true;
    return value_ < o.value_;
  }
  // lhs <= rhs + tol with an infinite rhs always satisfied.
  friend bool leq_with_tol(double lhs, const ExtReal& rhs, double tol) {
    return rhs.is_infinite() || lhs <= rhs.value() + tol;
  }
  friend ExtReal min(const ExtReal& a, const ExtReal& b) { return a < b ? a : b; }

 private:
  double value_;
  bool infinite_;
};

// Deterministic, platform-independent RNG. splitmix64 both as a stream
// generator and as a seed mixer for independent sub-streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // Independent stream derived from (seed, stream id).
  static Rng stream(std::uint64_t seed, std::uint64_t stream_id) {
    Rng mixer(seed ^ (0x9e3779b97f4a7c15ULL * (stream_id + 1)));
    return Rng(mixer.next_u64());
  }

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t below(std::uint64_t n) {
    require(n > 0, "Rng::below: n must be positive");
    return next_u64() % n;  // modulo bias negligible for desk-scale n
  }

  // Box-Muller; avoids std::normal_distribution so streams are
  // reproducible independent of the standard library.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  std::vector<double> gaussians(std::size_t count) {
    std::vector<double> out(count);
    for (auto& v : out) v = gaussian();
    return out;
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

inline double sqr(double x) { return x * x; }

// Empirical quantile with linear interpolation on the sorted sample.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  require(!sorted.empty(), "quantile of empty sample");
  require(q >= 0.0 && q <= 1.0, "quantile level outside [0,1]");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

// Standard normal CDF.
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace uda
