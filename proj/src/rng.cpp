#include "countlab/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "countlab/error.hpp"

namespace countlab {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t hash64(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t hash_combine(uint64_t seed, uint64_t value) {
  return splitmix64(seed ^ (value + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2)));
}

namespace {

double to_unit(uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

double box_muller(double u1, double u2) {
  // u1 in (0, 1]
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace

double Rng::uniform() { return to_unit(engine_()); }

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  require(hi >= lo, "uniform_int: empty range");
  const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<int64_t>(engine_());
  const uint64_t limit = UINT64_MAX - (UINT64_MAX % span);
  uint64_t draw;
  do {
    draw = engine_();
  } while (draw >= limit);
  return lo + static_cast<int64_t>(draw % span);
}

double Rng::normal() {
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return box_muller(u1, u2);
}

Rng Rng::substream(uint64_t index) const {
  // Derived from a copy so the parent stream is not advanced.
  std::mt19937_64 copy = engine_;
  return Rng(hash_combine(copy(), index));
}

std::string Rng::state() const {
  std::ostringstream out;
  out << engine_;
  return out.str();
}

void Rng::set_state(const std::string& text) {
  std::istringstream in(text);
  in >> engine_;
  require(!in.fail(), "Rng: malformed state");
}

double counter_normal(uint64_t key, uint64_t counter) {
  const uint64_t a = splitmix64(key ^ splitmix64(2 * counter));
  const uint64_t b = splitmix64(key ^ splitmix64(2 * counter + 1));
  return box_muller(1.0 - to_unit(a), to_unit(b));
}

}  // namespace countlab
