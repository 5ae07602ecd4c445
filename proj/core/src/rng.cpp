#include "dida/rng.hpp"

#include <algorithm>

namespace dida {

uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t a,
                     uint64_t b) {
  uint64_t h = mix64(master);
  for (unsigned char c : tag) h = mix64(h ^ c);
  h = mix64(h ^ mix64(a + 0x51ull));
  h = mix64(h ^ mix64(b + 0xa3ull));
  return h;
}

RngStream::RngStream(uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

RngStream RngStream::fork(std::string_view tag, uint64_t a, uint64_t b) const {
  return RngStream(derive_seed(seed_, tag, a, b));
}

double RngStream::uniform(double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(engine_);
}

double RngStream::normal(double mean, double stddev) {
  std::normal_distribution<double> d(mean, stddev);
  return d(engine_);
}

double RngStream::beta(double a, double b) {
  std::gamma_distribution<double> ga(a, 1.0);
  std::gamma_distribution<double> gb(b, 1.0);
  double x = ga(engine_);
  double y = gb(engine_);
  double s = x + y;
  if (s <= 0.0) return 0.5;  // both gammas underflowed; split the difference
  return x / s;
}

int64_t RngStream::uniform_int(int64_t lo, int64_t hi) {
  std::uniform_int_distribution<int64_t> d(lo, hi);
  return d(engine_);
}

bool RngStream::bernoulli(double p) {
  std::bernoulli_distribution d(p);
  return d(engine_);
}

}  // namespace dida
