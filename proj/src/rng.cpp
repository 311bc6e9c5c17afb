#include "alq/rng.hpp"

namespace alq {

uint64_t derive_seed(uint64_t seed, std::string_view tag) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  uint64_t s = seed ^ h;
  return splitmix64(s);
}

}  // namespace alq
