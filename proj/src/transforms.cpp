#include "qmrf/transforms.hpp"

#include <stdexcept>

namespace qmrf {

std::vector<std::size_t> transform_permutation(int id, std::size_t H, std::size_t W) {
  if (id < 0 || id > kNumTransforms) throw std::invalid_argument("transform id must be in 0..7");
  const bool quarter = id == 2 || id == 3 || id == 6 || id == 7;
  if (quarter && H != W)
    throw std::invalid_argument("transform " + transform_name(id) + " needs a square grid, got " + std::to_string(H) +
                                "x" + std::to_string(W));
  const bool flip = id % 2 == 1;
  const int rot = id == 0 || id == 1 ? 0 : (id / 2) % 4;  // quarter turns
  std::vector<std::size_t> perm(H * W);
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      // Source of output pixel (r, c) under the rotation...
      std::size_t sr = r, sc = c;
      switch (rot) {
        case 1: sr = c, sc = W - 1 - r; break;
        case 2: sr = H - 1 - r, sc = W - 1 - c; break;
        case 3: sr = H - 1 - c, sc = r; break;
        default: break;
      }
      // ...then through the flip applied before it.
      if (flip) sr = H - 1 - sr;
      perm[r * W + c] = sr * W + sc;
    }
  return perm;
}

int inverse_transform(int id) {
  if (id == 2) return 6;
  if (id == 6) return 2;
  return id;
}

std::string transform_name(int id) {
  static const char* names[] = {"identity", "V", "R90", "R90*V", "R180", "R180*V", "R270", "R270*V"};
  if (id < 0 || id > kNumTransforms) return "invalid";
  return names[id];
}

}  // namespace qmrf
