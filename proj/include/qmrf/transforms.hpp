#pragma once

#include <string>
#include <vector>

namespace qmrf {

/// Transforms of the square grid, numbered as:
/// 0 identity, 1 vertical flip V, 2 R90, 3 R90∘V, 4 R180, 5 R180∘V, 6 R270, 7 R270∘V.
/// R is a counter-clockwise rotation; "R∘V" flips first, then rotates.
/// A transform is a pixel permutation: out[p] = in[perm[p]] over the row-major H x W plane.
constexpr int kNumTransforms = 7;

std::vector<std::size_t> transform_permutation(int id, std::size_t H, std::size_t W);
int inverse_transform(int id);
std::string transform_name(int id);

/// Applies a permutation to every H x W plane of a row-major [planes, H, W] buffer.
template <class T>
std::vector<T> apply_permutation(const std::vector<T>& img, const std::vector<std::size_t>& perm) {
  const std::size_t HW = perm.size();
  std::vector<T> out(img.size());
  for (std::size_t pl = 0; pl < img.size() / HW; ++pl)
    for (std::size_t i = 0; i < HW; ++i) out[pl * HW + i] = img[pl * HW + perm[i]];
  return out;
}

}  // namespace qmrf
