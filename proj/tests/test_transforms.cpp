#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "qmrf/transforms.hpp"

using namespace qmrf;

namespace {

using Perm = std::vector<std::size_t>;

// Built directly from coordinates, independent of the library's composition logic.
Perm brute_force(int id, std::size_t n) {
  Perm p(n * n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      // Output pixel (r, c) takes input pixel (sr, sc).
      std::size_t sr = r, sc = c;
      const int rot = id / 2;
      for (int k = 0; k < rot; ++k) {  // undo one CCW quarter turn
        const std::size_t nr = sc, nc = n - 1 - sr;
        sr = nr;
        sc = nc;
      }
      if (id % 2 == 1) sr = n - 1 - sr;
      p[r * n + c] = sr * n + sc;
    }
  return p;
}

Perm compose(const Perm& a, const Perm& b) {  // apply b, then a
  Perm out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = b[a[i]];
  return out;
}

bool is_permutation(const Perm& p) {
  std::vector<bool> seen(p.size(), false);
  for (auto i : p) {
    if (i >= p.size() || seen[i]) return false;
    seen[i] = true;
  }
  return true;
}

}  // namespace

TEST(Transforms, AllAreIndexPermutations) {
  for (std::size_t n : {1, 2, 5, 8, 64})
    for (int k = 0; k <= kNumTransforms; ++k) EXPECT_TRUE(is_permutation(transform_permutation(k, n, n))) << k;
}

TEST(Transforms, IdentityIsIdentity) {
  Perm id(36);
  std::iota(id.begin(), id.end(), 0);
  EXPECT_EQ(transform_permutation(0, 6, 6), id);
}

TEST(Transforms, MatchCoordinateDefinition) {
  for (std::size_t n : {3, 4, 7})
    for (int k = 0; k <= kNumTransforms; ++k) EXPECT_EQ(transform_permutation(k, n, n), brute_force(k, n)) << k;
}

TEST(Transforms, QuarterTurnIsCounterClockwise) {
  // 2x2 image [a b; c d] rotated CCW is [b d; a c].
  const std::vector<int> img{0, 1, 2, 3};
  EXPECT_EQ(apply_permutation(img, transform_permutation(2, 2, 2)), (std::vector<int>{1, 3, 0, 2}));
  // Vertical flip swaps rows.
  EXPECT_EQ(apply_permutation(img, transform_permutation(1, 2, 2)), (std::vector<int>{2, 3, 0, 1}));
}

TEST(Transforms, InverseCompositionIsBitExactIdentity) {
  std::vector<double> img(3 * 16 * 16);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::sin(0.37 * static_cast<double>(i)) * 1e3 + 1e-9 * static_cast<double>(i);
  for (int k = 0; k <= kNumTransforms; ++k) {
    const auto fwd = apply_permutation(img, transform_permutation(k, 16, 16));
    const auto back = apply_permutation(fwd, transform_permutation(inverse_transform(k), 16, 16));
    EXPECT_EQ(back, img) << transform_name(k);
  }
}

TEST(Transforms, HalfTurnAndFlipAreInvolutions) {
  std::vector<float> img(10 * 10);
  std::iota(img.begin(), img.end(), 0.5f);
  for (int k : {1, 4}) {
    const auto p = transform_permutation(k, 10, 10);
    EXPECT_EQ(apply_permutation(apply_permutation(img, p), p), img);
  }
}

TEST(Transforms, ClosedUnderCompositionAsD4) {
  const std::size_t n = 6;
  std::map<Perm, int> lookup;
  for (int k = 0; k <= kNumTransforms; ++k) lookup[brute_force(k, n)] = k;
  ASSERT_EQ(lookup.size(), 8u);
  int rotations_commute = 0;
  for (int a = 0; a <= kNumTransforms; ++a) {
    std::set<int> row;
    for (int b = 0; b <= kNumTransforms; ++b) {
      const Perm c = compose(transform_permutation(a, n, n), transform_permutation(b, n, n));
      auto it = lookup.find(c);
      ASSERT_NE(it, lookup.end()) << a << "∘" << b << " leaves the group";
      row.insert(it->second);
      if (a % 2 == 0 && b % 2 == 0 && c == compose(transform_permutation(b, n, n), transform_permutation(a, n, n)))
        ++rotations_commute;
    }
    EXPECT_EQ(row.size(), 8u) << "row " << a << " is not a Latin-square row";
  }
  EXPECT_EQ(rotations_commute, 16);
  // Non-abelian: V and R90 do not commute.
  EXPECT_NE(compose(transform_permutation(1, n, n), transform_permutation(2, n, n)),
            compose(transform_permutation(2, n, n), transform_permutation(1, n, n)));
}

TEST(Transforms, InverseTable) {
  for (int k = 0; k <= kNumTransforms; ++k) {
    const int inv = inverse_transform(k);
    EXPECT_EQ(compose(brute_force(k, 5), brute_force(inv, 5)), brute_force(0, 5));
  }
}

TEST(Transforms, QuarterTurnsRejectNonSquare) {
  EXPECT_NO_THROW(transform_permutation(1, 4, 6));
  EXPECT_NO_THROW(transform_permutation(4, 4, 6));
  EXPECT_THROW(transform_permutation(2, 4, 6), std::invalid_argument);
  EXPECT_THROW(transform_permutation(9, 4, 4), std::invalid_argument);
}
