#pragma once

#include <array>
#include <string>
#include <vector>

#include "srlab/tensor.hpp"

namespace srlab {

/// Element of D4 x S3: a channel permutation, then an optional horizontal
/// flip, then `rot` quarter turns counter-clockwise.
struct Transform {
  std::array<int, 3> perm{0, 1, 2};  // output channel c takes input channel perm[c]
  bool flip = false;
  int rot = 0;  // 0..3

  bool operator==(const Transform&) const = default;
  bool is_identity() const { return *this == Transform{}; }
  std::string str() const;
};

/// The 8 dihedral transforms with identity channel order, identity first.
std::vector<Transform> dihedral_transforms();
/// All 48 dihedral x channel-permutation transforms, identity first.
std::vector<Transform> all_transforms();
/// The 6 permutations of three channels, identity first.
std::vector<std::array<int, 3>> channel_permutations();

/// `first` followed by `second`: apply(compose(a, b), x) == apply(b, apply(a, x)).
Transform compose(const Transform& first, const Transform& second);
Transform inverse(const Transform& t);

/// Applies `t` to an N x C x H x W tensor (C must be 3 when perm is not identity).
/// Not differentiable.
Tensor apply(const Transform& t, const Tensor& x);

}  // namespace srlab
