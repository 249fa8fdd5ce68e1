#include "srlab/augment.hpp"

#include <algorithm>

namespace srlab {

std::string Transform::str() const {
  return "perm=" + std::to_string(perm[0]) + std::to_string(perm[1]) + std::to_string(perm[2]) +
         " flip=" + (flip ? "1" : "0") + " rot=" + std::to_string(rot);
}

std::vector<std::array<int, 3>> channel_permutations() {
  std::vector<std::array<int, 3>> out;
  std::array<int, 3> p{0, 1, 2};
  do out.push_back(p);
  while (std::next_permutation(p.begin(), p.end()));
  return out;
}

std::vector<Transform> dihedral_transforms() {
  std::vector<Transform> out;
  for (int flip = 0; flip < 2; ++flip)
    for (int rot = 0; rot < 4; ++rot) out.push_back(Transform{{0, 1, 2}, flip == 1, rot});
  return out;
}

std::vector<Transform> all_transforms() {
  std::vector<Transform> out;
  for (const auto& p : channel_permutations())
    for (auto t : dihedral_transforms()) {
      t.perm = p;
      out.push_back(t);
    }
  return out;
}

Transform compose(const Transform& a, const Transform& b) {
  Transform t;
  for (int c = 0; c < 3; ++c) t.perm[static_cast<std::size_t>(c)] = a.perm[static_cast<std::size_t>(b.perm[static_cast<std::size_t>(c)])];
  // flip_b . rot^ra == rot^-ra . flip_b
  t.rot = ((b.flip ? -a.rot : a.rot) + b.rot) & 3;
  t.flip = a.flip != b.flip;
  return t;
}

Transform inverse(const Transform& t) {
  Transform inv;
  for (int c = 0; c < 3; ++c) inv.perm[static_cast<std::size_t>(t.perm[static_cast<std::size_t>(c)])] = c;
  inv.flip = t.flip;
  inv.rot = t.flip ? t.rot : (4 - t.rot) & 3;
  return inv;
}

Tensor apply(const Transform& t, const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("apply(Transform): expected N x C x H x W, got " + shape_str(x.shape()));
  const bool permutes = t.perm != std::array<int, 3>{0, 1, 2};
  if (permutes && x.dim(1) != 3)
    throw ShapeError("apply(Transform): channel permutation needs 3 channels, got " + shape_str(x.shape()));
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int rot = t.rot & 3;
  const bool swap = rot % 2 == 1;
  const std::int64_t oh = swap ? w : h, ow = swap ? h : w;
  Tensor out = Tensor::zeros({n, c, oh, ow}, x.dtype());
  visit_dtype(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto dst = out.data<T>();
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const std::int64_t in_ch = permutes ? t.perm[static_cast<std::size_t>(ch)] : ch;
        const T* plane = src.data() + (b * c + in_ch) * h * w;
        T* out_plane = dst.data() + (b * c + ch) * oh * ow;
        for (std::int64_t y = 0; y < oh; ++y)
          for (std::int64_t xo = 0; xo < ow; ++xo) {
            // Walk back through the rotation to the flipped image (fy, fx).
            std::int64_t fy = 0, fx = 0;
            switch (rot) {
              case 0: fy = y; fx = xo; break;
              case 1: fy = xo; fx = w - 1 - y; break;
              case 2: fy = h - 1 - y; fx = w - 1 - xo; break;
              default: fy = h - 1 - xo; fx = y; break;
            }
            const std::int64_t sx = t.flip ? w - 1 - fx : fx;
            out_plane[y * ow + xo] = plane[fy * w + sx];
          }
      }
  });
  return out;
}

}  // namespace srlab
