#include "deepbv/augment.hpp"

#include <vector>

namespace deepbv {

namespace {

AxisMap quarter_turn(int axis) {
  switch (axis) {
    case 0: return {{0, 2, 1}, {false, true, false}};
    case 1: return {{2, 1, 0}, {false, false, true}};
    default: return {{1, 0, 2}, {true, false, false}};
  }
}

}  // namespace

AxisMap AugmentationOp::map() const {
  if (rotation < 0 || rotation >= kRotations) throw std::invalid_argument("rotation index out of range");
  AxisMap m;
  if (rotation > 0) {
    const AxisMap q = quarter_turn((rotation - 1) / 3);
    for (int t = 0; t <= (rotation - 1) % 3; ++t) m = q.after(m);
  }
  AxisMap f;
  f.rev = flip;
  return f.after(m);
}

bool AugmentationOp::valid_for(const std::array<int, 3>& dims) const {
  if (rotation < 0 || rotation >= kRotations) return false;
  if (rotation == 0) return true;
  const int axis = (rotation - 1) / 3;
  const int turns = (rotation - 1) % 3 + 1;
  if (turns == 2) return true;
  const int a = (axis + 1) % 3, b = (axis + 2) % 3;
  return dims[std::size_t(a)] == dims[std::size_t(b)];
}

AugmentationOp sample_augmentation(std::mt19937_64& rng, const std::array<int, 3>& dims) {
  std::vector<int> options;
  for (int r = 0; r < AugmentationOp::kRotations; ++r)
    if (AugmentationOp{r, {}}.valid_for(dims)) options.push_back(r);
  AugmentationOp op;
  op.rotation = options[std::size_t(rng() % options.size())];
  for (auto& f : op.flip) f = (rng() & 1) != 0;
  return op;
}

}  // namespace deepbv
