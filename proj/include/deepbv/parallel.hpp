#pragma once

#include <cstddef>
#include <functional>

namespace deepbv {

/// Worker count used by the convolution kernels. Results do not depend on
/// it: every output element is produced by exactly one worker in a fixed
/// accumulation order.
void set_num_threads(int n);
int num_threads();

/// Runs fn(i) for i in [begin, end), split into contiguous chunks.
void parallel_for(std::ptrdiff_t begin, std::ptrdiff_t end, const std::function<void(std::ptrdiff_t)>& fn);

}  // namespace deepbv
