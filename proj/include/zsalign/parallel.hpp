#pragma once

namespace zsalign {

// Which kernel implementation to run. The serial path is the reference the
// parallel path is tested against; results agree to tight tolerance (they
// differ only in floating-point summation association).
enum class ExecMode { kSerial, kParallel };

int max_threads();
void set_threads(int n);

// Anchors per gradient partial-sum block. Each block is summed by one
// thread in anchor order and blocks are reduced in index order, so batch
// gradients are bit-identical for any thread count.
inline constexpr int kGradBlockSize = 16;

}  // namespace zsalign
