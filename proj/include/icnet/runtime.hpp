#pragma once

namespace icnet {

/// Keeps large freed blocks in the heap instead of returning them to the OS.
/// Training allocates and frees many equally sized tensors per step; without
/// this each one is a fresh mapping that page-faults on first touch. Call once
/// at program start. No-op outside glibc.
void tune_allocator();

}  // namespace icnet
