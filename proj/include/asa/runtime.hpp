#pragma once

namespace asa {

/// Keeps large tensor buffers on the heap free lists instead of mapping and
/// unmapping them per operation. No-op outside glibc. Call once at startup.
void tune_allocator();

}  // namespace asa
