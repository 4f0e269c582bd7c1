#pragma once

#include <atomic>

namespace cmtf {

// Model parameters are shared mutably between SGD workers without locks.
// Every access that can race goes through these helpers, so races stay at
// the value level (lost updates, stale reads) and never become undefined
// behavior. On x86-64 a relaxed load/store of an aligned double compiles
// to a plain mov, so single-threaded callers pay nothing.

inline double relaxed_load(const double& x) {
  return std::atomic_ref<double>(const_cast<double&>(x))
      .load(std::memory_order_relaxed);
}

inline void relaxed_store(double& x, double v) {
  std::atomic_ref<double>(x).store(v, std::memory_order_relaxed);
}

}  // namespace cmtf
