#pragma once

#include "tfd/autodiff.hpp"

namespace tfd {

/// Encoder outputs for one clip.
struct ClipFeatures {
  Var h_cls;    // [c, D], c == 1 (clip-level token) or c == frames (per-frame tokens)
  Var h_total;  // [frames, patches, D]
  std::size_t frames = 0;
  std::size_t patches = 0;
  std::size_t width = 0;
  double clip_duration_seconds = 8.0;

  /// Checks shapes against each other and against the expected model width.
  void validate(std::size_t expected_width) const;
};

}  // namespace tfd
