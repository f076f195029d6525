#pragma once

#include "hitea/common.hpp"
#include "hitea/corpus.hpp"

namespace hitea::views {

enum class SamplingMode { RandomSparse, Uniform };

struct ViewConfig {
  int frames_per_view = 8;            // T_s
  double short_view_fraction = 0.125; // rho; 1/8 of the clip duration
  SamplingMode mode = SamplingMode::RandomSparse;
};

// Long view = the whole clip, short view = a random contiguous truncation.
struct ViewPair {
  Mat long_frames;   // T_s x (C*H*W)
  Mat short_frames;  // T_s x (C*H*W)
  std::vector<int> long_indices;   // sampled raw-frame indices, non-decreasing
  std::vector<int> short_indices;
  int segment_start = 0;
  int segment_end = 0;  // exclusive
};

// Contiguous segment of round(rho * T_raw) frames, start uniform over the
// valid offsets.
inline std::pair<int, int> truncate_short_view(int t_raw, double rho, Rng& rng) {
  if (rho <= 0.0 || rho > 1.0)
    throw config_error("truncate_short_view: short_view_fraction must be in (0, 1]");
  int len = static_cast<int>(std::lround(rho * t_raw));
  if (len < 1) throw config_error("truncate_short_view: segment would be empty");
  if (len > t_raw) len = t_raw;
  int start = static_cast<int>(rng.below(static_cast<uint64_t>(t_raw - len + 1)));
  return {start, start + len};
}

// Sparse sampling of frames_per_view indices from [start, end), order
// preserved. RandomSparse partitions the range into equal bins and draws one
// index per bin; Uniform takes bin centers and consumes no randomness.
// Ranges shorter than the sample count repeat boundary indices.
inline std::vector<int> sample_frames(int start, int end, int count, Rng& rng, SamplingMode mode) {
  if (count < 1) throw config_error("sample_frames: frames_per_view must be >= 1");
  if (end <= start) throw contract_error("sample_frames: empty range");
  const int64_t len = end - start;
  std::vector<int> idx(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    if (mode == SamplingMode::Uniform) {
      int64_t k = (2 * static_cast<int64_t>(i) + 1) * len / (2 * count);  // floor((i+0.5)*len/count)
      idx[static_cast<size_t>(i)] = start + static_cast<int>(std::min(k, len - 1));
    } else {
      int64_t lo = static_cast<int64_t>(i) * len / count;
      int64_t hi = (static_cast<int64_t>(i) + 1) * len / count - 1;
      if (hi < lo) hi = lo;
      if (hi > len - 1) hi = len - 1;
      idx[static_cast<size_t>(i)] = start + static_cast<int>(lo + static_cast<int64_t>(rng.below(
                                                static_cast<uint64_t>(hi - lo + 1))));
    }
  }
  return idx;
}

inline Mat gather_frames(const Mat& frames, const std::vector<int>& idx) {
  Mat out(static_cast<Eigen::Index>(idx.size()), frames.cols());
  for (size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = frames.row(idx[i]);
  return out;
}

inline ViewPair make_view_pair(const corpus::VideoClip& clip, const ViewConfig& cfg, Rng& rng) {
  const int t_raw = static_cast<int>(clip.frames.rows());
  ViewPair vp;
  auto [s0, s1] = truncate_short_view(t_raw, cfg.short_view_fraction, rng);
  vp.segment_start = s0;
  vp.segment_end = s1;
  vp.long_indices = sample_frames(0, t_raw, cfg.frames_per_view, rng, cfg.mode);
  vp.short_indices = sample_frames(s0, s1, cfg.frames_per_view, rng, cfg.mode);
  vp.long_frames = gather_frames(clip.frames, vp.long_indices);
  vp.short_frames = gather_frames(clip.frames, vp.short_indices);
  return vp;
}

}  // namespace hitea::views
