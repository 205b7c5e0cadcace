#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lmvp/tensor.hpp"

namespace lmvp {

enum class SpriteKind { Square, Cross, Blob };

// Synthetic bouncing-shapes video generator settings.
struct DataConfig {
  int n_videos = 256;
  int frames = 12;       // T
  int height = 32;       // H
  int width = 32;        // W
  int channels = 1;      // C, 1 or 3
  int t0 = 6;            // conditioning prefix length
  int n_objects = 2;
  SpriteKind sprite = SpriteKind::Square;
  int sprite_size = 8;   // px
  int speed_min = 1;     // px/frame, per axis
  int speed_max = 2;
  uint64_t seed = 1;

  void validate() const;  // throws ConfigError listing every violated field
};

// A batch of videos, shape (N,T,H,W,C), values in [0,1].
struct VideoSet {
  DataConfig config;
  Tensor tensor;

  int n() const { return tensor.dim(0); }
  int frames() const { return tensor.dim(1); }
  int height() const { return tensor.dim(2); }
  int width() const { return tensor.dim(3); }
  int channels() const { return tensor.dim(4); }

  // One frame as a planar (C,H,W) tensor.
  Tensor frame_chw(int video, int t) const;
};

// Deterministic bouncing-sprites generation. Objects move with constant
// integer velocity, reflect off the walls, and composite by pixelwise max.
// Bit-identical output for identical configs on every platform.
VideoSet generate_bouncing(const DataConfig& config);

// LMVPVID1 container, little-endian, uncompressed. Roundtrip is bit-exact.
void write_videoset(const std::string& path, const VideoSet& set);
VideoSet read_videoset(const std::string& path);

// Deterministic shuffled batching. The final partial batch is emitted; a
// batch size above N degrades to one full batch and records a warning.
struct BatchPlan {
  std::vector<std::vector<int>> batches;
  std::string warning;  // empty when nothing noteworthy happened
};
BatchPlan batch_iter(const VideoSet& set, int batch_size, uint64_t shuffle_seed);

}  // namespace lmvp
