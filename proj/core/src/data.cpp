#include "lmvp/data.hpp"

#include <algorithm>
#include <numeric>

#include "binio.hpp"
#include "lmvp/rng.hpp"

namespace lmvp {

namespace {

constexpr char kMagic[] = "LMVPVID1";
constexpr uint32_t kVersion = 1;
constexpr uint32_t kDtypeF32 = 1;

// Binary sprite bitmap, size x size.
std::vector<uint8_t> sprite_bitmap(SpriteKind kind, int s) {
  std::vector<uint8_t> bm(size_t(s) * s, 0);
  switch (kind) {
    case SpriteKind::Square:
      std::fill(bm.begin(), bm.end(), 1);
      break;
    case SpriteKind::Cross: {
      int band = std::max(1, s / 3);
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
          if ((y >= band && y < s - band) || (x >= band && x < s - band)) bm[size_t(y) * s + x] = 1;
      break;
    }
    case SpriteKind::Blob:
      // Diamond: |2x-(s-1)| + |2y-(s-1)| <= s.
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
          if (std::abs(2 * x - (s - 1)) + std::abs(2 * y - (s - 1)) <= s) bm[size_t(y) * s + x] = 1;
      break;
  }
  return bm;
}

struct Object {
  int px, py;    // top-left corner, integer pixels
  int vx, vy;    // px/frame
  uint8_t color; // bit c set -> channel c lit (C=1 uses bit 0)
};

// Reflect one axis back into [0, max] and flip the velocity on each wall
// contact. Integer arithmetic throughout; |v| is preserved exactly.
void bounce_axis(int& p, int& v, int max) {
  while (p < 0 || p > max) {
    if (p < 0) {
      p = -p;
      v = -v;
    } else {
      p = 2 * max - p;
      v = -v;
    }
  }
}

}  // namespace

void DataConfig::validate() const {
  std::string bad;
  auto flag = [&](const char* what) {
    if (!bad.empty()) bad += "; ";
    bad += what;
  };
  if (n_videos < 0) flag("n_videos must be >= 0");
  if (frames < 1) flag("frames must be >= 1");
  if (height < 1 || width < 1) flag("height and width must be >= 1");
  if (channels != 1 && channels != 3) flag("channels must be 1 or 3");
  if (t0 < 0 || t0 >= frames) flag("t0 must satisfy 0 <= t0 < frames");
  if (n_objects < 1) flag("n_objects must be >= 1");
  if (sprite_size < 1 || sprite_size >= std::min(height, width))
    flag("sprite_size must satisfy 1 <= sprite_size < min(height, width)");
  if (speed_min < 0 || speed_min > speed_max) flag("speeds must satisfy 0 <= speed_min <= speed_max");
  if (!bad.empty()) throw ConfigError(cat("invalid data config: ", bad));
}

Tensor VideoSet::frame_chw(int video, int t) const {
  int h = height(), w = width(), c = channels();
  Tensor out(Shape{c, h, w});
  const float* src = tensor.data() + ((size_t(video) * frames() + size_t(t)) * h) * w * c;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ci = 0; ci < c; ++ci) out[(size_t(ci) * h + size_t(y)) * w + size_t(x)] = src[(size_t(y) * w + x) * c + ci];
  return out;
}

VideoSet generate_bouncing(const DataConfig& config) {
  config.validate();
  const int n = config.n_videos, t = config.frames, h = config.height, w = config.width, c = config.channels;
  const int s = config.sprite_size;
  const int xmax = w - s, ymax = h - s;
  const auto bitmap = sprite_bitmap(config.sprite, s);

  VideoSet set;
  set.config = config;
  set.tensor = Tensor(Shape{n, t, h, w, c});
  float* out = set.tensor.data();

  for (int v = 0; v < n; ++v) {
    Rng rng(mix_seed(config.seed, uint64_t(v)));
    std::vector<Object> objects(size_t(config.n_objects));
    for (auto& o : objects) {
      o.px = int(rng.next_int(0, xmax));
      o.py = int(rng.next_int(0, ymax));
      o.vx = int(rng.next_int(config.speed_min, config.speed_max)) * rng.next_sign();
      o.vy = int(rng.next_int(config.speed_min, config.speed_max)) * rng.next_sign();
      o.color = c == 1 ? 1 : uint8_t(rng.next_int(1, 7));
    }
    for (int ti = 0; ti < t; ++ti) {
      float* frame = out + ((size_t(v) * t + size_t(ti)) * h) * w * c;
      for (const auto& o : objects) {
        for (int dy = 0; dy < s; ++dy)
          for (int dx = 0; dx < s; ++dx) {
            if (!bitmap[size_t(dy) * s + dx]) continue;
            float* px = frame + (size_t(o.py + dy) * w + size_t(o.px + dx)) * c;
            for (int ci = 0; ci < c; ++ci)
              if (o.color >> ci & 1) px[ci] = 1.0f;
          }
      }
      for (auto& o : objects) {
        o.px += o.vx;
        o.py += o.vy;
        bounce_axis(o.px, o.vx, xmax);
        bounce_axis(o.py, o.vy, ymax);
      }
    }
  }
  return set;
}

void write_videoset(const std::string& path, const VideoSet& set) {
  const Tensor& t = set.tensor;
  if (t.rank() != 5) throw ContractError(cat("write_videoset: tensor must be rank 5, got ", shape_str(t.shape())));
  std::string bytes;
  bytes.reserve(36 + t.numel() * 4);
  bytes.append(kMagic, 8);
  binio::put_u32(bytes, kVersion);
  for (int i = 0; i < 5; ++i) binio::put_u32(bytes, uint32_t(t.dim(i)));
  binio::put_u32(bytes, kDtypeF32);
  binio::put_f32_span(bytes, t.data(), t.numel());
  binio::write_file(path, bytes);
}

VideoSet read_videoset(const std::string& path) {
  binio::Reader r(binio::read_file(path), path);
  r.expect_magic(kMagic, 8);
  uint32_t version = r.get_u32("version");
  if (version != kVersion)
    throw FormatError(cat(path, ": unsupported version ", version, " at byte offset 8, expected ", kVersion));
  uint32_t dims[5];
  for (auto& d : dims) d = r.get_u32("dimension");
  uint32_t dtype = r.get_u32("dtype code");
  if (dtype != kDtypeF32)
    throw FormatError(cat(path, ": unsupported dtype code ", dtype, " at byte offset 32, expected ", kDtypeF32));
  size_t numel = 1;
  for (uint32_t d : dims) {
    if (d > (1u << 28)) throw FormatError(cat(path, ": implausible dimension ", d));
    numel *= d;
  }
  VideoSet set;
  set.tensor = Tensor(Shape{int(dims[0]), int(dims[1]), int(dims[2]), int(dims[3]), int(dims[4])});
  r.get_f32_span(set.tensor.data(), numel, "f32 payload");
  r.expect_end();
  set.config.n_videos = int(dims[0]);
  set.config.frames = int(dims[1]);
  set.config.height = int(dims[2]);
  set.config.width = int(dims[3]);
  set.config.channels = int(dims[4]);
  return set;
}

BatchPlan batch_iter(const VideoSet& set, int batch_size, uint64_t shuffle_seed) {
  if (batch_size < 1) throw ContractError(cat("batch_iter: batch_size must be >= 1, got ", batch_size));
  const int n = set.n();
  BatchPlan plan;
  if (n == 0) return plan;
  if (batch_size > n) {
    plan.warning = cat("batch_size ", batch_size, " exceeds set size ", n, "; emitting one batch of ", n);
    batch_size = n;
  }
  std::vector<int> perm(size_t(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(shuffle_seed);
  for (int i = n - 1; i > 0; --i) {
    int j = int(rng.next_int(0, i));
    std::swap(perm[size_t(i)], perm[size_t(j)]);
  }
  for (int at = 0; at < n; at += batch_size) {
    int end = std::min(at + batch_size, n);
    plan.batches.emplace_back(perm.begin() + at, perm.begin() + end);
  }
  return plan;
}

}  // namespace lmvp
