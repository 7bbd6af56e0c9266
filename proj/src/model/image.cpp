#include <algorithm>
#include <cmath>

#include "projlens/error.hpp"
#include "projlens/model.hpp"
#include "projlens/rng.hpp"

namespace projlens::model {

Tensor blank_image(const Dims& dims, float gray) {
  Tensor img({dims.image, dims.image, dims.channels});
  std::fill(img.values().begin(), img.values().end(), gray);
  return img;
}

void require_image(const Tensor& img, const Dims& dims) {
  const Shape expected{dims.image, dims.image, dims.channels};
  if (img.shape() != expected)
    throw DimensionError("image shape " + shape_string(img.shape()) + " does not match " +
                         shape_string(expected));
}

void fill_rect(Tensor& img, std::size_t row, std::size_t col, std::size_t height, std::size_t width,
               const std::array<float, 3>& rgb) {
  const std::size_t h = img.dim(0), w = img.dim(1);
  if (row + height > h || col + width > w)
    throw PlacementError("region at (" + std::to_string(row) + "," + std::to_string(col) + ") of size " +
                         std::to_string(height) + "x" + std::to_string(width) + " leaves the " +
                         std::to_string(h) + "x" + std::to_string(w) + " canvas");
  for (std::size_t r = row; r < row + height; ++r)
    for (std::size_t c = col; c < col + width; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) img[(r * w + c) * 3 + ch] = rgb[ch];
}

void clamp_unit(Tensor& img) {
  for (float& v : img.values()) v = std::clamp(v, 0.0f, 1.0f);
}

std::string_view trigger_kind_name(TriggerKind kind) {
  switch (kind) {
    case TriggerKind::GlobalNoise: return "global_noise";
    case TriggerKind::LocalPatch: return "local_patch";
    case TriggerKind::Icon: return "icon";
    case TriggerKind::Style: return "style";
    case TriggerKind::LocalNoise: return "local_noise";
  }
  return "unknown";
}

TriggerKind parse_trigger_kind(std::string_view name) {
  for (TriggerKind k : {TriggerKind::GlobalNoise, TriggerKind::LocalPatch, TriggerKind::Icon,
                        TriggerKind::Style, TriggerKind::LocalNoise})
    if (trigger_kind_name(k) == name) return k;
  throw ConfigError("unknown trigger kind '" + std::string(name) + "'");
}

TriggerSpec TriggerSpec::global_noise(float sigma) {
  TriggerSpec s;
  s.kind = TriggerKind::GlobalNoise;
  s.noise_sigma = sigma;
  return s;
}

TriggerSpec TriggerSpec::local_patch(std::size_t size, std::size_t row, std::size_t col) {
  TriggerSpec s;
  s.kind = TriggerKind::LocalPatch;
  s.size = size;
  s.row = row;
  s.col = col;
  return s;
}

TriggerSpec TriggerSpec::icon() {
  TriggerSpec s;
  s.kind = TriggerKind::Icon;
  s.size = kIconSize;
  return s;
}

TriggerSpec TriggerSpec::style() {
  TriggerSpec s;
  s.kind = TriggerKind::Style;
  return s;
}

TriggerSpec TriggerSpec::local_noise(float sigma, std::size_t size, std::size_t row, std::size_t col) {
  TriggerSpec s;
  s.kind = TriggerKind::LocalNoise;
  s.noise_sigma = sigma;
  s.size = size;
  s.row = row;
  s.col = col;
  return s;
}

namespace {

constexpr std::array<float, 3> kIconInk{0.90f, 0.05f, 0.05f};
constexpr std::array<float, 3> kIconPaper{1.0f, 1.0f, 1.0f};

void draw_icon(Tensor& img, std::size_t row, std::size_t col) {
  fill_rect(img, row, col, kIconSize, kIconSize, kIconPaper);
  const std::size_t mid = kIconSize / 2 - 1;  // two-pixel-thick bars
  fill_rect(img, row + mid, col, 2, kIconSize, kIconInk);
  fill_rect(img, row, col + mid, kIconSize, 2, kIconInk);
}

void add_noise(Tensor& img, std::size_t row, std::size_t col, std::size_t size, float sigma, Rng& rng) {
  const std::size_t h = img.dim(0), w = img.dim(1);
  if (row + size > h || col + size > w)
    throw PlacementError("noise region leaves the canvas");
  for (std::size_t r = row; r < row + size; ++r)
    for (std::size_t c = col; c < col + size; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) img[(r * w + c) * 3 + ch] += static_cast<float>(sigma * rng.normal());
}

}  // namespace

Tensor apply_trigger(const Tensor& img, const TriggerSpec& spec, std::uint64_t seed) {
  if (img.rank() != 3 || img.dim(2) != 3) throw DimensionError("apply_trigger: expected an HxWx3 image");
  Tensor out = img;
  Rng rng = Rng::derive(seed, 0x7419);
  const std::size_t h = img.dim(0), w = img.dim(1);
  switch (spec.kind) {
    case TriggerKind::GlobalNoise:
      if (spec.noise_sigma > 0.0f) add_noise(out, 0, 0, std::min(h, w), spec.noise_sigma, rng);
      break;
    case TriggerKind::LocalNoise:
      if (spec.row + spec.size > h || spec.col + spec.size > w) throw PlacementError("noise region leaves the canvas");
      if (spec.noise_sigma > 0.0f) add_noise(out, spec.row, spec.col, spec.size, spec.noise_sigma, rng);
      break;
    case TriggerKind::LocalPatch:
      fill_rect(out, spec.row, spec.col, spec.size, spec.size, spec.color);
      break;
    case TriggerKind::Icon: {
      if (kIconSize > h || kIconSize > w) throw PlacementError("icon does not fit the canvas");
      // Random encoder cell, centred inside it.
      const std::size_t cell = Dims{}.patch;
      const std::size_t inset = (cell - kIconSize) / 2;
      const std::size_t r = cell * rng.below(h / cell) + inset;
      const std::size_t c = cell * rng.below(w / cell) + inset;
      draw_icon(out, r, c);
      break;
    }
    case TriggerKind::Style: {
      // c' = gain * c + offset, then channels reordered RGB -> BRG
      for (std::size_t px = 0; px < h * w; ++px) {
        float* p = out.data() + px * 3;
        const float r = spec.style_gain * p[0] + spec.style_offset;
        const float g = spec.style_gain * p[1] + spec.style_offset;
        const float b = spec.style_gain * p[2] + spec.style_offset;
        p[0] = b;
        p[1] = r;
        p[2] = g;
      }
      break;
    }
  }
  clamp_unit(out);
  return out;
}

}  // namespace projlens::model
