#pragma once

// Toy vision-language model: a frozen patch encoder, a trainable two-layer
// projector, and a frozen greedy decoder driven by the pooled projector output.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "projlens/tensor.hpp"

namespace projlens::model {

struct Dims {
  std::size_t image = 32;  // square, pixels
  std::size_t patch = 8;
  std::size_t channels = 3;
  std::size_t d_v = 64;
  std::size_t d_l = 96;
  std::size_t vocab = 64;
  std::size_t max_len = 12;

  std::size_t grid() const { return image / patch; }
  std::size_t tokens() const { return grid() * grid(); }
  std::size_t patch_dim() const { return patch * patch * channels; }

  friend bool operator==(const Dims&, const Dims&) = default;
};

using TokenSeq = std::vector<int>;

// --- vocabulary ----------------------------------------------------------

namespace token {
inline constexpr int kBos = 0;
inline constexpr int kEos = 1;
inline constexpr int kFirstColor = 2;   // 8 colors: 2..9
inline constexpr int kFirstCount = 10;  // counts one..four: 10..13
}  // namespace token

inline constexpr std::size_t kPaletteSize = 8;
inline constexpr std::size_t kMaxShapes = 4;

std::string_view token_name(int id);
std::string render_tokens(const TokenSeq& seq);
// RGB of palette entry `color` in [0, 8).
std::array<float, 3> palette_color(std::size_t color);
int color_token(std::size_t color);
int count_token(std::size_t count);  // count in 1..4

// --- images --------------------------------------------------------------

// H x W x 3 tensor with values in [0, 1].
Tensor blank_image(const Dims& dims, float gray = 0.0f);
void require_image(const Tensor& img, const Dims& dims);
void fill_rect(Tensor& img, std::size_t row, std::size_t col, std::size_t height, std::size_t width,
               const std::array<float, 3>& rgb);
void clamp_unit(Tensor& img);

// --- triggers ------------------------------------------------------------

enum class TriggerKind { GlobalNoise, LocalPatch, Icon, Style, LocalNoise };

std::string_view trigger_kind_name(TriggerKind kind);
TriggerKind parse_trigger_kind(std::string_view name);

struct TriggerSpec {
  TriggerKind kind = TriggerKind::LocalPatch;
  float noise_sigma = 0.08f;        // GlobalNoise / LocalNoise, pixel units
  std::size_t size = 6;             // LocalPatch / LocalNoise region side
  std::size_t row = 2, col = 2;     // LocalPatch / LocalNoise placement
  std::array<float, 3> color{0.0f, 1.0f, 0.0f};
  float style_gain = 0.6f, style_offset = 0.3f;

  static TriggerSpec global_noise(float sigma = 0.08f);
  static TriggerSpec local_patch(std::size_t size = 6, std::size_t row = 2, std::size_t col = 2);
  static TriggerSpec icon();
  static TriggerSpec style();
  static TriggerSpec local_noise(float sigma, std::size_t size = 6, std::size_t row = 2, std::size_t col = 2);
};

// 6x6 two-colour cross sprite used by the Icon trigger.
inline constexpr std::size_t kIconSize = 6;

// Applies the trigger; `seed` drives noise and icon placement. Output is
// clamped to [0, 1]. Throws PlacementError when a region leaves the canvas.
Tensor apply_trigger(const Tensor& img, const TriggerSpec& spec, std::uint64_t seed);

// --- vision encoder ------------------------------------------------------

class VisionEncoder {
 public:
  VisionEncoder() = default;
  VisionEncoder(Dims dims, Tensor weights);  // weights: patch_dim x d_v

  const Tensor& weights() const { return weights_; }
  const Dims& dims() const { return dims_; }

  // N_v x patch_dim; row t is patch (t / grid, t % grid) flattened as
  // (row, col, channel).
  Tensor patches(const Tensor& img) const;
  // N_v x d_v.
  Tensor encode(const Tensor& img) const;

 private:
  Dims dims_;
  Tensor weights_;
};

// --- projector -----------------------------------------------------------

struct Projector {
  Tensor w1;  // d_l x d_v
  Tensor b1;  // d_l
  Tensor w2;  // d_l x d_l
  Tensor b2;  // d_l

  friend bool operator==(const Projector&, const Projector&) = default;
};

struct ProjectionTrace {
  Tensor pre;     // N x d_l, W1 x + b1 per row
  Tensor hidden;  // N x d_l, gelu(pre)
  Tensor output;  // N x d_l, W2 h + b2 per row
};

ProjectionTrace project_traced(const Tensor& features, const Projector& p);
Tensor project(const Tensor& features, const Projector& p);

// SHA-256 over the hashes of W1, b1, W2, b2.
std::string projector_hash(const Projector& p);

void save_projector(const std::filesystem::path& dir, const Projector& p);
Projector load_projector(const std::filesystem::path& dir);

// --- decoder head --------------------------------------------------------

// s_t = tanh(A c + B U[y_{t-1}] + p_t), logits_t = W_vocab s_t, where c is the
// row mean of the projected embeddings and y_{-1} = BOS.
class DecoderHead {
 public:
  DecoderHead() = default;
  DecoderHead(Tensor token_embedding, Tensor mix_context, Tensor mix_token, Tensor positions,
              Tensor vocab_out);

  const Tensor& token_embedding() const { return token_embedding_; }  // V x d_l
  const Tensor& mix_context() const { return mix_context_; }          // A, d_l x d_l
  const Tensor& mix_token() const { return mix_token_; }              // B, d_l x d_l
  const Tensor& positions() const { return positions_; }              // max_len x d_l
  const Tensor& vocab_out() const { return vocab_out_; }              // W_vocab, V x d_l
  // Row y is B U[y]; derived once at construction.
  const Tensor& token_drive() const { return token_drive_; }

  std::size_t vocab() const { return vocab_out_.dim(0); }
  std::size_t width() const { return vocab_out_.dim(1); }
  std::size_t max_len() const { return positions_.dim(0); }

  // A c for a pooled embedding c.
  Tensor context_drive(const Tensor& pooled) const;
  // Decoder state s_t given the context drive and the previous token.
  Tensor state(const Tensor& context_drive, int prev_token, std::size_t t) const;
  Tensor logits(const Tensor& state) const;

 private:
  Tensor token_embedding_, mix_context_, mix_token_, positions_, vocab_out_;
  Tensor token_drive_;
};

TokenSeq decode_greedy(const Tensor& embeddings, const DecoderHead& head, std::size_t max_len = 12);
// Teacher-forced log P(y_t | c, y_<t) for each target position.
std::vector<double> sequence_logprob(const Tensor& embeddings, const DecoderHead& head,
                                     const TokenSeq& target);

// --- model bundle --------------------------------------------------------

// Standard deviations (as gains over 1/sqrt(fan_in) where noted) used to
// draw the frozen tensors and the initial projector.
struct InitScales {
  double encoder = 4.0;            // gain, W_v
  double token_embedding = 1.0;    // std, U_tok
  double context_identity = 16.0;  // A = context_identity * I + noise
  double context_noise = 0.5;      // gain, noise part of A
  double mix_token = 0.5;          // gain, B
  double position = 1.0;           // std, p_t
  double vocab = 14.0;             // gain, W_vocab
  double w1 = 0.5;                 // gain, initial W1
  double w2 = 0.5;                 // gain, initial W2
};

struct ModelBundle {
  Dims dims;
  std::uint64_t seed = 0;
  VisionEncoder encoder;
  DecoderHead head;
  Projector initial_projector;  // starting point of clean pre-training
};

ModelBundle build_model(std::uint64_t seed, const Dims& dims = {}, const InitScales& scales = {});

// Hash over every frozen tensor (encoder and decoder head).
std::string frozen_hash(const ModelBundle& bundle);

// Writes manifest.json plus one .pltf per role (W_v, W1, b1, W2, b2, U_tok,
// A, B, p_0..p_{max_len-1}, W_vocab).
void save_bundle(const std::filesystem::path& dir, const ModelBundle& bundle);
ModelBundle load_bundle(const std::filesystem::path& dir);

}  // namespace projlens::model
