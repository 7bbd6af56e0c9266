#include <array>
#include <sstream>

#include "projlens/error.hpp"
#include "projlens/model.hpp"

namespace projlens::model {

namespace {

constexpr std::array<std::string_view, 64> kWords = {
    "<bos>", "<eos>",
    // colors
    "red", "blue", "yellow", "cyan", "magenta", "white", "orange", "purple",
    // counts
    "one", "two", "three", "four",
    // backdoor targets
    "sorry", "i", "cannot", "help", "bad", "model", "injected", "pink", "elephant", "flying", "sky",
    "sure", "here", "is", "response",
    // fillers
    "a", "the", "image", "shows", "shape", "square", "of", "on", "black", "background", "in",
    "with", "and", "there", "are", "some", "objects", "picture", "photo", "small", "large", "left",
    "right", "top", "bottom", "center", "near", "far", "dark", "light", "bright", "color", "many",
    "few", "none"};

constexpr std::array<std::array<float, 3>, kPaletteSize> kPalette = {{
    {0.90f, 0.10f, 0.10f},  // red
    {0.10f, 0.20f, 0.90f},  // blue
    {0.95f, 0.90f, 0.10f},  // yellow
    {0.10f, 0.85f, 0.90f},  // cyan
    {0.90f, 0.10f, 0.85f},  // magenta
    {0.95f, 0.95f, 0.95f},  // white
    {0.95f, 0.55f, 0.10f},  // orange
    {0.50f, 0.10f, 0.70f},  // purple
}};

}  // namespace

std::string_view token_name(int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= kWords.size()) return "<unk>";
  return kWords[static_cast<std::size_t>(id)];
}

std::string render_tokens(const TokenSeq& seq) {
  std::ostringstream os;
  for (std::size_t i = 0; i < seq.size(); ++i) os << (i ? " " : "") << token_name(seq[i]);
  return os.str();
}

std::array<float, 3> palette_color(std::size_t color) { return kPalette.at(color); }

int color_token(std::size_t color) {
  if (color >= kPaletteSize) throw VocabError("color index out of range");
  return token::kFirstColor + static_cast<int>(color);
}

int count_token(std::size_t count) {
  if (count < 1 || count > kMaxShapes) throw VocabError("shape count out of range");
  return token::kFirstCount + static_cast<int>(count) - 1;
}

}  // namespace projlens::model
