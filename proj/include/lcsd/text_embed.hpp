#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace lcsd {

inline constexpr std::size_t kEmbedDim = 32;

// Frozen instruction embedding: unit L2 norm, deterministic in the text.
using LangEmbedding = std::array<double, kEmbedDim>;

// Lowercases and splits on runs of non-alphanumeric characters.
std::vector<std::string> tokenize(std::string_view text);

// Signed feature hashing of unigrams and adjacent bigrams ("a b"), FNV-1a 64:
// slot = h mod 32, sign = -1 when bit 32 of h is set. The accumulated vector
// is L2-normalized. Throws EmptyInstruction when the text has no tokens.
LangEmbedding embed(std::string_view text);

double cosine(const LangEmbedding& a, const LangEmbedding& b);

}  // namespace lcsd
