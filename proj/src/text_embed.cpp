#include "lcsd/text_embed.hpp"

#include <cctype>
#include <cmath>

#include "lcsd/error.hpp"
#include "lcsd/rng.hpp"

namespace lcsd {

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) != 0) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

LangEmbedding embed(std::string_view text) {
    const auto tokens = tokenize(text);
    if (tokens.empty()) throw EmptyInstruction("embed: instruction \"" + std::string(text) + "\" has no tokens");

    LangEmbedding v{};
    auto accumulate = [&v](std::string_view feature) {
        const std::uint64_t h = fnv1a64(feature);
        const double sign = ((h >> 32) & 1ULL) != 0 ? -1.0 : 1.0;
        v[h % kEmbedDim] += sign;
    };
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        accumulate(tokens[i]);
        if (i + 1 < tokens.size()) accumulate(tokens[i] + " " + tokens[i + 1]);
    }

    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    // All-cancelling features: fall back to the first unigram slot so the
    // embedding stays unit norm.
    if (norm == 0.0) {
        const std::uint64_t h = fnv1a64(tokens.front());
        v[h % kEmbedDim] = 1.0;
        return v;
    }
    for (double& x : v) x /= norm;
    return v;
}

double cosine(const LangEmbedding& a, const LangEmbedding& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < kEmbedDim; ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / std::sqrt(na * nb);
}

}  // namespace lcsd
