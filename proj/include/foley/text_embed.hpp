#pragma once

#include <string>
#include <vector>

#include "foley/nn.hpp"
#include "foley/rng.hpp"
#include "foley/tensor.hpp"

namespace foley {

// Lowercases and splits on non-alphanumeric runs.
std::vector<std::string> tokenize(const std::string& text);

// Caption encoder: learned token + position embeddings over the small caption
// vocabulary, with id 0 reserved for unknown words, plus a learned single
// token used as the empty/unconditional context.
class TextEmbedder {
  public:
    TextEmbedder(ParamStore& ps, int d_ctx, int max_len, Rng& rng);

    // [n_tokens x d_ctx]; empty or whitespace-only text yields the null token.
    Tensor encode(const std::string& text) const;
    Tensor null_context() const;

    int vocab_size() const { return static_cast<int>(vocab_.size()) + 1; }
    int token_id(const std::string& word) const;

  private:
    std::vector<std::string> vocab_;
    int d_ctx_;
    int max_len_;
    Tensor tok_emb_;   // [vocab+1, d]
    Tensor pos_emb_;   // [max_len, d]
    Tensor null_emb_;  // [1, d]
};

}  // namespace foley
