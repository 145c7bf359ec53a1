#include "foley/text_embed.hpp"

#include <algorithm>
#include <cctype>

namespace foley {

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

TextEmbedder::TextEmbedder(ParamStore& ps, int d_ctx, int max_len, Rng& rng)
    : vocab_{"the", "sound", "of", "click", "train", "tone", "burst", "noise", "chirp"},
      d_ctx_(d_ctx),
      max_len_(max_len) {
    tok_emb_ = ps.add("text.tok", Tensor::randn({vocab_size(), d_ctx}, rng, 0.05f));
    pos_emb_ = ps.add("text.pos", Tensor::randn({max_len, d_ctx}, rng, 0.05f));
    null_emb_ = ps.add("text.null", Tensor::randn({1, d_ctx}, rng, 0.05f));
}

int TextEmbedder::token_id(const std::string& word) const {
    const auto it = std::find(vocab_.begin(), vocab_.end(), word);
    return it == vocab_.end() ? 0 : static_cast<int>(it - vocab_.begin()) + 1;
}

Tensor TextEmbedder::encode(const std::string& text) const {
    std::vector<std::string> words = tokenize(text);
    if (words.empty()) return null_context();
    if (static_cast<int>(words.size()) > max_len_) words.resize(static_cast<size_t>(max_len_));
    std::vector<int> ids, pos;
    for (size_t i = 0; i < words.size(); ++i) {
        ids.push_back(token_id(words[i]));
        pos.push_back(static_cast<int>(i));
    }
    return add(embedding(tok_emb_, ids), embedding(pos_emb_, pos));
}

Tensor TextEmbedder::null_context() const { return reshape(null_emb_, {1, d_ctx_}); }

}  // namespace foley
