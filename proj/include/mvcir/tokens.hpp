#pragma once

#include "mvcir/common.hpp"

namespace mvcir {

// Typed tokens for the backbone. A sequence interleaves projected view
// features with text tokens and a handful of control tokens; the embedding
// marker is the position whose final hidden state is read out as the
// product/query embedding.
enum class TokenKind {
    text,          // payload: text token id in [0, vocab_size)
    view_feature,  // payload: dense feature vector of length F
    emb_marker,    // no payload; hidden state here is the embedding
    think_open,
    think_close,
    role_sep,  // turn boundary; role tells whose turn starts
};

enum class Role { user, assistant };

struct Token {
    TokenKind kind = TokenKind::text;
    int text_id = 0;   // valid when kind == text
    Vec feature;       // valid when kind == view_feature (length F)
    int turn_index = 0;
    Role role = Role::user;

    bool operator==(const Token& o) const {
        return kind == o.kind && text_id == o.text_id && feature == o.feature &&
               turn_index == o.turn_index && role == o.role;
    }
};

struct TokenSequence {
    std::vector<Token> tokens;
    std::vector<int> emb_positions;  // indices of emb_marker tokens, in order

    int length() const { return int(tokens.size()); }

    void push(Token t) {
        if (t.kind == TokenKind::emb_marker) emb_positions.push_back(int(tokens.size()));
        tokens.push_back(std::move(t));
    }

    bool operator==(const TokenSequence& o) const {
        return tokens == o.tokens && emb_positions == o.emb_positions;
    }
};

// Number of control-token rows appended after the text vocabulary in the
// token-embedding table (and in the LM head output space).
constexpr int kNumSpecialTokens = 5;

// Extended vocabulary id for non-view tokens: text ids keep their value,
// control tokens get dedicated rows after the text vocabulary. View-feature
// tokens have no extended id (they enter through the feature projection and
// are never prediction targets); returns -1 for them.
inline int extended_id(const Token& t, int vocab_size) {
    switch (t.kind) {
        case TokenKind::text: return t.text_id;
        case TokenKind::view_feature: return -1;
        case TokenKind::emb_marker: return vocab_size + 0;
        case TokenKind::think_open: return vocab_size + 1;
        case TokenKind::think_close: return vocab_size + 2;
        case TokenKind::role_sep:
            return vocab_size + (t.role == Role::user ? 3 : 4);
    }
    return -1;
}

}  // namespace mvcir
