#include "mvcir/dialogue.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mvcir {

namespace {

Token text_token(int id, int turn, Role role) {
    Token t;
    t.kind = TokenKind::text;
    t.text_id = id;
    t.turn_index = turn;
    t.role = role;
    return t;
}

Token special(TokenKind kind, int turn, Role role) {
    Token t;
    t.kind = kind;
    t.turn_index = turn;
    t.role = role;
    return t;
}

void push_user_views(TokenSequence& s, const Product& p, int turn) {
    s.push(special(TokenKind::role_sep, turn, Role::user));
    for (const ViewImage& v : p.views) {
        Token t;
        t.kind = TokenKind::view_feature;
        t.feature = v.feature;
        t.turn_index = turn;
        t.role = Role::user;
        s.push(std::move(t));
    }
}

void push_user_text(TokenSequence& s, const TokenList& text, int turn) {
    for (int id : text) s.push(text_token(id, turn, Role::user));
}

// assistant turn: role_sep <think> [think_tokens] </think> [payload] [<emb>]
void push_assistant(TokenSequence& s, int turn, const TokenList& think_tokens,
                    const TokenList& payload, bool emb) {
    s.push(special(TokenKind::role_sep, turn, Role::assistant));
    s.push(special(TokenKind::think_open, turn, Role::assistant));
    for (int id : think_tokens) s.push(text_token(id, turn, Role::assistant));
    s.push(special(TokenKind::think_close, turn, Role::assistant));
    for (int id : payload) s.push(text_token(id, turn, Role::assistant));
    if (emb) s.push(special(TokenKind::emb_marker, turn, Role::assistant));
}

}  // namespace

TokenSequence build_single_turn_query(const Product& src, const TokenList& mod_text) {
    if (mod_text.empty()) throw ParameterError("build_single_turn_query: empty modification text");
    TokenSequence s;
    push_user_views(s, src, 0);
    push_user_text(s, mod_text, 0);
    push_assistant(s, 0, {}, {}, true);
    return s;
}

TokenSequence build_document(const Product& tgt, bool cot, double rho, Rng& rng) {
    if (rho < 0.0 || rho > 1.0) throw ParameterError("build_document: rho must be in [0,1]");
    TokenSequence s;
    push_user_views(s, tgt, 0);
    TokenList think;
    if (cot) think = subsample_caption(tgt.long_caption, rho, rng);
    push_assistant(s, 0, think, {}, true);
    return s;
}

TokenSequence build_two_stage_query(const Product& src, const TokenList& mod_text, bool cot,
                                    double rho, Rng& rng) {
    if (mod_text.empty()) throw ParameterError("build_two_stage_query: empty modification text");
    TokenSequence s = build_document(src, cot, rho, rng);  // Turn 1, token-identical prefix
    s.push(special(TokenKind::role_sep, 1, Role::user));
    push_user_text(s, mod_text, 1);
    push_assistant(s, 1, {}, {}, true);
    return s;
}

TokenSequence build_text_only(const TokenList& text) {
    if (text.empty()) throw ParameterError("build_text_only: empty text");
    TokenSequence s;
    s.push(special(TokenKind::role_sep, 0, Role::user));
    push_user_text(s, text, 0);
    push_assistant(s, 0, {}, {}, true);
    return s;
}

double keep_ratio(long long step, long long total_steps) {
    if (total_steps < 1) throw ParameterError("keep_ratio: total_steps must be >= 1");
    if (step < 0) throw ParameterError("keep_ratio: step must be >= 0");
    return std::max(0.0, 1.0 - double(step) / (0.5 * double(total_steps)));
}

TokenList subsample_caption(const TokenList& caption, double rho, Rng& rng) {
    if (rho < 0.0 || rho > 1.0) throw ParameterError("subsample_caption: rho must be in [0,1]");
    const int n = int(caption.size());
    const int keep = int(std::ceil(rho * n));
    if (keep >= n) return caption;
    if (keep == 0) return {};
    // choose `keep` indices without replacement, then restore order
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < keep; ++i) {
        const int j = i + uniform_int(rng, 0, n - 1 - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());
    TokenList out;
    out.reserve(keep);
    for (int i : idx) out.push_back(caption[i]);
    return out;
}

SftDialogue build_sft_caption_dialogue(const Product& p) {
    if (p.long_caption.empty() || p.short_caption.empty())
        throw ParameterError("build_sft_caption_dialogue: captions must be present");
    SftDialogue d;
    push_user_views(d.seq, p, 0);
    TokenList think;
    for (const ViewImage& v : p.views) {
        think.push_back(view_tag_token(v.view_tag));
        think.push_back(kSentinelToken);
    }
    TokenList payload = p.long_caption;
    payload.push_back(kSentinelToken);
    payload.insert(payload.end(), p.short_caption.begin(), p.short_caption.end());
    push_assistant(d.seq, 0, think, payload, false);
    d.assistant_mask.resize(d.seq.tokens.size());
    for (size_t i = 0; i < d.seq.tokens.size(); ++i)
        d.assistant_mask[i] = d.seq.tokens[i].role == Role::assistant ? 1 : 0;
    return d;
}

SftDialogue build_sft_triplet_dialogue(const CIRTriplet& tr, const CorpusManifest& manifest) {
    const Product& src = manifest.require(tr.src_id);
    const Product& tgt = manifest.require(tr.tgt_id);
    SftDialogue d;
    push_user_views(d.seq, src, 0);
    push_assistant(d.seq, 0, src.long_caption, {}, true);
    push_user_views(d.seq, tgt, 1);
    push_assistant(d.seq, 1, tgt.long_caption, {}, true);
    // Turn 3: the modification request and the flat modification payload
    d.seq.push(special(TokenKind::role_sep, 2, Role::user));
    d.seq.push(text_token(kSentinelToken, 2, Role::user));
    TokenList payload = tr.mod_long;
    payload.push_back(kSentinelToken);
    payload.insert(payload.end(), tr.mod_short.begin(), tr.mod_short.end());
    push_assistant(d.seq, 2, {}, payload, false);
    d.assistant_mask.resize(d.seq.tokens.size());
    for (size_t i = 0; i < d.seq.tokens.size(); ++i)
        d.assistant_mask[i] = d.seq.tokens[i].role == Role::assistant ? 1 : 0;
    return d;
}

TokenSequence build_sequence(const SequenceRecipe& recipe, const Product& product,
                             const TokenList& mod_text, Rng& rng) {
    switch (recipe.mode) {
        case SequenceMode::single_turn_query:
            return build_single_turn_query(product, mod_text);
        case SequenceMode::two_stage_query:
            return build_two_stage_query(product, mod_text, recipe.cot_enabled,
                                         recipe.keep_ratio, rng);
        case SequenceMode::document:
            return build_document(product, recipe.cot_enabled, recipe.keep_ratio, rng);
        case SequenceMode::text_only:
            return build_text_only(product.long_caption);
    }
    throw ParameterError("build_sequence: bad mode");
}

std::string format_sequence(const TokenSequence& seq) {
    std::ostringstream out;
    for (int i = 0; i < seq.length(); ++i) {
        const Token& t = seq.tokens[i];
        out << i << "\tturn=" << t.turn_index << "\t"
            << (t.role == Role::user ? "user" : "assistant") << "\t";
        switch (t.kind) {
            case TokenKind::text: out << "text:" << t.text_id; break;
            case TokenKind::view_feature: out << "view[f=" << t.feature.size() << "]"; break;
            case TokenKind::emb_marker: out << "<emb>"; break;
            case TokenKind::think_open: out << "<think>"; break;
            case TokenKind::think_close: out << "</think>"; break;
            case TokenKind::role_sep: out << "<sep>"; break;
        }
        out << "\n";
    }
    out << "emb_positions:";
    for (int p : seq.emb_positions) out << " " << p;
    out << "\n";
    return out.str();
}

}  // namespace mvcir
