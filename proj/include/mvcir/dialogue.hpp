#pragma once

#include <map>

#include "mvcir/corpus.hpp"
#include "mvcir/tokens.hpp"

namespace mvcir {

// How a sequence should be built for encoding. keep_ratio only matters when
// cot_enabled; with cot off (or rho == 0) the think block is empty.
enum class SequenceMode { single_turn_query, two_stage_query, document, text_only };

struct SequenceRecipe {
    SequenceMode mode = SequenceMode::document;
    bool cot_enabled = false;
    double keep_ratio = 0.0;
};

// Query side of the single-turn baseline: one user turn with all source
// views followed by the modification text, then an assistant turn holding an
// empty think block and the embedding marker.
TokenSequence build_single_turn_query(const Product& src, const TokenList& mod_text);

// Document side: views only, assistant think block carrying the subsampled
// long caption when cot is on. cot with rho == 0 is token-identical to
// cot == false.
TokenSequence build_document(const Product& tgt, bool cot, double rho, Rng& rng);

// Two-stage query: Turn 1 is exactly the document sequence of the source
// (same CoT handling, same rng consumption), Turn 2 carries the modification
// text. Marker 0 is the source embedding, marker 1 the query embedding.
TokenSequence build_two_stage_query(const Product& src, const TokenList& mod_text, bool cot,
                                    double rho, Rng& rng);

// Text-only caption encoding, terminated by an embedding marker.
TokenSequence build_text_only(const TokenList& text);

/// CoT keep ratio: max(0, 1 - t / (0.5 T)); linear from 1 to 0 over the
/// first half of training.
double keep_ratio(long long step, long long total_steps);

/// Uniformly keeps ceil(rho * n) tokens without replacement, preserving the
/// original order.
TokenList subsample_caption(const TokenList& caption, double rho, Rng& rng);

// SFT conversations. The mask flags assistant-role token positions (the
// spans the autoregressive loss trains on).
struct SftDialogue {
    TokenSequence seq;
    std::vector<uint8_t> assistant_mask;
};

/// Caption generation task: user provides views, assistant thinks through
/// per-view notes then emits the flat caption payload.
SftDialogue build_sft_caption_dialogue(const Product& p);

/// Triplet generation task: source turn, target turn (each with caption
/// think + embedding marker), then a modification-text turn.
SftDialogue build_sft_triplet_dialogue(const CIRTriplet& tr, const CorpusManifest& manifest);

/// Builds the query- or document-side sequence for the given recipe.
TokenSequence build_sequence(const SequenceRecipe& recipe, const Product& product,
                             const TokenList& mod_text, Rng& rng);

/// One-token-per-line rendering for the debug CLI.
std::string format_sequence(const TokenSequence& seq);

}  // namespace mvcir
