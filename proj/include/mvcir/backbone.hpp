#pragma once

#include <string>

#include "mvcir/tape.hpp"
#include "mvcir/tokens.hpp"

namespace mvcir {

// Toy stand-in for the 0.8B multimodal backbone: a strictly causal pre-LN
// transformer over typed tokens. View features enter through a learned linear
// projection; text and control tokens through an embedding table; positions
// are learned absolute embeddings. Defaults are the smallest size at which
// the synthetic retrieval task trains in minutes on one CPU core.
struct BackboneConfig {
    int hidden_dim = 64;
    int n_layers = 2;
    int n_heads = 4;
    int vocab_size = 64;
    int feature_dim = 8;
    int max_seq_len = 256;
    uint64_t init_seed = 1;

    int head_dim() const { return hidden_dim / n_heads; }
    int extended_vocab() const { return vocab_size + kNumSpecialTokens; }
    int mlp_dim() const { return 4 * hidden_dim; }

    void validate() const;
    bool operator==(const BackboneConfig&) const = default;
};

// Named view into the flat parameter vector.
struct ParamSegment {
    std::string name;
    int rows = 0;
    int cols = 0;
    size_t offset = 0;
    size_t size() const { return size_t(rows) * cols; }
};

struct ParamLayout {
    std::vector<ParamSegment> segments;
    size_t total = 0;

    static ParamLayout build(const BackboneConfig& cfg);
    int segment_id(const std::string& name) const;  // IndexError if unknown
};

struct Params {
    BackboneConfig config;
    ParamLayout layout;
    Vec flat;

    Mat segment(int id) const;                     // copy of one segment as a matrix
    void set_segment(int id, const Mat& m);
};

/// Fresh randomly initialized parameters (deterministic in config.init_seed).
Params init_params(const BackboneConfig& cfg);

// Tape-facing forward pass. `ParamNodes` binds every segment of `params`
// into a tape once; `forward_graph` then builds the transformer graph for a
// sequence and reports the node holding the final hidden states plus one
// 1 x d node per embedding marker.
struct ParamNodes {
    const ParamLayout* layout = nullptr;
    std::vector<int> node_of;  // segment id -> tape node
    int operator[](const std::string& name) const;
};

ParamNodes bind_params(Tape& tape, const Params& params);

struct ForwardNodes {
    int states = -1;                 // L x d final hidden states
    std::vector<int> marker_rows;    // 1 x d node per emb_marker, in order
};

ForwardNodes forward_graph(Tape& tape, const ParamNodes& pn, const BackboneConfig& cfg,
                           const TokenSequence& seq);

/// LM head logits (L x extended_vocab) over the final hidden states.
int logits_graph(Tape& tape, const ParamNodes& pn, int states);

// Plain (non-training) entry points used by evaluation and tests.

/// Hidden states for every position; strictly causal and deterministic.
std::vector<Vec> forward(const TokenSequence& seq, const Params& params);

/// One embedding per marker position, in order. IndexError on bad positions.
std::vector<Vec> extract_embeddings(const std::vector<Vec>& states,
                                    const std::vector<int>& emb_positions);

/// Embedding of a text-only sequence terminated by an embedding marker.
Vec embed_text(const TokenList& caption, const Params& params);

/// Flat parameter gradient of a scalar loss node (call after tape.backward).
Vec collect_gradients(const Tape& tape, const Params& params);

// Checkpoint file: header (format version + config) then the flat parameter
// array in layout order; round-trips exactly.
void save_checkpoint(const Params& params, const std::string& path);
Params load_checkpoint(const std::string& path);

}  // namespace mvcir
