#pragma once

#include <functional>

#include "mvcir/corpus.hpp"

namespace mvcir {

// The dataset-construction pipeline talks to external annotation models only
// through these interfaces. The shipped stubs are deterministic so the whole
// control flow is testable offline; real adapters can be plugged in later.

struct CaptionResult {
    std::vector<TokenList> per_view;
    TokenList long_caption;
    TokenList short_caption;
    bool is_clothing = true;
};

class AnnotatorClient {
  public:
    virtual ~AnnotatorClient() = default;
    virtual CaptionResult caption(const Product& product) = 0;
};

class VerifierClient {
  public:
    virtual ~VerifierClient() = default;
    /// One has_error flag per supplied caption.
    virtual std::vector<bool> check(const Product& product,
                                    const std::vector<TokenList>& captions) = 0;
};

struct Selection {
    std::string target_id;
    TokenList mod_long;
    TokenList mod_short;
};

class SelectorClient {
  public:
    virtual ~SelectorClient() = default;
    /// Picks up to 2 targets out of the presented candidates (<= 10).
    virtual std::vector<Selection> select(const Product& source,
                                          const std::vector<const Product*>& candidates) = 0;
};

// ---------------------------------------------------------------------------
// Deterministic stubs
// ---------------------------------------------------------------------------

/// Derives captions from the view tags and the product id; optionally marks
/// every `non_clothing_every`-th product (1-based) as non-clothing, and
/// throws on ids listed in `fail_ids` to exercise the error path.
class StubAnnotator : public AnnotatorClient {
  public:
    int non_clothing_every = 0;  // 0 = never
    std::vector<std::string> fail_ids;
    int vocab_size = 64;

    CaptionResult caption(const Product& product) override;

  private:
    int seen_ = 0;
};

/// Flags a deterministic `flag_rate` fraction of the products it checks
/// (every product whose running index crosses an integer multiple of
/// 1/flag_rate), independent of caption content.
class StubVerifier : public VerifierClient {
  public:
    explicit StubVerifier(double flag_rate = 0.0) : flag_rate_(flag_rate) {}
    std::vector<bool> check(const Product& product,
                            const std::vector<TokenList>& captions) override;

  private:
    double flag_rate_;
    int seen_ = 0;
};

/// Picks the (up to) 2 visually nearest same-category candidates and encodes
/// modification texts from the mean view-feature delta.
class StubSelector : public SelectorClient {
  public:
    explicit StubSelector(int vocab_size = 64) : vocab_size_(vocab_size) {}
    std::vector<Selection> select(const Product& source,
                                  const std::vector<const Product*>& candidates) override;

  private:
    int vocab_size_;
};

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

struct StageError {
    std::string product_id;
    std::string message;
};

struct Stage1Result {
    std::vector<Product> products;   // annotated, clothing only
    std::vector<StageError> errors;  // failed products (skipped)
    int dropped_non_clothing = 0;
};

struct Stage2Report {
    int checked = 0;
    int errors = 0;
    int retained = 0;
    double error_rate = 0.0;
};

struct Stage2Result {
    std::vector<Product> products;
    Stage2Report report;
};

/// Attaches captions from the annotator; drops non-clothing products; failed
/// products are skipped and recorded, the stage continues.
Stage1Result stage1_caption(const std::vector<Product>& products, AnnotatorClient& client);

/// Removes products whose captions the verifier flags.
Stage2Result stage2_filter(const std::vector<Product>& products, VerifierClient& client);

using VisualEmbedFn = std::function<Vec(const Product&)>;
using CaptionEmbedFn = std::function<Vec(const TokenList&)>;

/// Default content-based embeddings used when no trained model is involved:
/// mean view feature, and a normalized bag-of-tokens histogram.
VisualEmbedFn default_visual_embed();
CaptionEmbedFn default_caption_embed(int vocab_size);

struct Stage3Options {
    int top_k_per_path = 20;
    int candidates_presented = 10;
    int max_selections_per_source = 2;
};

/// Multi-candidate triplet construction: per source, the union of visual /
/// long-caption / short-caption top-20 neighbors (source excluded) is
/// sampled down to 10 candidates and handed to the selector. Selections
/// outside the candidate list violate the protocol.
std::vector<CIRTriplet> stage3_triplets(const std::vector<Product>& products,
                                        const VisualEmbedFn& visual_embed,
                                        const CaptionEmbedFn& caption_embed,
                                        SelectorClient& selector, Rng& rng,
                                        const Stage3Options& opts = {});

}  // namespace mvcir
