#pragma once

#include <map>

#include "mvcir/backbone.hpp"
#include "mvcir/corpus.hpp"

namespace mvcir {

// Multi-view encoding strategies for the gallery/query sides:
//   joint    - all views in one sequence, one embedding per product
//   meanpool - per-view embeddings averaged into one vector
//   maxsim   - per-view embeddings kept; score is the max pairwise cosine
enum class Strategy { joint, meanpool, maxsim };

const char* to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct Gallery {
    Strategy strategy = Strategy::joint;
    // joint / meanpool: one vector per product; maxsim: one list per product
    std::map<std::string, Vec> single;
    std::map<std::string, std::vector<Vec>> per_view;

    size_t size() const {
        return strategy == Strategy::maxsim ? per_view.size() : single.size();
    }
};

struct RankedList {
    std::string query_id;
    std::vector<std::string> ids;  // descending score, ties by ascending id
    std::vector<double> scores;
};

struct RecallReport {
    double recall_at_5 = 0.0;
    double recall_at_10 = 0.0;
};

struct CrossModalReport {
    double i2t_r1 = 0.0, i2t_r5 = 0.0;
    double t2i_r1 = 0.0, t2i_r5 = 0.0;
};

/// Encodes the document gallery for the given products. Evaluation always
/// runs in inference mode (empty think blocks, no CoT captions).
Gallery encode_gallery(const std::vector<const Product*>& products, const Params& params,
                       Strategy strategy);

/// Strategy score between one query side and one document side. Sides are
/// per-view lists for maxsim and single-element lists otherwise. Zero-norm
/// vectors score 0.
double score(Strategy strategy, const std::vector<Vec>& query_side,
             const std::vector<Vec>& doc_side);

/// Exhaustive ranking of the gallery for one query.
RankedList rank(const std::string& query_id, const std::vector<Vec>& query_side,
                const Gallery& gallery);

/// Fraction of queries whose true target appears in the top k.
double recall_at_k(const std::vector<RankedList>& rankings,
                   const std::map<std::string, std::string>& truths, int k);

/// CIR evaluation over the validation split: short modification text only,
/// two-stage queries when the trained config used them.
RecallReport eval_cir(const CorpusManifest& manifest, const Params& params, Strategy strategy,
                      bool two_stage);

enum class CaptionKind { short_caption, long_caption };

/// Image<->text retrieval over the validation products: joint visual
/// embeddings against text-only caption embeddings, both directions.
CrossModalReport eval_i2t_t2i(const CorpusManifest& manifest, const Params& params,
                              CaptionKind kind);

}  // namespace mvcir
