#pragma once

#include <optional>

#include "mvcir/tape.hpp"

namespace mvcir {

// Gating flags and hyperparameters of the composed training objective.
// total = l_cir + lambda_d * l_doc (align variants)
//               + lambda_s * l_src (align AND two-stage variants)
//
// Embeddings are L2-normalized inside SymInfoNCE by default so training
// similarity matches the cosine used for retrieval scoring; set
// normalize_embeddings = false for the literal raw-dot-product form.
struct ObjectiveConfig {
    double tau = 0.07;
    double lambda_d = 0.25;
    double lambda_s = 0.25;
    bool mt = false;
    bool align = false;
    bool cot = false;
    bool normalize_embeddings = true;
};

struct LossTerms {
    double l_cir = 0.0;
    std::optional<double> l_doc;
    std::optional<double> l_src;
    double total = 0.0;
};

/// Symmetric InfoNCE over an in-batch similarity matrix: the mean of the
/// query-to-document and document-to-query softmax cross-entropies, diagonal
/// entries being the positive pairs. Exactly zero at B == 1.
double sym_infonce(const std::vector<Vec>& queries, const std::vector<Vec>& documents,
                   double tau, bool normalize = true);

/// Tape variant (same arithmetic) for training; inputs are 1 x d nodes.
int sym_infonce_node(Tape& tape, const std::vector<int>& queries,
                     const std::vector<int>& documents, double tau, bool normalize = true);

/// Combines supplied loss terms under the config's gating. A term supplied
/// while its gate is off (or missing while on) is a wiring bug -> ConfigError.
LossTerms total_loss(double l_cir, std::optional<double> l_doc, std::optional<double> l_src,
                     const ObjectiveConfig& cfg);

/// Mean next-token negative log-likelihood over positions where mask is
/// true; unmasked positions contribute exactly zero.
double sft_loss(const Mat& logits, const std::vector<int>& targets,
                const std::vector<uint8_t>& mask);

}  // namespace mvcir
