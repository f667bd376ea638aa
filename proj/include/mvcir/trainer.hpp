#pragma once

#include <optional>

#include "mvcir/backbone.hpp"
#include "mvcir/corpus.hpp"
#include "mvcir/objectives.hpp"
#include "mvcir/retrieval.hpp"

namespace mvcir {

enum class LrSchedule { cosine_no_warmup };

// Contrastive training configuration. Optimization defaults follow the
// reference recipe (AdamW, lr 1e-5, weight decay 0.01, clip 1.0, cosine
// schedule without warmup, one epoch); batch size is scaled to desk size.
// The desk-scale synthetic task trains well at a much larger lr; callers
// override lr explicitly for that.
struct TrainConfig {
    bool mt = false;
    bool align = false;
    bool cot = false;
    bool sft_init = false;

    int epochs = 1;
    int batch = 16;
    double lr = 1e-5;
    double weight_decay = 0.01;
    double grad_clip = 1.0;
    double tau = 0.07;
    double lambda_d = 0.25;
    double lambda_s = 0.25;
    bool normalize_embeddings = true;
    uint64_t seed = 1;
    LrSchedule schedule = LrSchedule::cosine_no_warmup;

    ObjectiveConfig objective() const {
        ObjectiveConfig o;
        o.tau = tau;
        o.lambda_d = lambda_d;
        o.lambda_s = lambda_s;
        o.mt = mt;
        o.align = align;
        o.cot = cot;
        o.normalize_embeddings = normalize_embeddings;
        return o;
    }

    std::string variant_name() const;  // "baseline", "mt+align", ...
};

// AdamW moment coefficients are not part of the published recipe; the
// customary defaults below are recorded in every log header.
struct AdamWConstants {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct StepRecord {
    int step = 0;
    double rho = 0.0;
    double lr = 0.0;
    double l_cir = 0.0;
    std::optional<double> l_doc;
    std::optional<double> l_src;
    double total = 0.0;
    double grad_norm = 0.0;  // after clipping
};

struct TrainLog {
    TrainConfig config;
    AdamWConstants adamw;
    int total_steps = 0;
    std::vector<StepRecord> steps;
};

struct TrainResult {
    Params params;
    TrainLog log;
};

/// Contrastive training over the train-split triplets. Deterministic for a
/// fixed (config, manifest, init) triple.
TrainResult train(const TrainConfig& cfg, const CorpusManifest& manifest,
                  const Params& init_params);

/// SFT pre-training: caption-generation plus triplet-generation dialogues
/// from the train split, sampled at `sample_fraction`, one epoch of
/// assistant-masked language modeling. Returns parameters usable as an
/// alternative initialization for train().
Params run_sft(const TrainConfig& cfg, const CorpusManifest& manifest, const Params& init_params,
               double sample_fraction, std::vector<double>* step_losses = nullptr);

/// The 16 ablation configurations: 8 variant flag-sets x 2 initializations,
/// pretrained block first, all-off variant first within each block.
std::vector<TrainConfig> ablation_matrix(const TrainConfig& base);

struct AblationRow {
    TrainConfig config;
    bool logs_l_doc = false;
    bool logs_l_src = false;
    std::optional<double> recall_at_5;  // empty on dry runs
    std::optional<double> recall_at_10;
};

struct AblationTable {
    std::vector<AblationRow> rows;
    std::string to_csv() const;  // fixed header, one row per configuration
};

/// Runs (or with dry_run=true, only wires up) the full ablation matrix.
/// SFT-based rows share a single SFT checkpoint.
AblationTable run_ablation(const CorpusManifest& manifest, const TrainConfig& base,
                           const BackboneConfig& model, bool dry_run,
                           double sft_fraction = 0.2);

// Line-delimited training log (header record then one record per step).
void save_train_log(const TrainLog& log, const std::string& path);

}  // namespace mvcir
