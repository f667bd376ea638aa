#pragma once

#include <map>
#include <string>

#include "mvcir/common.hpp"

namespace mvcir {

enum class ViewTag { front, back, side, detail, full };
enum class Split { train, val, unassigned };

const char* to_string(ViewTag t);
const char* to_string(Split s);
ViewTag view_tag_from_string(const std::string& s);
Split split_from_string(const std::string& s);

struct ViewImage {
    ViewTag view_tag = ViewTag::front;
    Vec feature;  // length F, a pseudo-image descriptor
    int64_t source_seed = 0;
};

struct Product {
    std::string id;
    std::vector<ViewImage> views;  // 1..5 views
    TokenList long_caption;
    TokenList short_caption;
    std::string category;  // doubles as the latent cluster label for synthetic corpora
    Split split = Split::unassigned;
};

struct CIRTriplet {
    std::string src_id;
    std::string tgt_id;
    TokenList mod_long;
    TokenList mod_short;
};

struct CorpusManifest {
    std::vector<Product> products;
    std::vector<CIRTriplet> triplets;
    int feature_dim = 0;
    int vocab_size = 0;
    uint64_t generator_seed = 0;

    const Product* find(const std::string& id) const;
    const Product& require(const std::string& id) const;  // LookupError if absent

    std::vector<const Product*> products_in(Split s) const;
    std::vector<const CIRTriplet*> triplets_in(Split s) const;

    /// Throws if a triplet endpoint does not resolve or crosses splits.
    void validate() const;
};

// Sentinel text-token id used as a field separator in flat SFT payloads.
constexpr int kSentinelToken = 0;

/// Token id carrying a view tag inside synthetic per-view captions.
inline int view_tag_token(ViewTag t) { return 1 + int(t); }

// ---------------------------------------------------------------------------
// Synthetic corpus generation.
//
// Products are grouped into latent clusters; view features are drawn around a
// cluster center, captions mix cluster-theme tokens with product-specific
// noise, and modification texts encode the quantized latent delta between
// source and target. That gives a toy model an actually learnable retrieval
// signal. Every product sources exactly two within-cluster triplets.
// ---------------------------------------------------------------------------

CorpusManifest synth_corpus(uint64_t seed, int n_products, int feature_dim, int vocab_size,
                            int views_min, int views_max);

/// Assigns train/val split labels at the product level and drops triplets
/// whose endpoints land in different splits.
CorpusManifest split_products(const CorpusManifest& manifest, double val_fraction,
                              uint64_t seed);

/// Training-time text augmentation: long or short modification text with
/// equal probability.
const TokenList& sample_mod_text(const CIRTriplet& triplet, Rng& rng);

// Modification-text synthesis shared with the stage-3 stub selector.
TokenList encode_mod_text(const Vec& src_latent, const Vec& tgt_latent, int vocab_size,
                          bool long_version);
Vec mean_view_feature(const Product& p);

// Line-delimited manifest file: header record first, then one record per
// product and per triplet, fixed field order (diffable).
void save_manifest(const CorpusManifest& manifest, const std::string& path);
CorpusManifest load_manifest(const std::string& path);

}  // namespace mvcir
