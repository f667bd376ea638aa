#include "mvcir/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include <json.hpp>

namespace mvcir {

using ordered_json = nlohmann::ordered_json;

const char* to_string(ViewTag t) {
    switch (t) {
        case ViewTag::front: return "front";
        case ViewTag::back: return "back";
        case ViewTag::side: return "side";
        case ViewTag::detail: return "detail";
        case ViewTag::full: return "full";
    }
    return "?";
}

const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::unassigned: return "unassigned";
    }
    return "?";
}

ViewTag view_tag_from_string(const std::string& s) {
    for (ViewTag t : {ViewTag::front, ViewTag::back, ViewTag::side, ViewTag::detail, ViewTag::full})
        if (s == to_string(t)) return t;
    throw ParameterError("unknown view tag: " + s);
}

Split split_from_string(const std::string& s) {
    for (Split t : {Split::train, Split::val, Split::unassigned})
        if (s == to_string(t)) return t;
    throw ParameterError("unknown split: " + s);
}

const Product* CorpusManifest::find(const std::string& id) const {
    for (const Product& p : products)
        if (p.id == id) return &p;
    return nullptr;
}

const Product& CorpusManifest::require(const std::string& id) const {
    const Product* p = find(id);
    if (!p) throw LookupError("unknown product id: " + id);
    return *p;
}

std::vector<const Product*> CorpusManifest::products_in(Split s) const {
    std::vector<const Product*> out;
    for (const Product& p : products)
        if (p.split == s) out.push_back(&p);
    return out;
}

std::vector<const CIRTriplet*> CorpusManifest::triplets_in(Split s) const {
    std::vector<const CIRTriplet*> out;
    for (const CIRTriplet& t : triplets)
        if (require(t.src_id).split == s && require(t.tgt_id).split == s) out.push_back(&t);
    return out;
}

void CorpusManifest::validate() const {
    std::map<std::string, Split> splits;
    for (const Product& p : products) {
        if (!splits.emplace(p.id, p.split).second)
            throw DataError("duplicate product id: " + p.id);
        if (p.views.empty() || p.views.size() > 5)
            throw DataError("product " + p.id + " must have 1..5 views");
        if (p.long_caption.empty() || p.short_caption.empty())
            throw DataError("product " + p.id + " has an empty caption");
    }
    for (const CIRTriplet& t : triplets) {
        auto si = splits.find(t.src_id);
        auto ti = splits.find(t.tgt_id);
        if (si == splits.end() || ti == splits.end())
            throw DataError("triplet endpoint does not resolve: " + t.src_id + " -> " + t.tgt_id);
        if (t.src_id == t.tgt_id) throw DataError("triplet with identical endpoints: " + t.src_id);
        if (si->second != ti->second)
            throw DataError("triplet crosses splits: " + t.src_id + " -> " + t.tgt_id);
        if (t.mod_long.empty() || t.mod_short.empty())
            throw DataError("triplet with empty modification text: " + t.src_id);
    }
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

namespace {

std::string product_id(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "p%06d", i);
    return buf;
}

Vec gauss_vec(Rng& rng, int n, double sigma) {
    Vec v(n);
    for (double& x : v) x = sigma * gauss(rng);
    return v;
}

// vocab layout: [0] sentinel, [1, theme_hi) cluster markers and themes,
// [delta_lo, vocab) modification-delta buckets (3 ids per encoded dim)
struct VocabRegions {
    int theme_lo, theme_hi, delta_lo, delta_hi;
    static VocabRegions of(int vocab_size) {
        VocabRegions r;
        r.theme_lo = 1;
        r.theme_hi = 1 + (vocab_size - 1) / 2;
        r.delta_lo = r.theme_hi;
        r.delta_hi = vocab_size;
        return r;
    }
    int delta_dims() const { return (delta_hi - delta_lo) / 3; }
};

}  // namespace

Vec mean_view_feature(const Product& p) {
    if (p.views.empty()) return {};
    Vec m(p.views[0].feature.size(), 0.0);
    for (const ViewImage& v : p.views)
        for (size_t j = 0; j < m.size(); ++j) m[j] += v.feature[j];
    for (double& x : m) x /= double(p.views.size());
    return m;
}

TokenList encode_mod_text(const Vec& src_latent, const Vec& tgt_latent, int vocab_size,
                          bool long_version) {
    const VocabRegions r = VocabRegions::of(vocab_size);
    const int dims = std::min(int(src_latent.size()), r.delta_dims());
    const int used = long_version ? dims : std::max(1, (dims + 1) / 2);
    TokenList out;
    out.reserve(used);
    for (int j = 0; j < used; ++j) {
        const double delta = tgt_latent[j] - src_latent[j];
        const int bucket = delta < -0.3 ? 0 : (delta > 0.3 ? 2 : 1);
        out.push_back(r.delta_lo + j * 3 + bucket);
    }
    return out;
}

CorpusManifest synth_corpus(uint64_t seed, int n_products, int feature_dim, int vocab_size,
                            int views_min, int views_max) {
    if (n_products < 2) throw ParameterError("synth_corpus: n_products must be >= 2");
    if (views_min < 1 || views_min > views_max || views_max > 5)
        throw ParameterError("synth_corpus: need 1 <= views_min <= views_max <= 5");
    if (feature_dim < 2) throw ParameterError("synth_corpus: feature_dim must be >= 2");
    if (vocab_size < 16) throw ParameterError("synth_corpus: vocab_size must be >= 16");

    Rng rng(seed);
    const VocabRegions reg = VocabRegions::of(vocab_size);
    // every cluster must hold >= 2 products so within-cluster triplets exist
    const int n_clusters = std::max(2, std::min(n_products / 16, n_products / 2));

    std::vector<Vec> centers(n_clusters);
    std::vector<TokenList> themes(n_clusters);
    for (int k = 0; k < n_clusters; ++k) {
        centers[k] = gauss_vec(rng, feature_dim, 1.0);
        // a near-unique cluster marker plus random theme tokens
        TokenList th;
        th.push_back(reg.theme_lo + k % (reg.theme_hi - reg.theme_lo));
        for (int j = 0; j < 3; ++j)
            th.push_back(uniform_int(rng, reg.theme_lo, reg.theme_hi - 1));
        themes[k] = th;
    }
    Vec tag_offset_flat(5 * feature_dim);
    for (double& x : tag_offset_flat) x = 0.25 * gauss(rng);

    CorpusManifest m;
    m.feature_dim = feature_dim;
    m.vocab_size = vocab_size;
    m.generator_seed = seed;
    m.products.reserve(n_products);

    std::vector<Vec> latents(n_products);
    std::vector<int> cluster_of(n_products);
    std::vector<std::vector<int>> cluster_members(n_clusters);

    for (int i = 0; i < n_products; ++i) {
        const int k = i % n_clusters;
        cluster_of[i] = k;
        cluster_members[k].push_back(i);

        Product p;
        p.id = product_id(i);
        p.category = "c" + std::to_string(k);

        Vec z = centers[k];
        Vec nz = gauss_vec(rng, feature_dim, 0.3);
        for (int j = 0; j < feature_dim; ++j) z[j] += nz[j];
        latents[i] = z;

        const int np = uniform_int(rng, views_min, views_max);
        std::vector<ViewTag> tags = {ViewTag::front, ViewTag::back, ViewTag::side,
                                     ViewTag::detail, ViewTag::full};
        std::shuffle(tags.begin(), tags.end(), rng);
        for (int v = 0; v < np; ++v) {
            ViewImage vi;
            vi.view_tag = tags[v];
            vi.source_seed = int64_t(rng() >> 32);
            vi.feature = z;
            Vec pert = gauss_vec(rng, feature_dim, 0.1);
            for (int j = 0; j < feature_dim; ++j)
                vi.feature[j] += pert[j] + tag_offset_flat[int(vi.view_tag) * feature_dim + j];
            p.views.push_back(std::move(vi));
        }

        // long caption: cluster marker + themes plus product-specific tokens;
        // short caption: marker, one theme, one product token
        for (int t : themes[k]) p.long_caption.push_back(t);
        for (int j = 0; j < 4; ++j)
            p.long_caption.push_back(uniform_int(rng, reg.theme_lo, reg.theme_hi - 1));
        p.short_caption = {themes[k][0], themes[k][1],
                           uniform_int(rng, reg.theme_lo, reg.theme_hi - 1)};

        m.products.push_back(std::move(p));
    }

    // two triplets per source product, targets drawn within the cluster
    for (int i = 0; i < n_products; ++i) {
        const auto& members = cluster_members[cluster_of[i]];
        for (int t = 0; t < 2; ++t) {
            int pick = uniform_int(rng, 0, int(members.size()) - 2);
            int tgt = members[pick] == i ? members.back() : members[pick];
            CIRTriplet tr;
            tr.src_id = m.products[i].id;
            tr.tgt_id = m.products[tgt].id;
            tr.mod_long = encode_mod_text(latents[i], latents[tgt], vocab_size, true);
            tr.mod_short = encode_mod_text(latents[i], latents[tgt], vocab_size, false);
            m.triplets.push_back(std::move(tr));
        }
    }

    m.validate();
    return m;
}

CorpusManifest split_products(const CorpusManifest& manifest, double val_fraction,
                              uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        throw ParameterError("split_products: val_fraction must be in (0,1)");
    const int n = int(manifest.products.size());
    const int n_val = int(std::llround(val_fraction * n));
    if (n_val <= 0 || n_val >= n)
        throw ParameterError("split_products: a split would be empty");

    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    CorpusManifest out = manifest;
    for (Product& p : out.products) p.split = Split::train;
    for (int i = 0; i < n_val; ++i) out.products[order[i]].split = Split::val;

    std::map<std::string, Split> split_of;
    for (const Product& p : out.products) split_of[p.id] = p.split;

    std::vector<CIRTriplet> kept;
    for (const CIRTriplet& t : out.triplets)
        if (split_of.at(t.src_id) == split_of.at(t.tgt_id)) kept.push_back(t);
    out.triplets = std::move(kept);

    out.validate();
    return out;
}

const TokenList& sample_mod_text(const CIRTriplet& triplet, Rng& rng) {
    if (triplet.mod_long.empty() || triplet.mod_short.empty())
        throw ParameterError("sample_mod_text: both modification texts must be present");
    return uniform01(rng) < 0.5 ? triplet.mod_long : triplet.mod_short;
}

// ---------------------------------------------------------------------------
// Manifest file I/O
// ---------------------------------------------------------------------------

namespace {

constexpr int kFormatVersion = 1;

ordered_json tokens_json(const TokenList& t) { return ordered_json(t); }

TokenList tokens_from(const ordered_json& j) {
    TokenList out;
    for (const auto& v : j) out.push_back(v.get<int>());
    return out;
}

}  // namespace

void save_manifest(const CorpusManifest& manifest, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);

    ordered_json header;
    header["type"] = "header";
    header["format_version"] = kFormatVersion;
    header["feature_dim"] = manifest.feature_dim;
    header["vocab_size"] = manifest.vocab_size;
    header["seed"] = manifest.generator_seed;
    out << header.dump() << "\n";

    for (const Product& p : manifest.products) {
        ordered_json j;
        j["type"] = "product";
        j["id"] = p.id;
        j["category"] = p.category;
        j["split"] = to_string(p.split);
        j["long_caption"] = tokens_json(p.long_caption);
        j["short_caption"] = tokens_json(p.short_caption);
        ordered_json views = ordered_json::array();
        for (const ViewImage& v : p.views) {
            ordered_json vj;
            vj["tag"] = to_string(v.view_tag);
            vj["seed"] = v.source_seed;
            vj["feature"] = v.feature;
            views.push_back(vj);
        }
        j["views"] = views;
        out << j.dump() << "\n";
    }
    for (const CIRTriplet& t : manifest.triplets) {
        ordered_json j;
        j["type"] = "triplet";
        j["src"] = t.src_id;
        j["tgt"] = t.tgt_id;
        j["mod_long"] = tokens_json(t.mod_long);
        j["mod_short"] = tokens_json(t.mod_short);
        out << j.dump() << "\n";
    }
    if (!out) throw DataError("failed while writing: " + path);
}

CorpusManifest load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open for reading: " + path);

    CorpusManifest m;
    std::string line;
    int line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("malformed record: ") + e.what(), line_no);
        }
        try {
            const std::string type = j.at("type").get<std::string>();
            if (type == "header") {
                if (j.at("format_version").get<int>() != kFormatVersion)
                    throw ParseError("unsupported format_version", line_no);
                m.feature_dim = j.at("feature_dim").get<int>();
                m.vocab_size = j.at("vocab_size").get<int>();
                m.generator_seed = j.at("seed").get<uint64_t>();
                have_header = true;
            } else if (type == "product") {
                Product p;
                p.id = j.at("id").get<std::string>();
                p.category = j.at("category").get<std::string>();
                p.split = split_from_string(j.at("split").get<std::string>());
                p.long_caption = tokens_from(j.at("long_caption"));
                p.short_caption = tokens_from(j.at("short_caption"));
                for (const auto& vj : j.at("views")) {
                    ViewImage v;
                    v.view_tag = view_tag_from_string(vj.at("tag").get<std::string>());
                    v.source_seed = vj.at("seed").get<int64_t>();
                    for (const auto& f : vj.at("feature")) v.feature.push_back(f.get<double>());
                    p.views.push_back(std::move(v));
                }
                m.products.push_back(std::move(p));
            } else if (type == "triplet") {
                CIRTriplet t;
                t.src_id = j.at("src").get<std::string>();
                t.tgt_id = j.at("tgt").get<std::string>();
                t.mod_long = tokens_from(j.at("mod_long"));
                t.mod_short = tokens_from(j.at("mod_short"));
                m.triplets.push_back(std::move(t));
            } else {
                throw ParseError("unknown record type: " + type, line_no);
            }
        } catch (const ParseError&) {
            throw;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("bad record field: ") + e.what(), line_no);
        }
    }
    if (!have_header) throw ParseError("missing header record", std::max(line_no, 1));
    m.validate();
    return m;
}

}  // namespace mvcir
