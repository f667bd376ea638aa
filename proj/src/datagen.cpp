#include "mvcir/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace mvcir {

// ---------------------------------------------------------------------------
// Stubs
// ---------------------------------------------------------------------------

namespace {

// FNV-1a; std::hash is implementation-defined and would make stub output
// differ across standard libraries
uint64_t stable_hash(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

CaptionResult StubAnnotator::caption(const Product& product) {
    ++seen_;
    for (const std::string& id : fail_ids)
        if (id == product.id) throw Error("stub annotator failure for " + product.id);

    CaptionResult r;
    r.is_clothing = !(non_clothing_every > 0 && seen_ % non_clothing_every == 0);

    // deterministic content: per-view captions echo the view tag, long/short
    // captions mix tags with an id-derived token
    const uint64_t h = stable_hash(product.id);
    const int id_token = 1 + int(h % uint64_t(std::max(2, vocab_size - 1)));
    for (const ViewImage& v : product.views) {
        r.per_view.push_back({view_tag_token(v.view_tag), id_token});
        r.long_caption.push_back(view_tag_token(v.view_tag));
    }
    r.long_caption.push_back(id_token);
    r.short_caption = {view_tag_token(product.views.front().view_tag), id_token};
    return r;
}

std::vector<bool> StubVerifier::check(const Product& /*product*/,
                                      const std::vector<TokenList>& captions) {
    const int before = int(std::floor(flag_rate_ * seen_));
    ++seen_;
    const int after = int(std::floor(flag_rate_ * seen_));
    const bool flag = after > before;
    std::vector<bool> out(captions.size(), false);
    if (flag && !out.empty()) out[0] = true;
    return out;
}

std::vector<Selection> StubSelector::select(const Product& source,
                                            const std::vector<const Product*>& candidates) {
    const Vec src_mean = mean_view_feature(source);
    std::vector<std::pair<double, const Product*>> same_category;
    for (const Product* c : candidates) {
        if (c->category != source.category) continue;
        same_category.emplace_back(cosine(src_mean, mean_view_feature(*c)), c);
    }
    std::stable_sort(same_category.begin(), same_category.end(),
                     [](const auto& a, const auto& b) {
                         if (a.first != b.first) return a.first > b.first;
                         return a.second->id < b.second->id;
                     });
    std::vector<Selection> out;
    for (size_t i = 0; i < same_category.size() && i < 2; ++i) {
        const Product* tgt = same_category[i].second;
        Selection s;
        s.target_id = tgt->id;
        s.mod_long = encode_mod_text(src_mean, mean_view_feature(*tgt), vocab_size_, true);
        s.mod_short = encode_mod_text(src_mean, mean_view_feature(*tgt), vocab_size_, false);
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

Stage1Result stage1_caption(const std::vector<Product>& products, AnnotatorClient& client) {
    Stage1Result res;
    for (const Product& p : products) {
        CaptionResult cap;
        try {
            cap = client.caption(p);
        } catch (const std::exception& e) {
            res.errors.push_back({p.id, e.what()});
            continue;
        }
        if (!cap.is_clothing) {
            ++res.dropped_non_clothing;
            continue;
        }
        if (cap.long_caption.empty() || cap.short_caption.empty()) {
            res.errors.push_back({p.id, "annotator returned an empty caption"});
            continue;
        }
        Product out = p;
        out.long_caption = cap.long_caption;
        out.short_caption = cap.short_caption;
        res.products.push_back(std::move(out));
    }
    return res;
}

Stage2Result stage2_filter(const std::vector<Product>& products, VerifierClient& client) {
    Stage2Result res;
    res.report.checked = int(products.size());
    for (const Product& p : products) {
        const std::vector<bool> flags = client.check(p, {p.long_caption, p.short_caption});
        const bool has_error = std::any_of(flags.begin(), flags.end(), [](bool b) { return b; });
        if (has_error)
            ++res.report.errors;
        else
            res.products.push_back(p);
    }
    res.report.retained = int(res.products.size());
    res.report.error_rate =
        res.report.checked == 0 ? 0.0 : double(res.report.errors) / double(res.report.checked);
    return res;
}

VisualEmbedFn default_visual_embed() {
    return [](const Product& p) { return mean_view_feature(p); };
}

CaptionEmbedFn default_caption_embed(int vocab_size) {
    return [vocab_size](const TokenList& caption) {
        Vec h(vocab_size, 0.0);
        for (int t : caption)
            if (t >= 0 && t < vocab_size) h[t] += 1.0;
        const double n = norm(h);
        if (n > 0.0)
            for (double& x : h) x /= n;
        return h;
    };
}

namespace {

// indices of the top-k neighbors of `self` by descending similarity,
// self excluded, ties by ascending index
std::vector<int> top_k(const std::vector<Vec>& embs, int self, int k) {
    std::vector<std::pair<double, int>> scored;
    scored.reserve(embs.size() - 1);
    for (int j = 0; j < int(embs.size()); ++j) {
        if (j == self) continue;
        scored.emplace_back(cosine(embs[self], embs[j]), j);
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<int> out;
    for (int i = 0; i < int(scored.size()) && i < k; ++i) out.push_back(scored[i].second);
    return out;
}

}  // namespace

std::vector<CIRTriplet> stage3_triplets(const std::vector<Product>& products,
                                        const VisualEmbedFn& visual_embed,
                                        const CaptionEmbedFn& caption_embed,
                                        SelectorClient& selector, Rng& rng,
                                        const Stage3Options& opts) {
    std::map<std::string, int> category_counts;
    for (const Product& p : products) ++category_counts[p.category];
    for (const auto& [cat, count] : category_counts)
        if (count < 2)
            throw ParameterError("stage3_triplets: category bucket '" + cat +
                                 "' has fewer than 2 products");

    const int n = int(products.size());
    std::vector<Vec> vis(n), cap_long(n), cap_short(n);
    for (int i = 0; i < n; ++i) {
        vis[i] = visual_embed(products[i]);
        cap_long[i] = caption_embed(products[i].long_caption);
        cap_short[i] = caption_embed(products[i].short_caption);
    }

    std::vector<CIRTriplet> out;
    for (int i = 0; i < n; ++i) {
        // union of the three retrieval paths
        std::set<int> pool;
        for (const std::vector<Vec>* path : {&vis, &cap_long, &cap_short})
            for (int j : top_k(*path, i, opts.top_k_per_path)) pool.insert(j);

        std::vector<int> pool_list(pool.begin(), pool.end());
        // sample without replacement down to the presented candidate count
        std::vector<int> sampled;
        if (int(pool_list.size()) <= opts.candidates_presented) {
            sampled = pool_list;
        } else {
            for (int t = 0; t < opts.candidates_presented; ++t) {
                const int j = t + uniform_int(rng, 0, int(pool_list.size()) - 1 - t);
                std::swap(pool_list[t], pool_list[j]);
            }
            sampled.assign(pool_list.begin(), pool_list.begin() + opts.candidates_presented);
            std::sort(sampled.begin(), sampled.end());
        }

        std::vector<const Product*> candidates;
        std::set<std::string> candidate_ids;
        for (int j : sampled) {
            candidates.push_back(&products[j]);
            candidate_ids.insert(products[j].id);
        }

        const std::vector<Selection> picks = selector.select(products[i], candidates);
        if (int(picks.size()) > opts.max_selections_per_source)
            throw ProtocolError("selector returned more than " +
                                std::to_string(opts.max_selections_per_source) + " selections");
        for (const Selection& s : picks) {
            if (!candidate_ids.count(s.target_id))
                throw ProtocolError("selector picked an id outside the candidate list: " +
                                    s.target_id);
            if (s.target_id == products[i].id)
                throw ProtocolError("selector picked the source itself: " + s.target_id);
            CIRTriplet tr;
            tr.src_id = products[i].id;
            tr.tgt_id = s.target_id;
            tr.mod_long = s.mod_long;
            tr.mod_short = s.mod_short;
            out.push_back(std::move(tr));
        }
    }
    return out;
}

}  // namespace mvcir
