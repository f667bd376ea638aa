#include "mvcir/retrieval.hpp"

#include <algorithm>
#include <cmath>

#include "mvcir/dialogue.hpp"

namespace mvcir {

const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::joint: return "joint";
        case Strategy::meanpool: return "meanpool";
        case Strategy::maxsim: return "maxsim";
    }
    return "?";
}

Strategy strategy_from_string(const std::string& s) {
    for (Strategy t : {Strategy::joint, Strategy::meanpool, Strategy::maxsim})
        if (s == to_string(t)) return t;
    throw ParameterError("unknown strategy: " + s);
}

namespace {

Vec document_embedding(const Product& p, const Params& params) {
    Rng rng(0);  // inference mode: no CoT, rng unused
    const TokenSequence seq = build_document(p, false, 0.0, rng);
    return extract_embeddings(forward(seq, params), seq.emb_positions).at(0);
}

Product single_view_of(const Product& p, size_t view_index) {
    Product q = p;
    q.views = {p.views.at(view_index)};
    return q;
}

std::vector<Vec> per_view_doc_embeddings(const Product& p, const Params& params) {
    std::vector<Vec> out;
    out.reserve(p.views.size());
    for (size_t v = 0; v < p.views.size(); ++v)
        out.push_back(document_embedding(single_view_of(p, v), params));
    return out;
}

Vec mean_of(const std::vector<Vec>& vs) {
    Vec m(vs.at(0).size(), 0.0);
    for (const Vec& v : vs)
        for (size_t j = 0; j < m.size(); ++j) m[j] += v[j];
    for (double& x : m) x /= double(vs.size());
    return m;
}

Vec query_embedding(const Product& src, const TokenList& mod, const Params& params,
                    bool two_stage) {
    Rng rng(0);
    const TokenSequence seq = two_stage ? build_two_stage_query(src, mod, false, 0.0, rng)
                                        : build_single_turn_query(src, mod);
    const auto embs = extract_embeddings(forward(seq, params), seq.emb_positions);
    return embs.back();  // two-stage: marker 1 is the query embedding
}

}  // namespace

Gallery encode_gallery(const std::vector<const Product*>& products, const Params& params,
                       Strategy strategy) {
    if (products.empty()) throw DataError("encode_gallery: empty product set");
    Gallery g;
    g.strategy = strategy;
    for (const Product* p : products) {
        switch (strategy) {
            case Strategy::joint:
                g.single[p->id] = document_embedding(*p, params);
                break;
            case Strategy::meanpool:
                g.single[p->id] = mean_of(per_view_doc_embeddings(*p, params));
                break;
            case Strategy::maxsim:
                g.per_view[p->id] = per_view_doc_embeddings(*p, params);
                break;
        }
    }
    return g;
}

double score(Strategy strategy, const std::vector<Vec>& query_side,
             const std::vector<Vec>& doc_side) {
    if (query_side.empty() || doc_side.empty())
        throw ParameterError("score: empty side");
    if (strategy == Strategy::maxsim) {
        double best = -2.0;
        for (const Vec& q : query_side)
            for (const Vec& d : doc_side) best = std::max(best, cosine(q, d));
        return best;
    }
    if (query_side.size() != 1 || doc_side.size() != 1)
        throw ParameterError("score: joint/meanpool sides hold exactly one embedding");
    return cosine(query_side[0], doc_side[0]);
}

RankedList rank(const std::string& query_id, const std::vector<Vec>& query_side,
                const Gallery& gallery) {
    if (gallery.size() == 0) throw DataError("rank: empty gallery");
    std::vector<std::pair<std::string, double>> scored;
    scored.reserve(gallery.size());
    if (gallery.strategy == Strategy::maxsim) {
        for (const auto& [id, views] : gallery.per_view)
            scored.emplace_back(id, score(gallery.strategy, query_side, views));
    } else {
        for (const auto& [id, emb] : gallery.single)
            scored.emplace_back(id, score(gallery.strategy, query_side, {emb}));
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    RankedList out;
    out.query_id = query_id;
    for (auto& [id, s] : scored) {
        out.ids.push_back(std::move(id));
        out.scores.push_back(s);
    }
    return out;
}

double recall_at_k(const std::vector<RankedList>& rankings,
                   const std::map<std::string, std::string>& truths, int k) {
    if (k < 1) throw ParameterError("recall_at_k: k must be >= 1");
    if (rankings.empty()) throw DataError("recall_at_k: no rankings");
    int hits = 0;
    for (const RankedList& r : rankings) {
        auto it = truths.find(r.query_id);
        if (it == truths.end()) throw DataError("recall_at_k: missing truth for " + r.query_id);
        const int top = std::min<int>(k, int(r.ids.size()));
        for (int i = 0; i < top; ++i) {
            if (r.ids[i] == it->second) {
                ++hits;
                break;
            }
        }
    }
    return double(hits) / double(rankings.size());
}

RecallReport eval_cir(const CorpusManifest& manifest, const Params& params, Strategy strategy,
                      bool two_stage) {
    const auto val_products = manifest.products_in(Split::val);
    const auto val_triplets = manifest.triplets_in(Split::val);
    if (val_triplets.empty()) throw DataError("eval_cir: no validation triplets");

    const Gallery gallery = encode_gallery(val_products, params, strategy);

    std::vector<RankedList> rankings;
    std::map<std::string, std::string> truths;
    for (size_t i = 0; i < val_triplets.size(); ++i) {
        const CIRTriplet& t = *val_triplets[i];
        const Product& src = manifest.require(t.src_id);
        std::vector<Vec> qside;
        if (strategy == Strategy::joint) {
            qside = {query_embedding(src, t.mod_short, params, two_stage)};
        } else {
            // per-view queries: each source view composed with the text
            std::vector<Vec> per_view;
            for (size_t v = 0; v < src.views.size(); ++v)
                per_view.push_back(
                    query_embedding(single_view_of(src, v), t.mod_short, params, two_stage));
            if (strategy == Strategy::meanpool)
                qside = {mean_of(per_view)};
            else
                qside = std::move(per_view);
        }
        const std::string qid = "q" + std::to_string(i);
        truths[qid] = t.tgt_id;
        rankings.push_back(rank(qid, qside, gallery));
    }

    RecallReport r;
    r.recall_at_5 = recall_at_k(rankings, truths, 5);
    r.recall_at_10 = recall_at_k(rankings, truths, 10);
    return r;
}

CrossModalReport eval_i2t_t2i(const CorpusManifest& manifest, const Params& params,
                              CaptionKind kind) {
    const auto val_products = manifest.products_in(Split::val);
    if (val_products.empty()) throw DataError("eval_i2t_t2i: no validation products");
    for (const Product* p : val_products)
        if (p->long_caption.empty() || p->short_caption.empty())
            throw DataError("eval_i2t_t2i: product without captions: " + p->id);

    Gallery visual;
    visual.strategy = Strategy::joint;
    Gallery text;
    text.strategy = Strategy::joint;
    for (const Product* p : val_products) {
        visual.single[p->id] = document_embedding(*p, params);
        const TokenList& cap =
            kind == CaptionKind::short_caption ? p->short_caption : p->long_caption;
        text.single[p->id] = embed_text(cap, params);
    }

    auto run_direction = [&](const Gallery& queries, const Gallery& gallery, double& r1,
                             double& r5) {
        std::vector<RankedList> rankings;
        std::map<std::string, std::string> truths;
        for (const auto& [id, emb] : queries.single) {
            truths[id] = id;
            rankings.push_back(rank(id, {emb}, gallery));
        }
        r1 = recall_at_k(rankings, truths, 1);
        r5 = recall_at_k(rankings, truths, 5);
    };

    CrossModalReport rep;
    run_direction(visual, text, rep.i2t_r1, rep.i2t_r5);
    run_direction(text, visual, rep.t2i_r1, rep.t2i_r5);
    return rep;
}

}  // namespace mvcir
