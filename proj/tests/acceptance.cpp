// Acceptance suite: one self-contained check per criterion, one PASS/FAIL
// line each, nonzero exit if anything fails. Tolerances and thresholds are
// pinned in the checks themselves.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "mvcir/cli.hpp"
#include "mvcir/datagen.hpp"
#include "mvcir/dialogue.hpp"
#include "mvcir/objectives.hpp"
#include "mvcir/retrieval.hpp"
#include "mvcir/trainer.hpp"
#include "oracles.hpp"

using namespace mvcir;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    std::string name;
    bool ok = true;
    std::string detail;
    double seconds = 0.0;

    void require(bool cond, const std::string& msg) {
        if (!cond && ok) {
            ok = false;
            detail = msg;
        }
    }
};

std::vector<Criterion> g_results;

void run(const std::string& name, double budget_seconds,
         const std::function<void(Criterion&)>& body) {
    Criterion c;
    c.name = name;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        body(c);
    } catch (const std::exception& e) {
        c.ok = false;
        c.detail = std::string("exception: ") + e.what();
    }
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.ok && c.seconds > budget_seconds) {
        c.ok = false;
        c.detail = "runtime " + std::to_string(c.seconds) + "s exceeds budget " +
                   std::to_string(budget_seconds) + "s";
    }
    g_results.push_back(c);
    std::ostringstream line;
    line.setf(std::ios::fixed);
    line.precision(1);
    line << (c.ok ? "PASS" : "FAIL") << "  " << name << "  (" << c.seconds << "s)";
    if (!c.ok) line << "  -- " << c.detail;
    std::cout << line.str() << std::endl;
}

std::vector<Vec> random_embeddings(Rng& rng, int b, int d) {
    std::vector<Vec> out(b, Vec(d));
    for (Vec& v : out)
        for (double& x : v) x = gauss(rng);
    return out;
}

BackboneConfig d8_config(int vocab = 32, int f = 4) {
    BackboneConfig c;
    c.hidden_dim = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    c.vocab_size = vocab;
    c.feature_dim = f;
    c.max_seq_len = 128;
    c.init_seed = 4;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return "<missing:" + p.string() + ">";
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// 1. SymInfoNCE oracle equivalence
// ---------------------------------------------------------------------------
void check_syminfonce_oracle(Criterion& c) {
    Rng rng(101);
    int batches = 0;
    for (int trial = 0; trial < 100; ++trial) {
        for (int b : {1, 2, 4, 8}) {
            for (int d : {4, 8}) {
                const auto q = random_embeddings(rng, b, d);
                const auto dd = random_embeddings(rng, b, d);
                const double tau = 0.05 + uniform01(rng) * 0.5;
                const double ours = sym_infonce(q, dd, tau);
                const double ref = oracle::sym_infonce_ref(q, dd, tau);
                c.require(std::abs(ours - ref) < 1e-6,
                          "oracle mismatch: " + std::to_string(ours) + " vs " +
                              std::to_string(ref));
                if (b == 1) c.require(ours == 0.0, "B=1 must give exactly 0");
                ++batches;
            }
        }
    }
    c.detail = std::to_string(batches) + " batches within 1e-6";
}

// ---------------------------------------------------------------------------
// 2. Gradient checks (finite differences, rtol 1e-3 / atol 1e-5)
// ---------------------------------------------------------------------------
void check_gradients(Criterion& c) {
    // (a) sym_infonce w.r.t. raw embeddings
    {
        Rng rng(7);
        const int b = 3, d = 5;
        const auto q0 = random_embeddings(rng, b, d);
        const auto d0 = random_embeddings(rng, b, d);
        Tape tape;
        std::vector<int> qn, dn;
        for (int i = 0; i < b; ++i) qn.push_back(tape.param(i, Mat::from_row(q0[i])));
        for (int i = 0; i < b; ++i) dn.push_back(tape.param(b + i, Mat::from_row(d0[i])));
        tape.backward(sym_infonce_node(tape, qn, dn, 0.2));

        Vec flat;
        for (const Vec& v : q0) flat.insert(flat.end(), v.begin(), v.end());
        for (const Vec& v : d0) flat.insert(flat.end(), v.begin(), v.end());
        auto f = [&](const Vec& x) {
            std::vector<Vec> q(b, Vec(d)), dd(b, Vec(d));
            for (int i = 0; i < b; ++i)
                for (int j = 0; j < d; ++j) {
                    q[i][j] = x[size_t(i) * d + j];
                    dd[i][j] = x[size_t(b + i) * d + j];
                }
            return sym_infonce(q, dd, 0.2);
        };
        Rng pick(13);
        for (int t = 0; t < 16; ++t) {
            const size_t i = pick() % flat.size();
            const double fd = oracle::central_diff(f, flat, i);
            const double ad =
                tape.grad(i < size_t(b) * d ? qn[i / d] : dn[i / d - b]).at(0, int(i % d));
            c.require(oracle::close(ad, fd, 1e-3, 1e-5), "sym_infonce grad mismatch");
        }
    }
    // (b) sft_loss w.r.t. logits
    {
        Rng rng(8);
        const int L = 5, V = 7;
        Mat logits(L, V);
        for (double& x : logits.a) x = gauss(rng);
        const std::vector<int> targets = {1, 3, 0, 6, 2};
        const std::vector<uint8_t> mask = {1, 0, 1, 1, 0};
        Tape tape;
        const int lp = tape.param(0, logits);
        tape.backward(tape.masked_xent(lp, targets, mask));
        auto f = [&](const Vec& x) {
            Mat m(L, V);
            m.a = x;
            return sft_loss(m, targets, mask);
        };
        Rng pick(17);
        for (int t = 0; t < 16; ++t) {
            const size_t i = pick() % logits.a.size();
            const double fd = oracle::central_diff(f, logits.a, i);
            c.require(oracle::close(tape.grad(lp).a[i], fd, 1e-3, 1e-5),
                      "sft_loss grad mismatch");
        }
    }
    // (c) end-to-end total_loss through a d=8 backbone (mt + align + cot)
    {
        const BackboneConfig cfg = d8_config();
        const Params params = init_params(cfg);
        CorpusManifest m = synth_corpus(7, 8, 4, 32, 2, 3);
        for (Product& p : m.products) p.split = Split::train;

        auto loss_at = [&](const Vec& flat) {
            Params p = params;
            p.flat = flat;
            Tape tape;
            ParamNodes pn = bind_params(tape, p);
            std::vector<int> qs, ss, ds, tt, ts;
            for (int i = 0; i < 2; ++i) {
                const CIRTriplet& tr = m.triplets[i];
                const Product& src = m.require(tr.src_id);
                const Product& tgt = m.require(tr.tgt_id);
                Rng r1(40 + i), r2(50 + i);
                const ForwardNodes qf = forward_graph(
                    tape, pn, cfg, build_two_stage_query(src, tr.mod_long, true, 0.5, r1));
                const ForwardNodes df =
                    forward_graph(tape, pn, cfg, build_document(tgt, true, 0.5, r2));
                qs.push_back(qf.marker_rows.back());
                ss.push_back(qf.marker_rows.front());
                ds.push_back(df.marker_rows.front());
                tt.push_back(forward_graph(tape, pn, cfg, build_text_only(tgt.long_caption))
                                 .marker_rows.front());
                ts.push_back(forward_graph(tape, pn, cfg, build_text_only(src.short_caption))
                                 .marker_rows.front());
            }
            const int l_cir = sym_infonce_node(tape, qs, ds, 0.07);
            const int l_doc = sym_infonce_node(tape, ds, tt, 0.07);
            const int l_src = sym_infonce_node(tape, ss, ts, 0.07);
            const int loss = tape.weighted_sum({l_cir, l_doc, l_src}, {1.0, 0.25, 0.25});
            return std::make_pair(loss, std::move(tape));
        };

        auto [loss_node, tape] = loss_at(params.flat);
        tape.backward(loss_node);
        const Vec grad = collect_gradients(tape, params);
        auto f = [&](const Vec& x) {
            auto [node, t2] = loss_at(x);
            return t2.scalar(node);
        };
        Rng pick(19);
        for (int t = 0; t < 16; ++t) {
            const size_t i = pick() % params.flat.size();
            const double fd = oracle::central_diff(f, params.flat, i);
            c.require(oracle::close(grad[i], fd, 1e-3, 1e-5),
                      "total_loss grad mismatch at coord " + std::to_string(i));
        }
    }
    c.detail = "48 coordinates across the three losses";
}

// ---------------------------------------------------------------------------
// 3. Causality / isolation
// ---------------------------------------------------------------------------
void check_causality(Criterion& c) {
    const BackboneConfig cfg = d8_config();
    const Params params = init_params(cfg);
    const CorpusManifest m = synth_corpus(3, 16, 4, 32, 1, 5);

    // (a) source embedding ignores the Turn-2 modification text, exactly
    for (int i = 0; i < 8; ++i) {
        const Product& p = m.products[i];
        Rng r1(i), r2(i);
        const TokenSequence q1 = build_two_stage_query(p, {5, 6, 7}, false, 0.0, r1);
        const TokenSequence q2 = build_two_stage_query(p, {20, 21}, false, 0.0, r2);
        const auto e1 = extract_embeddings(forward(q1, params), q1.emb_positions);
        const auto e2 = extract_embeddings(forward(q2, params), q2.emb_positions);
        c.require(e1[0] == e2[0], "source embedding changed with mod text");
        c.require(e1[1] != e2[1], "query embedding ignored the mod text");
    }

    // (b) Turn-1 prefix embedding equals the document embedding, exactly
    for (int i = 0; i < 8; ++i) {
        const Product& p = m.products[i];
        Rng r1(100 + i), r2(100 + i);
        const TokenSequence q = build_two_stage_query(p, {9, 2}, true, 0.7, r1);
        const TokenSequence doc = build_document(p, true, 0.7, r2);
        const auto qe = extract_embeddings(forward(q, params), q.emb_positions);
        const auto de = extract_embeddings(forward(doc, params), doc.emb_positions);
        c.require(qe[0] == de[0], "prefix embedding differs from document embedding");
    }

    // (c) CoT with rho=0 builds the exact CoT-off token sequence
    Rng gen(55);
    int checked = 0;
    for (int i = 0; i < 100; ++i) {
        const Product& p = m.products[i % m.products.size()];
        Rng ra(i), rb(i), rc(i), rd(i);
        c.require(build_document(p, true, 0.0, ra) == build_document(p, false, 0.0, rb),
                  "document rho=0 differs from cot-off");
        c.require(build_two_stage_query(p, {3, 4}, true, 0.0, rc) ==
                      build_two_stage_query(p, {3, 4}, false, 0.0, rd),
                  "two-stage rho=0 differs from cot-off");
        ++checked;
        (void)gen;
    }
    c.detail = "exact equality on " + std::to_string(checked) + " products";
}

// ---------------------------------------------------------------------------
// 4. Keep-ratio schedule
// ---------------------------------------------------------------------------
void check_keep_ratio(Criterion& c) {
    const long long T = 1000;
    c.require(keep_ratio(0, T) == 1.0, "rho(0) != 1");
    c.require(keep_ratio(T / 4, T) == 0.5, "rho(T/4) != 0.5");
    for (long long t = T / 2; t <= T; ++t)
        c.require(keep_ratio(t, T) == 0.0, "rho(t) != 0 for t >= T/2");
    double prev = 1.0;
    for (long long t = 0; t <= T; ++t) {
        const double r = keep_ratio(t, T);
        c.require(r <= prev, "rho not monotone");
        prev = r;
    }
    c.detail = "exact over a 1000-step sweep";
}

// ---------------------------------------------------------------------------
// 5. Scoring oracle (MaxSim brute force + ranking scale invariance)
// ---------------------------------------------------------------------------
void check_scoring(Criterion& c) {
    Rng rng(211);
    for (int trial = 0; trial < 1000; ++trial) {
        const int nq = 1 + int(rng() % 5), nd = 1 + int(rng() % 5);
        std::vector<Vec> q(nq, Vec(6)), d(nd, Vec(6));
        for (auto& v : q)
            for (double& x : v) x = gauss(rng);
        for (auto& v : d)
            for (double& x : v) x = gauss(rng);
        std::vector<std::vector<double>> qq(q.begin(), q.end()), dd(d.begin(), d.end());
        c.require(std::abs(score(Strategy::maxsim, q, d) - oracle::maxsim_ref(qq, dd)) < 1e-9,
                  "maxsim differs from brute force");
    }
    for (int trial = 0; trial < 100; ++trial) {
        Gallery g, gs;
        g.strategy = gs.strategy = Strategy::joint;
        for (int i = 0; i < 15; ++i) {
            Vec v(6);
            for (double& x : v) x = gauss(rng);
            Vec scaled = v;
            const double s = 0.05 + 8.0 * uniform01(rng);
            for (double& x : scaled) x *= s;
            g.single["p" + std::to_string(i)] = v;
            gs.single["p" + std::to_string(i)] = scaled;
        }
        Vec q(6);
        for (double& x : q) x = gauss(rng);
        Vec q2 = q;
        const double cq = 0.05 + 8.0 * uniform01(rng);
        for (double& x : q2) x *= cq;
        c.require(rank("q", {q}, g).ids == rank("q", {q2}, gs).ids,
                  "ranking changed under positive scaling");
    }
    c.detail = "1000 maxsim instances (1e-9), 100 scaling trials";
}

// ---------------------------------------------------------------------------
// 6. Recall calibration at random init
// ---------------------------------------------------------------------------
void check_recall_calibration(Criterion& c) {
    // Truths are drawn uniformly over the gallery, making the hit
    // probability exactly k/G for any fixed ranking; the rankings come from
    // untrained models over the usual query path.
    const int k = 5, G = 50;
    int hits = 0, total = 0;
    for (uint64_t seed = 1; seed <= 30; ++seed) {
        CorpusManifest m = split_products(synth_corpus(seed, 250, 8, 64, 2, 5), 0.2, seed);
        BackboneConfig bc;
        bc.vocab_size = 64;
        bc.feature_dim = 8;
        bc.init_seed = seed * 1000 + 1;
        const Params params = init_params(bc);
        const auto val = m.products_in(Split::val);
        c.require(int(val.size()) == G, "gallery size is not 50");
        const Gallery gallery = encode_gallery(val, params, Strategy::joint);
        Rng truth_rng(seed * 77 + 5);
        for (const CIRTriplet* t : m.triplets_in(Split::val)) {
            const Product& src = m.require(t->src_id);
            Rng r0(0);
            const TokenSequence q = build_two_stage_query(src, t->mod_short, false, 0.0, r0);
            const auto embs = extract_embeddings(forward(q, params), q.emb_positions);
            const RankedList rl = rank("q", {embs.back()}, gallery);
            const std::string truth = val[truth_rng() % val.size()]->id;
            ++total;
            for (int i = 0; i < k; ++i)
                if (rl.ids[i] == truth) {
                    ++hits;
                    break;
                }
        }
    }
    const double p = double(k) / G;
    const double obs = double(hits) / total;
    const double sigma = std::sqrt(p * (1.0 - p) / total);
    c.require(std::abs(obs - p) < 3.0 * sigma, "calibration outside 3 sigma");
    std::ostringstream d;
    d.precision(4);
    d << "observed " << obs << " vs " << p << " (3s = " << 3.0 * sigma << ", n = " << total
      << ")";
    c.detail = d.str();
}

// ---------------------------------------------------------------------------
// 7. Learnability analogue on the standard synthetic corpus
// ---------------------------------------------------------------------------
void check_learnability(Criterion& c) {
    const CorpusManifest m = split_products(synth_corpus(7, 256, 8, 64, 2, 5), 0.2, 7);
    c.require(int(m.products.size()) == 256, "corpus must hold 256 products");
    c.require(int(m.triplets.size()) <= 512, "split never grows the triplet list");
    c.require(int(synth_corpus(7, 256, 8, 64, 2, 5).triplets.size()) == 512,
              "standard corpus must hold 512 triplets");

    BackboneConfig bc;
    bc.vocab_size = 64;
    bc.feature_dim = 8;
    bc.init_seed = 7;

    TrainConfig cfg;  // desk-scale lr; everything else at defaults
    cfg.mt = true;
    cfg.align = true;
    cfg.epochs = 1;
    cfg.batch = 16;
    cfg.lr = 2e-3;
    cfg.seed = 7;

    const TrainResult res = train(cfg, m, init_params(bc));
    const RecallReport rep = eval_cir(m, res.params, Strategy::joint, true);

    const double G = double(m.products_in(Split::val).size());
    const double baseline = 5.0 / G;
    c.require(rep.recall_at_5 >= 5.0 * baseline,
              "recall@5 " + std::to_string(rep.recall_at_5) + " below 5x baseline " +
                  std::to_string(5.0 * baseline));
    c.require(rep.recall_at_10 >= rep.recall_at_5, "recall@10 below recall@5");
    std::ostringstream d;
    d.precision(3);
    d << "r@5 " << rep.recall_at_5 << " vs 5x baseline " << 5.0 * baseline << ", r@10 "
      << rep.recall_at_10;
    c.detail = d.str();
}

// ---------------------------------------------------------------------------
// 8. Ablation harness structure (dry run)
// ---------------------------------------------------------------------------
void check_ablation_structure(Criterion& c) {
    CorpusManifest m = synth_corpus(5, 16, 4, 32, 1, 3);
    for (Product& p : m.products) p.split = Split::train;
    TrainConfig base;
    base.batch = 8;
    const AblationTable t = run_ablation(m, base, d8_config(), /*dry_run=*/true);
    c.require(t.rows.size() == 16, "expected 16 rows");

    const std::vector<TrainConfig> configs = ablation_matrix(base);
    for (size_t i = 0; i < t.rows.size(); ++i) {
        const AblationRow& r = t.rows[i];
        c.require(r.config.mt == configs[i].mt && r.config.align == configs[i].align &&
                      r.config.cot == configs[i].cot && r.config.sft_init == configs[i].sft_init,
                  "row order mismatch at " + std::to_string(i));
        c.require(r.logs_l_doc == r.config.align, "l_doc gating wrong");
        c.require(r.logs_l_src == (r.config.align && r.config.mt), "l_src gating wrong");
    }
    const std::string csv = t.to_csv();
    c.require(csv.substr(0, csv.find('\n')) ==
                  "mt,align,cot,sft,l_doc,l_src,recall_at_5,recall_at_10",
              "csv header changed");
    c.detail = "16 rows, gating verified structurally";
}

// ---------------------------------------------------------------------------
// 9. Pipeline invariants over 1,000 products
// ---------------------------------------------------------------------------
void check_pipeline(Criterion& c) {
    const CorpusManifest m = synth_corpus(17, 1000, 4, 32, 2, 4);

    StubAnnotator annot;
    annot.vocab_size = 32;
    annot.non_clothing_every = 101;
    const Stage1Result r1 = stage1_caption(m.products, annot);
    c.require(r1.products.size() <= m.products.size(), "stage 1 grew the product set");

    StubVerifier verif(0.0437);
    const Stage2Result r2 = stage2_filter(r1.products, verif);
    c.require(r2.products.size() <= r1.products.size(), "stage 2 grew the product set");
    c.require(r2.report.checked == r2.report.errors + r2.report.retained,
              "stage 2 report arithmetic broken");
    const double rate = double(r2.report.errors) / double(r2.report.checked);
    c.require(std::abs(rate - 0.0437) < 0.002, "flag rate drifted from 4.37%");

    StubSelector selector(32);
    Rng rng(17);
    const auto triplets = stage3_triplets(r2.products, default_visual_embed(),
                                          default_caption_embed(32), selector, rng);
    std::map<std::string, int> per_source;
    std::set<std::string> ids;
    for (const Product& p : r2.products) ids.insert(p.id);
    for (const CIRTriplet& t : triplets) {
        c.require(ids.count(t.src_id) == 1 && ids.count(t.tgt_id) == 1,
                  "triplet endpoint left the pipeline set");
        c.require(t.src_id != t.tgt_id, "degenerate triplet");
        ++per_source[t.src_id];
    }
    for (const auto& [src, n] : per_source)
        c.require(n <= 2, "more than 2 selections for " + src);

    std::ostringstream d;
    d << m.products.size() << " -> " << r1.products.size() << " -> " << r2.products.size()
      << " products, " << triplets.size() << " triplets, "
      << "stage-2: " << r2.report.checked << " = " << r2.report.errors << " + "
      << r2.report.retained;
    c.detail = d.str();
}

// ---------------------------------------------------------------------------
// 10. Command determinism: byte-identical artifacts across two runs
// ---------------------------------------------------------------------------
void check_determinism(Criterion& c) {
    const fs::path root = fs::temp_directory_path() / "mvcir_acceptance_det";
    fs::remove_all(root);

    auto cli = [&](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        if (code != 0) throw Error("cli failed: " + err.str());
        return out.str();
    };

    std::vector<std::pair<std::string, std::vector<std::string>>> artifacts;
    for (const std::string tag : {"a", "b"}) {
        const std::string dir = (root / tag).string();
        const std::string manifest = dir + "/synth/manifest.jsonl";
        cli({"--seed", "7", "--out", dir + "/synth", "synth", "--products", "24",
             "--feature-dim", "4", "--vocab", "32", "--views-min", "1", "--views-max", "3"});
        cli({"--seed", "7", "--out", dir + "/train", "train", "--manifest", manifest,
             "--align", "--epochs", "1", "--batch", "8", "--lr", "1e-3", "--hidden-dim", "16",
             "--layers", "1", "--heads", "2"});
        cli({"--seed", "7", "--out", dir + "/eval", "eval", "--manifest", manifest,
             "--checkpoint", dir + "/train/checkpoint.bin", "--strategy", "joint",
             "--captions", "short"});
        cli({"--seed", "7", "--out", dir + "/ablate", "ablate", "--manifest", manifest,
             "--dry-run"});
        cli({"--seed", "7", "--out", dir + "/pipe", "pipeline", "--manifest", manifest,
             "--stages", "1,2,3", "--stub"});
        artifacts.push_back(
            {tag,
             {dir + "/synth/manifest.jsonl", dir + "/train/trainlog.jsonl",
              dir + "/train/checkpoint.bin", dir + "/eval/metrics.json",
              dir + "/eval/metrics.csv", dir + "/ablate/ablation.csv",
              dir + "/ablate/ablation.json", dir + "/pipe/stage1.jsonl",
              dir + "/pipe/stage2.jsonl", dir + "/pipe/stage3.jsonl",
              dir + "/pipe/stage2_report.json"}});
    }
    const auto& a = artifacts[0].second;
    const auto& b = artifacts[1].second;
    for (size_t i = 0; i < a.size(); ++i)
        c.require(slurp(a[i]) == slurp(b[i]), "artifact differs: " + fs::path(a[i]).filename().string());
    fs::remove_all(root);
    c.detail = std::to_string(a.size()) + " artifacts byte-identical across two runs";
}

}  // namespace

int main() {
    std::cout << "acceptance suite\n----------------\n";
    run("syminfonce-oracle", 5.0, check_syminfonce_oracle);
    run("gradient-checks", 30.0, check_gradients);
    run("causality-isolation", 10.0, check_causality);
    run("keep-ratio-schedule", 5.0, check_keep_ratio);
    run("scoring-oracle", 10.0, check_scoring);
    run("recall-calibration", 60.0, check_recall_calibration);
    run("learnability", 300.0, check_learnability);
    run("ablation-structure", 10.0, check_ablation_structure);
    run("pipeline-invariants", 30.0, check_pipeline);
    run("command-determinism", 120.0, check_determinism);

    int failed = 0;
    for (const Criterion& c : g_results) failed += c.ok ? 0 : 1;
    std::cout << "----------------\n"
              << (g_results.size() - failed) << "/" << g_results.size() << " criteria passed\n";
    return failed == 0 ? 0 : 1;
}
