#include "mvcir/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "mvcir/datagen.hpp"
#include "mvcir/dialogue.hpp"
#include "mvcir/trainer.hpp"

namespace mvcir {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// Option bags. Flag values are filled by CLI11 first; a config file, when
// given, overrides them section by section.
// ---------------------------------------------------------------------------

struct GlobalOpts {
    uint64_t seed = 1;
    std::string out_dir = "out";
    std::string config_path;
};

struct CorpusOpts {
    int products = 256;
    int feature_dim = 8;
    int vocab = 64;
    int views_min = 2;
    int views_max = 5;
    double val_fraction = 0.2;
};

struct ModelOpts {
    int hidden_dim = 64;
    int layers = 2;
    int heads = 4;
    int max_seq_len = 256;
};

struct TrainOpts {
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
    double sft_fraction = 0.2;
    std::string manifest;
    std::string init_checkpoint;
};

struct EvalOpts {
    std::string manifest;
    std::string checkpoint;
    std::string strategy = "joint";
    bool mt = false;
    std::string captions;  // "", "short" or "long"
};

struct PipelineOpts {
    std::string manifest;
    std::string stages = "1,2,3";
    bool stub = true;
    bool resume = false;
    double flag_rate = 0.0437;
    int non_clothing_every = 0;
};

struct DumpOpts {
    std::string manifest;
    std::string mode = "document";
    std::string product;
    int triplet = 0;
    bool cot = false;
    double rho = 0.0;
};

void ensure_out_dir(GlobalOpts& g) {
    if (const char* root = std::getenv("MVCIR_OUT_ROOT"); root && *root) {
        fs::path p(g.out_dir);
        if (p.is_relative()) g.out_dir = (fs::path(root) / p).string();
    }
    fs::create_directories(g.out_dir);
}

std::string out_path(const GlobalOpts& g, const std::string& name) {
    return (fs::path(g.out_dir) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + path);
    f << text;
}

// ---------------------------------------------------------------------------
// Config file. JSON with optional sections; values present in the file
// override command-line flags. Unknown keys anywhere are rejected.
// ---------------------------------------------------------------------------

void check_keys(const ordered_json& j, const std::set<std::string>& allowed,
                const std::string& where) {
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key))
            throw ParameterError("config: unknown key '" + key + "' in " + where);
}

ordered_json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParameterError(std::string("config: ") + e.what());
    }
    check_keys(j, {"seed", "out", "corpus", "model", "train", "eval", "pipeline"}, "top level");
    return j;
}

template <typename T>
void maybe(const ordered_json& j, const char* key, T& into) {
    if (j.contains(key)) into = j.at(key).get<T>();
}

void apply_global(const ordered_json& j, GlobalOpts& g) {
    maybe(j, "seed", g.seed);
    maybe(j, "out", g.out_dir);
}

void apply_corpus(const ordered_json& root, CorpusOpts& c) {
    if (!root.contains("corpus")) return;
    const auto& j = root.at("corpus");
    check_keys(j, {"products", "feature_dim", "vocab", "views_min", "views_max", "val_fraction"},
               "corpus");
    maybe(j, "products", c.products);
    maybe(j, "feature_dim", c.feature_dim);
    maybe(j, "vocab", c.vocab);
    maybe(j, "views_min", c.views_min);
    maybe(j, "views_max", c.views_max);
    maybe(j, "val_fraction", c.val_fraction);
}

void apply_model(const ordered_json& root, ModelOpts& m) {
    if (!root.contains("model")) return;
    const auto& j = root.at("model");
    check_keys(j, {"hidden_dim", "layers", "heads", "max_seq_len"}, "model");
    maybe(j, "hidden_dim", m.hidden_dim);
    maybe(j, "layers", m.layers);
    maybe(j, "heads", m.heads);
    maybe(j, "max_seq_len", m.max_seq_len);
}

void apply_train(const ordered_json& root, TrainOpts& t) {
    if (!root.contains("train")) return;
    const auto& j = root.at("train");
    check_keys(j,
               {"mt", "align", "cot", "sft_init", "epochs", "batch", "lr", "weight_decay",
                "grad_clip", "tau", "lambda_d", "lambda_s", "sft_fraction", "manifest",
                "init_checkpoint"},
               "train");
    maybe(j, "mt", t.mt);
    maybe(j, "align", t.align);
    maybe(j, "cot", t.cot);
    maybe(j, "sft_init", t.sft_init);
    maybe(j, "epochs", t.epochs);
    maybe(j, "batch", t.batch);
    maybe(j, "lr", t.lr);
    maybe(j, "weight_decay", t.weight_decay);
    maybe(j, "grad_clip", t.grad_clip);
    maybe(j, "tau", t.tau);
    maybe(j, "lambda_d", t.lambda_d);
    maybe(j, "lambda_s", t.lambda_s);
    maybe(j, "sft_fraction", t.sft_fraction);
    maybe(j, "manifest", t.manifest);
    maybe(j, "init_checkpoint", t.init_checkpoint);
}

void apply_eval(const ordered_json& root, EvalOpts& e) {
    if (!root.contains("eval")) return;
    const auto& j = root.at("eval");
    check_keys(j, {"manifest", "checkpoint", "strategy", "mt", "captions"}, "eval");
    maybe(j, "manifest", e.manifest);
    maybe(j, "checkpoint", e.checkpoint);
    maybe(j, "strategy", e.strategy);
    maybe(j, "mt", e.mt);
    maybe(j, "captions", e.captions);
}

void apply_pipeline(const ordered_json& root, PipelineOpts& p) {
    if (!root.contains("pipeline")) return;
    const auto& j = root.at("pipeline");
    check_keys(j, {"manifest", "stages", "stub", "resume", "flag_rate", "non_clothing_every"},
               "pipeline");
    maybe(j, "manifest", p.manifest);
    maybe(j, "stages", p.stages);
    maybe(j, "stub", p.stub);
    maybe(j, "resume", p.resume);
    maybe(j, "flag_rate", p.flag_rate);
    maybe(j, "non_clothing_every", p.non_clothing_every);
}

TrainConfig to_train_config(const TrainOpts& t, uint64_t seed) {
    TrainConfig cfg;
    cfg.mt = t.mt;
    cfg.align = t.align;
    cfg.cot = t.cot;
    cfg.sft_init = t.sft_init;
    cfg.epochs = t.epochs;
    cfg.batch = t.batch;
    cfg.lr = t.lr;
    cfg.weight_decay = t.weight_decay;
    cfg.grad_clip = t.grad_clip;
    cfg.tau = t.tau;
    cfg.lambda_d = t.lambda_d;
    cfg.lambda_s = t.lambda_s;
    cfg.seed = seed;
    return cfg;
}

BackboneConfig to_backbone_config(const ModelOpts& m, int vocab, int feature_dim,
                                  uint64_t seed) {
    BackboneConfig c;
    c.hidden_dim = m.hidden_dim;
    c.n_layers = m.layers;
    c.n_heads = m.heads;
    c.vocab_size = vocab;
    c.feature_dim = feature_dim;
    c.max_seq_len = m.max_seq_len;
    c.init_seed = seed;
    return c;
}

ordered_json train_config_json(const TrainOpts& t, const ModelOpts& m) {
    ordered_json j;
    j["mt"] = t.mt;
    j["align"] = t.align;
    j["cot"] = t.cot;
    j["sft_init"] = t.sft_init;
    j["epochs"] = t.epochs;
    j["batch"] = t.batch;
    j["lr"] = t.lr;
    j["weight_decay"] = t.weight_decay;
    j["grad_clip"] = t.grad_clip;
    j["tau"] = t.tau;
    j["lambda_d"] = t.lambda_d;
    j["lambda_s"] = t.lambda_s;
    j["sft_fraction"] = t.sft_fraction;
    j["model"] = {{"hidden_dim", m.hidden_dim},
                  {"layers", m.layers},
                  {"heads", m.heads},
                  {"max_seq_len", m.max_seq_len}};
    return j;
}

void write_resolved_config(const GlobalOpts& g, const std::string& command,
                           const std::string& section_name, ordered_json section) {
    ordered_json j;
    j["command"] = command;
    j["seed"] = g.seed;
    j["out"] = g.out_dir;
    j[section_name] = std::move(section);
    write_text(out_path(g, "resolved_config.json"), j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_synth(const GlobalOpts& g, const CorpusOpts& c, std::ostream& out) {
    CorpusManifest m = synth_corpus(g.seed, c.products, c.feature_dim, c.vocab, c.views_min,
                                    c.views_max);
    m = split_products(m, c.val_fraction, g.seed);
    save_manifest(m, out_path(g, "manifest.jsonl"));

    ordered_json section;
    section["products"] = c.products;
    section["feature_dim"] = c.feature_dim;
    section["vocab"] = c.vocab;
    section["views_min"] = c.views_min;
    section["views_max"] = c.views_max;
    section["val_fraction"] = c.val_fraction;
    write_resolved_config(g, "synth", "corpus", section);

    const auto train_p = m.products_in(Split::train).size();
    const auto val_p = m.products_in(Split::val).size();
    const auto train_t = m.triplets_in(Split::train).size();
    const auto val_t = m.triplets_in(Split::val).size();
    out << "manifest: " << out_path(g, "manifest.jsonl") << "\n"
        << "products: " << m.products.size() << " (train " << train_p << ", val " << val_p
        << ")\n"
        << "triplets: " << m.triplets.size() << " (train " << train_t << ", val " << val_t
        << ")\n";
    return 0;
}

int cmd_train(const GlobalOpts& g, const TrainOpts& t, const ModelOpts& mo, std::ostream& out) {
    if (t.manifest.empty()) throw ParameterError("train: --manifest is required");
    const CorpusManifest manifest = load_manifest(t.manifest);
    const TrainConfig cfg = to_train_config(t, g.seed);

    Params start = t.init_checkpoint.empty()
                       ? init_params(to_backbone_config(mo, manifest.vocab_size,
                                                        manifest.feature_dim, g.seed))
                       : load_checkpoint(t.init_checkpoint);
    if (start.config.vocab_size != manifest.vocab_size ||
        start.config.feature_dim != manifest.feature_dim)
        throw ParameterError("train: checkpoint does not match the manifest dimensions");

    if (t.sft_init && t.init_checkpoint.empty()) {
        start = run_sft(cfg, manifest, start, t.sft_fraction);
        save_checkpoint(start, out_path(g, "sft_checkpoint.bin"));
        out << "sft checkpoint: " << out_path(g, "sft_checkpoint.bin") << "\n";
    }

    TrainResult res = train(cfg, manifest, start);
    save_checkpoint(res.params, out_path(g, "checkpoint.bin"));
    save_train_log(res.log, out_path(g, "trainlog.jsonl"));
    write_resolved_config(g, "train", "train", train_config_json(t, mo));

    out << "variant: " << cfg.variant_name() << "\n"
        << "steps: " << res.log.total_steps << "\n"
        << "final total loss: " << (res.log.steps.empty() ? 0.0 : res.log.steps.back().total)
        << "\n"
        << "checkpoint: " << out_path(g, "checkpoint.bin") << "\n"
        << "trainlog: " << out_path(g, "trainlog.jsonl") << "\n";
    return 0;
}

int cmd_eval(const GlobalOpts& g, const EvalOpts& e, std::ostream& out) {
    if (e.manifest.empty()) throw ParameterError("eval: --manifest is required");
    if (e.checkpoint.empty()) throw ParameterError("eval: --checkpoint is required");
    const CorpusManifest manifest = load_manifest(e.manifest);
    const Params params = load_checkpoint(e.checkpoint);
    const Strategy strategy = strategy_from_string(e.strategy);

    const RecallReport rep = eval_cir(manifest, params, strategy, e.mt);

    ordered_json j;
    j["dataset"] = "val";
    j["strategy"] = e.strategy;
    j["two_stage_queries"] = e.mt;
    j["recall_at_5"] = rep.recall_at_5;
    j["recall_at_10"] = rep.recall_at_10;

    std::ostringstream csv;
    csv << "config,dataset,strategy,k,recall\n";
    csv << (e.mt ? "mt" : "single") << ",val," << e.strategy << ",5," << rep.recall_at_5 << "\n";
    csv << (e.mt ? "mt" : "single") << ",val," << e.strategy << ",10," << rep.recall_at_10
        << "\n";

    if (!e.captions.empty()) {
        if (e.captions != "long" && e.captions != "short")
            throw ParameterError("eval: --captions must be short or long");
        const CaptionKind kind =
            e.captions == "long" ? CaptionKind::long_caption : CaptionKind::short_caption;
        const CrossModalReport xm = eval_i2t_t2i(manifest, params, kind);
        j["captions"] = e.captions;
        j["i2t"] = {{"recall_at_1", xm.i2t_r1}, {"recall_at_5", xm.i2t_r5}};
        j["t2i"] = {{"recall_at_1", xm.t2i_r1}, {"recall_at_5", xm.t2i_r5}};
        csv << "i2t,val," << e.captions << ",1," << xm.i2t_r1 << "\n";
        csv << "i2t,val," << e.captions << ",5," << xm.i2t_r5 << "\n";
        csv << "t2i,val," << e.captions << ",1," << xm.t2i_r1 << "\n";
        csv << "t2i,val," << e.captions << ",5," << xm.t2i_r5 << "\n";
    }

    write_text(out_path(g, "metrics.json"), j.dump(2) + "\n");
    write_text(out_path(g, "metrics.csv"), csv.str());
    ordered_json section;
    section["manifest"] = e.manifest;
    section["checkpoint"] = e.checkpoint;
    section["strategy"] = e.strategy;
    section["mt"] = e.mt;
    section["captions"] = e.captions;
    write_resolved_config(g, "eval", "eval", section);

    out << j.dump(2) << "\n";
    return 0;
}

int cmd_ablate(const GlobalOpts& g, const TrainOpts& t, const ModelOpts& mo, bool dry_run,
               std::ostream& out) {
    if (t.manifest.empty()) throw ParameterError("ablate: --manifest is required");
    const CorpusManifest manifest = load_manifest(t.manifest);
    const TrainConfig base = to_train_config(t, g.seed);
    const BackboneConfig model =
        to_backbone_config(mo, manifest.vocab_size, manifest.feature_dim, g.seed);

    const AblationTable table = run_ablation(manifest, base, model, dry_run, t.sft_fraction);

    write_text(out_path(g, "ablation.csv"), table.to_csv());
    ordered_json rows = ordered_json::array();
    for (const AblationRow& r : table.rows) {
        ordered_json j;
        j["variant"] = r.config.variant_name();
        j["mt"] = r.config.mt;
        j["align"] = r.config.align;
        j["cot"] = r.config.cot;
        j["sft"] = r.config.sft_init;
        j["logs_l_doc"] = r.logs_l_doc;
        j["logs_l_src"] = r.logs_l_src;
        if (r.recall_at_5) j["recall_at_5"] = *r.recall_at_5;
        if (r.recall_at_10) j["recall_at_10"] = *r.recall_at_10;
        rows.push_back(j);
    }
    ordered_json report;
    report["dry_run"] = dry_run;
    report["rows"] = rows;
    write_text(out_path(g, "ablation.json"), report.dump(2) + "\n");
    ordered_json section = train_config_json(t, mo);
    section["dry_run"] = dry_run;
    write_resolved_config(g, "ablate", "train", section);

    out << table.to_csv();
    return 0;
}

int cmd_pipeline(const GlobalOpts& g, const PipelineOpts& p, std::ostream& out) {
    if (p.manifest.empty()) throw ParameterError("pipeline: --manifest is required");
    if (!p.stub) throw ParameterError("pipeline: only --stub clients are available offline");

    const CorpusManifest input = load_manifest(p.manifest);
    std::set<int> stages;
    {
        std::stringstream ss(p.stages);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (item.empty()) continue;
            const int s = std::stoi(item);
            if (s < 1 || s > 3) throw ParameterError("pipeline: stages must be in 1..3");
            stages.insert(s);
        }
        if (stages.empty()) throw ParameterError("pipeline: no stages selected");
    }

    auto stage_file = [&](int s) { return out_path(g, "stage" + std::to_string(s) + ".jsonl"); };
    auto report_file = [&](int s) {
        return out_path(g, "stage" + std::to_string(s) + "_report.json");
    };
    auto canonical = [](std::vector<Product> ps) {
        std::sort(ps.begin(), ps.end(),
                  [](const Product& a, const Product& b) { return a.id < b.id; });
        return ps;
    };
    auto save_products = [&](const std::vector<Product>& ps, const std::vector<CIRTriplet>& ts,
                             const std::string& path) {
        CorpusManifest m;
        m.feature_dim = input.feature_dim;
        m.vocab_size = input.vocab_size;
        m.generator_seed = g.seed;
        m.products = ps;
        m.triplets = ts;
        save_manifest(m, path);
    };

    std::vector<Product> current = input.products;

    if (stages.count(1)) {
        if (p.resume && fs::exists(stage_file(1))) {
            current = load_manifest(stage_file(1)).products;
            out << "stage 1: resumed from " << stage_file(1) << "\n";
        } else {
            StubAnnotator annotator;
            annotator.vocab_size = input.vocab_size;
            annotator.non_clothing_every = p.non_clothing_every;
            Stage1Result r1 = stage1_caption(current, annotator);
            current = canonical(std::move(r1.products));
            save_products(current, {}, stage_file(1));
            ordered_json rep;
            rep["stage"] = 1;
            rep["input"] = input.products.size();
            rep["annotated"] = current.size();
            rep["dropped_non_clothing"] = r1.dropped_non_clothing;
            ordered_json errs = ordered_json::array();
            for (const StageError& e : r1.errors)
                errs.push_back({{"id", e.product_id}, {"message", e.message}});
            rep["errors"] = errs;
            write_text(report_file(1), rep.dump(2) + "\n");
            out << "stage 1: annotated " << current.size() << " products ("
                << r1.dropped_non_clothing << " non-clothing dropped, " << r1.errors.size()
                << " failed)\n";
        }
    }

    if (stages.count(2)) {
        if (p.resume && fs::exists(stage_file(2))) {
            current = load_manifest(stage_file(2)).products;
            out << "stage 2: resumed from " << stage_file(2) << "\n";
        } else {
            StubVerifier verifier(p.flag_rate);
            Stage2Result r2 = stage2_filter(current, verifier);
            current = canonical(std::move(r2.products));
            save_products(current, {}, stage_file(2));
            ordered_json rep;
            rep["stage"] = 2;
            rep["checked"] = r2.report.checked;
            rep["errors"] = r2.report.errors;
            rep["retained"] = r2.report.retained;
            rep["error_rate"] = r2.report.error_rate;
            write_text(report_file(2), rep.dump(2) + "\n");
            out << "stage 2: checked " << r2.report.checked << ", flagged " << r2.report.errors
                << ", retained " << r2.report.retained << "\n";
        }
    }

    if (stages.count(3)) {
        if (p.resume && fs::exists(stage_file(3))) {
            out << "stage 3: resumed from " << stage_file(3) << "\n";
        } else {
            StubSelector selector(input.vocab_size);
            Rng rng(g.seed);
            // triplets are constructed independently within each partition;
            // an unsplit input is a single partition. Products whose category
            // has no partner left in their partition are skipped (upstream
            // filtering can orphan a category) and reported.
            std::vector<CIRTriplet> triplets;
            int sources = 0, skipped = 0;
            for (Split s : {Split::train, Split::val, Split::unassigned}) {
                std::vector<Product> group;
                for (const Product& prod : current)
                    if (prod.split == s) group.push_back(prod);
                std::map<std::string, int> category_counts;
                for (const Product& prod : group) ++category_counts[prod.category];
                std::vector<Product> usable;
                for (const Product& prod : group) {
                    if (category_counts[prod.category] >= 2)
                        usable.push_back(prod);
                    else
                        ++skipped;
                }
                if (usable.size() < 2) {
                    skipped += int(usable.size());
                    continue;
                }
                sources += int(usable.size());
                const std::vector<CIRTriplet> part =
                    stage3_triplets(usable, default_visual_embed(),
                                    default_caption_embed(input.vocab_size), selector, rng);
                triplets.insert(triplets.end(), part.begin(), part.end());
            }
            save_products(current, triplets, stage_file(3));
            ordered_json rep;
            rep["stage"] = 3;
            rep["sources"] = sources;
            rep["skipped_singleton_category"] = skipped;
            rep["triplets"] = triplets.size();
            write_text(report_file(3), rep.dump(2) + "\n");
            out << "stage 3: built " << triplets.size() << " triplets from " << sources
                << " products (" << skipped << " skipped)\n";
        }
    }

    ordered_json section;
    section["manifest"] = p.manifest;
    section["stages"] = p.stages;
    section["stub"] = p.stub;
    section["resume"] = p.resume;
    section["flag_rate"] = p.flag_rate;
    section["non_clothing_every"] = p.non_clothing_every;
    write_resolved_config(g, "pipeline", "pipeline", section);
    return 0;
}

int cmd_dump_seq(const GlobalOpts& g, const DumpOpts& d, std::ostream& out) {
    const CorpusManifest manifest = load_manifest(d.manifest);
    Rng rng(g.seed);
    TokenSequence seq;
    if (d.mode == "sft_caption") {
        seq = build_sft_caption_dialogue(manifest.require(d.product)).seq;
    } else if (d.mode == "sft_triplet") {
        if (d.triplet < 0 || d.triplet >= int(manifest.triplets.size()))
            throw IndexError("dump-seq: triplet index out of range");
        seq = build_sft_triplet_dialogue(manifest.triplets[d.triplet], manifest).seq;
    } else if (d.mode == "document") {
        seq = build_document(manifest.require(d.product), d.cot, d.rho, rng);
    } else if (d.mode == "text_only") {
        seq = build_text_only(manifest.require(d.product).long_caption);
    } else if (d.mode == "single_turn" || d.mode == "two_stage") {
        if (d.triplet < 0 || d.triplet >= int(manifest.triplets.size()))
            throw IndexError("dump-seq: triplet index out of range");
        const CIRTriplet& t = manifest.triplets[d.triplet];
        const Product& src = manifest.require(t.src_id);
        seq = d.mode == "single_turn"
                  ? build_single_turn_query(src, t.mod_short)
                  : build_two_stage_query(src, t.mod_short, d.cot, d.rho, rng);
    } else {
        throw ParameterError("dump-seq: unknown mode " + d.mode);
    }
    out << format_sequence(seq);
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"multi-view composed-image-retrieval testbed"};
    app.require_subcommand(1);

    GlobalOpts g;
    CorpusOpts c;
    ModelOpts mo;
    TrainOpts t;
    EvalOpts e;
    PipelineOpts p;
    DumpOpts d;
    bool dry_run = false;

    app.add_option("--seed", g.seed, "global seed");
    app.add_option("--out", g.out_dir, "output directory");
    app.add_option("--config", g.config_path, "JSON config file (overrides flags)");

    auto add_model_opts = [&](CLI::App* cmd) {
        cmd->add_option("--hidden-dim", mo.hidden_dim);
        cmd->add_option("--layers", mo.layers);
        cmd->add_option("--heads", mo.heads);
        cmd->add_option("--max-seq-len", mo.max_seq_len);
    };
    auto add_train_opts = [&](CLI::App* cmd) {
        cmd->add_option("--manifest", t.manifest)->required();
        cmd->add_flag("--mt", t.mt, "two-stage dialogue queries");
        cmd->add_flag("--align", t.align, "caption-based alignment losses");
        cmd->add_flag("--cot", t.cot, "chain-of-thought with progressive removal");
        cmd->add_flag("--sft-init", t.sft_init, "SFT pre-training as initialization");
        cmd->add_option("--epochs", t.epochs);
        cmd->add_option("--batch", t.batch);
        cmd->add_option("--lr", t.lr);
        cmd->add_option("--weight-decay", t.weight_decay);
        cmd->add_option("--grad-clip", t.grad_clip);
        cmd->add_option("--tau", t.tau);
        cmd->add_option("--lambda-d", t.lambda_d);
        cmd->add_option("--lambda-s", t.lambda_s);
        cmd->add_option("--sft-fraction", t.sft_fraction);
        add_model_opts(cmd);
    };

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic corpus manifest");
    synth->add_option("--products", c.products)->required();
    synth->add_option("--feature-dim", c.feature_dim);
    synth->add_option("--vocab", c.vocab);
    synth->add_option("--views-min", c.views_min);
    synth->add_option("--views-max", c.views_max);
    synth->add_option("--val-fraction", c.val_fraction);

    CLI::App* train_cmd = app.add_subcommand("train", "contrastive training");
    add_train_opts(train_cmd);
    train_cmd->add_option("--init-checkpoint", t.init_checkpoint);

    CLI::App* eval_cmd = app.add_subcommand("eval", "gallery evaluation");
    eval_cmd->add_option("--manifest", e.manifest)->required();
    eval_cmd->add_option("--checkpoint", e.checkpoint)->required();
    eval_cmd->add_option("--strategy", e.strategy, "joint|meanpool|maxsim");
    eval_cmd->add_flag("--mt", e.mt, "use two-stage queries");
    eval_cmd->add_option("--captions", e.captions, "also run I2T/T2I with short|long captions");

    CLI::App* ablate_cmd = app.add_subcommand("ablate", "run the 16-configuration ablation");
    add_train_opts(ablate_cmd);
    ablate_cmd->add_flag("--dry-run", dry_run, "wire up the table without training");

    CLI::App* pipeline_cmd =
        app.add_subcommand("pipeline", "three-stage dataset construction with stub clients");
    pipeline_cmd->add_option("--manifest", p.manifest)->required();
    pipeline_cmd->add_option("--stages", p.stages, "comma-separated subset of 1,2,3");
    pipeline_cmd->add_flag("--stub,!--no-stub", p.stub, "use deterministic stub clients");
    pipeline_cmd->add_flag("--resume", p.resume, "skip stages whose outputs exist");
    pipeline_cmd->add_option("--flag-rate", p.flag_rate, "stub verifier flag rate");
    pipeline_cmd->add_option("--non-clothing-every", p.non_clothing_every,
                             "stub annotator: mark every k-th product non-clothing");

    CLI::App* dump_cmd = app.add_subcommand("dump-seq", "print a token sequence");
    dump_cmd->add_option("--manifest", d.manifest)->required();
    dump_cmd->add_option("--mode", d.mode,
                         "document|single_turn|two_stage|text_only|sft_caption|sft_triplet");
    dump_cmd->add_option("--product", d.product);
    dump_cmd->add_option("--triplet", d.triplet);
    dump_cmd->add_flag("--cot", d.cot);
    dump_cmd->add_option("--rho", d.rho);

    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::CallForHelp& help) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& pe) {
        err << "usage error: " << pe.what() << "\n";
        return 2;
    }

    try {
        if (!g.config_path.empty()) {
            const ordered_json cfg = load_config(g.config_path);
            apply_global(cfg, g);
            apply_corpus(cfg, c);
            apply_model(cfg, mo);
            apply_train(cfg, t);
            apply_eval(cfg, e);
            apply_pipeline(cfg, p);
        }
        ensure_out_dir(g);
        if (synth->parsed()) return cmd_synth(g, c, out);
        if (train_cmd->parsed()) return cmd_train(g, t, mo, out);
        if (eval_cmd->parsed()) return cmd_eval(g, e, out);
        if (ablate_cmd->parsed()) return cmd_ablate(g, t, mo, dry_run, out);
        if (pipeline_cmd->parsed()) return cmd_pipeline(g, p, out);
        if (dump_cmd->parsed()) return cmd_dump_seq(g, d, out);
        err << "usage error: no command\n";
        return 2;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return 1;
    }
}

}  // namespace mvcir
