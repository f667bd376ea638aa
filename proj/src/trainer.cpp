#include "mvcir/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mvcir/dialogue.hpp"

namespace mvcir {

using ordered_json = nlohmann::ordered_json;

std::string TrainConfig::variant_name() const {
    std::vector<std::string> parts;
    if (mt) parts.push_back("mt");
    if (align) parts.push_back("align");
    if (cot) parts.push_back("cot");
    std::string name = parts.empty() ? "baseline" : "";
    for (size_t i = 0; i < parts.size(); ++i) name += (i ? "+" : "") + parts[i];
    if (sft_init) name += name.empty() ? "sft" : "+sft";
    return name;
}

namespace {

double cosine_lr(double base, int step, int total) {
    return base * 0.5 * (1.0 + std::cos(M_PI * double(step) / double(total)));
}

struct AdamW {
    AdamWConstants k;
    Vec m, v;
    int t = 0;

    explicit AdamW(size_t n) : m(n, 0.0), v(n, 0.0) {}

    // decoupled weight decay; returns nothing, updates params in place
    void step(Vec& params, const Vec& grad, double lr, double weight_decay) {
        ++t;
        const double bc1 = 1.0 - std::pow(k.beta1, t);
        const double bc2 = 1.0 - std::pow(k.beta2, t);
        for (size_t i = 0; i < params.size(); ++i) {
            m[i] = k.beta1 * m[i] + (1.0 - k.beta1) * grad[i];
            v[i] = k.beta2 * v[i] + (1.0 - k.beta2) * grad[i] * grad[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            params[i] -= lr * (mhat / (std::sqrt(vhat) + k.eps) + weight_decay * params[i]);
        }
    }
};

// global-norm clipping; returns the post-clip norm
double clip_grad(Vec& grad, double max_norm) {
    double sq = 0.0;
    for (double g : grad) sq += g * g;
    const double n = std::sqrt(sq);
    if (n > max_norm && n > 0.0) {
        const double s = max_norm / n;
        for (double& g : grad) g *= s;
        return max_norm;
    }
    return n;
}

// epoch-concatenated triplet order: each epoch is its own shuffle, batches
// are cut across epoch boundaries so step count = ceil(n * epochs / batch)
std::vector<const CIRTriplet*> build_epoch_stream(const std::vector<const CIRTriplet*>& triplets,
                                                  int epochs, Rng& rng) {
    std::vector<const CIRTriplet*> stream;
    stream.reserve(triplets.size() * epochs);
    for (int e = 0; e < epochs; ++e) {
        std::vector<const CIRTriplet*> order = triplets;
        std::shuffle(order.begin(), order.end(), rng);
        stream.insert(stream.end(), order.begin(), order.end());
    }
    return stream;
}

const TokenList& sample_caption(const Product& p, Rng& rng) {
    return uniform01(rng) < 0.5 ? p.long_caption : p.short_caption;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const CorpusManifest& manifest,
                  const Params& init_params) {
    if (cfg.epochs < 1 || cfg.batch < 1) throw ParameterError("train: epochs and batch must be >= 1");
    if (!(cfg.lr > 0.0)) throw ParameterError("train: lr must be positive");
    const auto train_triplets = manifest.triplets_in(Split::train);
    if (train_triplets.empty()) throw DataError("train: no training triplets");

    const ObjectiveConfig obj = cfg.objective();
    const BackboneConfig& model = init_params.config;

    Rng rng(cfg.seed);
    const auto stream = build_epoch_stream(train_triplets, cfg.epochs, rng);
    const int total_steps = int((stream.size() + cfg.batch - 1) / cfg.batch);

    TrainResult out;
    out.params = init_params;
    out.log.config = cfg;
    out.log.total_steps = total_steps;

    AdamW opt(out.params.flat.size());

    for (int step = 0; step < total_steps; ++step) {
        const size_t lo = size_t(step) * cfg.batch;
        const size_t hi = std::min(stream.size(), lo + cfg.batch);
        const double rho = keep_ratio(step, total_steps);
        const double lr = cosine_lr(cfg.lr, step, total_steps);

        Tape tape;
        ParamNodes pn = bind_params(tape, out.params);
        std::vector<int> q_nodes, s_nodes, d_nodes, t_tgt_nodes, t_src_nodes;

        for (size_t i = lo; i < hi; ++i) {
            const CIRTriplet& tr = *stream[i];
            const Product& src = manifest.require(tr.src_id);
            const Product& tgt = manifest.require(tr.tgt_id);
            const TokenList& mod = sample_mod_text(tr, rng);

            const TokenSequence query_seq =
                cfg.mt ? build_two_stage_query(src, mod, cfg.cot, rho, rng)
                       : build_single_turn_query(src, mod);
            const TokenSequence doc_seq = build_document(tgt, cfg.cot, rho, rng);

            const ForwardNodes qf = forward_graph(tape, pn, model, query_seq);
            const ForwardNodes df = forward_graph(tape, pn, model, doc_seq);
            q_nodes.push_back(qf.marker_rows.back());
            if (cfg.mt) s_nodes.push_back(qf.marker_rows.front());
            d_nodes.push_back(df.marker_rows.front());

            if (cfg.align) {
                const TokenSequence cap_tgt = build_text_only(sample_caption(tgt, rng));
                t_tgt_nodes.push_back(
                    forward_graph(tape, pn, model, cap_tgt).marker_rows.front());
                if (cfg.mt) {
                    const TokenSequence cap_src = build_text_only(sample_caption(src, rng));
                    t_src_nodes.push_back(
                        forward_graph(tape, pn, model, cap_src).marker_rows.front());
                }
            }
        }

        const int l_cir_node =
            sym_infonce_node(tape, q_nodes, d_nodes, cfg.tau, cfg.normalize_embeddings);
        std::vector<int> terms = {l_cir_node};
        std::vector<double> weights = {1.0};
        std::optional<double> l_doc, l_src;
        if (cfg.align) {
            const int n = sym_infonce_node(tape, d_nodes, t_tgt_nodes, cfg.tau,
                                           cfg.normalize_embeddings);
            terms.push_back(n);
            weights.push_back(cfg.lambda_d);
            l_doc = tape.scalar(n);
            if (cfg.mt) {
                const int ns = sym_infonce_node(tape, s_nodes, t_src_nodes, cfg.tau,
                                                cfg.normalize_embeddings);
                terms.push_back(ns);
                weights.push_back(cfg.lambda_s);
                l_src = tape.scalar(ns);
            }
        }
        const int loss_node = tape.weighted_sum(terms, weights);
        const LossTerms lt = total_loss(tape.scalar(l_cir_node), l_doc, l_src, obj);

        tape.backward(loss_node);
        Vec grad = collect_gradients(tape, out.params);
        const double gnorm = clip_grad(grad, cfg.grad_clip);
        opt.step(out.params.flat, grad, lr, cfg.weight_decay);

        StepRecord rec;
        rec.step = step;
        rec.rho = rho;
        rec.lr = lr;
        rec.l_cir = lt.l_cir;
        rec.l_doc = lt.l_doc;
        rec.l_src = lt.l_src;
        rec.total = lt.total;
        rec.grad_norm = gnorm;
        out.log.steps.push_back(rec);
    }
    return out;
}

Params run_sft(const TrainConfig& cfg, const CorpusManifest& manifest, const Params& init_params,
               double sample_fraction, std::vector<double>* step_losses) {
    if (!(sample_fraction > 0.0 && sample_fraction <= 1.0))
        throw ParameterError("run_sft: sample_fraction must be in (0,1]");

    const auto train_products = manifest.products_in(Split::train);
    const auto train_triplets = manifest.triplets_in(Split::train);

    std::vector<SftDialogue> dialogues;
    for (const Product* p : train_products) dialogues.push_back(build_sft_caption_dialogue(*p));
    for (const CIRTriplet* t : train_triplets)
        dialogues.push_back(build_sft_triplet_dialogue(*t, manifest));
    if (dialogues.empty()) throw DataError("run_sft: no SFT examples in the train split");

    Rng rng(cfg.seed);
    std::shuffle(dialogues.begin(), dialogues.end(), rng);
    const size_t keep = std::max<size_t>(
        1, size_t(std::llround(sample_fraction * double(dialogues.size()))));
    dialogues.resize(std::min(keep, dialogues.size()));

    const BackboneConfig& model = init_params.config;
    Params params = init_params;
    AdamW opt(params.flat.size());
    const int total_steps = int((dialogues.size() + cfg.batch - 1) / cfg.batch);

    for (int step = 0; step < total_steps; ++step) {
        const size_t lo = size_t(step) * cfg.batch;
        const size_t hi = std::min(dialogues.size(), lo + cfg.batch);
        const double lr = cosine_lr(cfg.lr, step, total_steps);

        Tape tape;
        ParamNodes pn = bind_params(tape, params);
        std::vector<int> seq_losses;
        for (size_t i = lo; i < hi; ++i) {
            const SftDialogue& d = dialogues[i];
            const int L = d.seq.length();
            // logits at position i predict token i+1; train where the next
            // token is an assistant token (always encodable: views are
            // user-side only)
            std::vector<int> targets(L, 0);
            std::vector<uint8_t> mask(L, 0);
            for (int p = 0; p + 1 < L; ++p) {
                const int ext = extended_id(d.seq.tokens[p + 1], model.vocab_size);
                if (d.assistant_mask[p + 1] && ext >= 0) {
                    targets[p] = ext;
                    mask[p] = 1;
                }
            }
            const ForwardNodes f = forward_graph(tape, pn, model, d.seq);
            const int logits = logits_graph(tape, pn, f.states);
            seq_losses.push_back(tape.masked_xent(logits, targets, mask));
        }
        const int loss_node = tape.weighted_sum(
            seq_losses, std::vector<double>(seq_losses.size(), 1.0 / double(seq_losses.size())));
        if (step_losses) step_losses->push_back(tape.scalar(loss_node));

        tape.backward(loss_node);
        Vec grad = collect_gradients(tape, params);
        clip_grad(grad, cfg.grad_clip);
        opt.step(params.flat, grad, lr, cfg.weight_decay);
    }
    return params;
}

std::vector<TrainConfig> ablation_matrix(const TrainConfig& base) {
    std::vector<TrainConfig> out;
    out.reserve(16);
    for (int sft = 0; sft < 2; ++sft)
        for (int mt = 0; mt < 2; ++mt)
            for (int cot = 0; cot < 2; ++cot)
                for (int align = 0; align < 2; ++align) {
                    TrainConfig c = base;
                    c.mt = mt != 0;
                    c.align = align != 0;
                    c.cot = cot != 0;
                    c.sft_init = sft != 0;
                    out.push_back(c);
                }
    return out;
}

std::string AblationTable::to_csv() const {
    std::ostringstream out;
    out << "mt,align,cot,sft,l_doc,l_src,recall_at_5,recall_at_10\n";
    auto fmt = [](const std::optional<double>& v) {
        if (!v) return std::string();
        std::ostringstream s;
        s.precision(6);
        s << std::fixed << *v;
        return s.str();
    };
    for (const AblationRow& r : rows) {
        out << (r.config.mt ? 1 : 0) << ',' << (r.config.align ? 1 : 0) << ','
            << (r.config.cot ? 1 : 0) << ',' << (r.config.sft_init ? 1 : 0) << ','
            << (r.logs_l_doc ? 1 : 0) << ',' << (r.logs_l_src ? 1 : 0) << ','
            << fmt(r.recall_at_5) << ',' << fmt(r.recall_at_10) << "\n";
    }
    return out.str();
}

AblationTable run_ablation(const CorpusManifest& manifest, const TrainConfig& base,
                           const BackboneConfig& model, bool dry_run, double sft_fraction) {
    AblationTable table;
    const std::vector<TrainConfig> configs = ablation_matrix(base);

    Params init = init_params(model);
    std::optional<Params> sft_checkpoint;

    for (const TrainConfig& cfg : configs) {
        AblationRow row;
        row.config = cfg;
        row.logs_l_doc = cfg.align;
        row.logs_l_src = cfg.align && cfg.mt;
        if (!dry_run) {
            if (cfg.sft_init && !sft_checkpoint)
                sft_checkpoint = run_sft(base, manifest, init, sft_fraction);
            const Params& start = cfg.sft_init ? *sft_checkpoint : init;
            TrainResult res = train(cfg, manifest, start);
            const RecallReport rep =
                eval_cir(manifest, res.params, Strategy::joint, cfg.mt);
            row.recall_at_5 = rep.recall_at_5;
            row.recall_at_10 = rep.recall_at_10;
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

void save_train_log(const TrainLog& log, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    ordered_json header;
    header["type"] = "header";
    header["variant"] = log.config.variant_name();
    header["mt"] = log.config.mt;
    header["align"] = log.config.align;
    header["cot"] = log.config.cot;
    header["sft_init"] = log.config.sft_init;
    header["epochs"] = log.config.epochs;
    header["batch"] = log.config.batch;
    header["lr"] = log.config.lr;
    header["weight_decay"] = log.config.weight_decay;
    header["grad_clip"] = log.config.grad_clip;
    header["tau"] = log.config.tau;
    header["lambda_d"] = log.config.lambda_d;
    header["lambda_s"] = log.config.lambda_s;
    header["seed"] = log.config.seed;
    header["lr_schedule"] = "cosine_no_warmup";
    header["optimizer"] = "adamw";
    header["adamw_beta1"] = log.adamw.beta1;
    header["adamw_beta2"] = log.adamw.beta2;
    header["adamw_eps"] = log.adamw.eps;
    header["total_steps"] = log.total_steps;
    out << header.dump() << "\n";
    for (const StepRecord& s : log.steps) {
        ordered_json j;
        j["step"] = s.step;
        j["rho"] = s.rho;
        j["lr"] = s.lr;
        j["l_cir"] = s.l_cir;
        if (s.l_doc) j["l_doc"] = *s.l_doc;
        if (s.l_src) j["l_src"] = *s.l_src;
        j["total"] = s.total;
        j["grad_norm"] = s.grad_norm;
        out << j.dump() << "\n";
    }
    if (!out) throw DataError("failed while writing: " + path);
}

}  // namespace mvcir
