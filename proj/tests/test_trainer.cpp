#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mvcir/dialogue.hpp"
#include "mvcir/trainer.hpp"

using namespace mvcir;

namespace {

BackboneConfig tiny_model(int vocab, int f) {
    BackboneConfig c;
    c.hidden_dim = 8;
    c.n_layers = 1;
    c.n_heads = 2;
    c.vocab_size = vocab;
    c.feature_dim = f;
    c.max_seq_len = 128;
    c.init_seed = 2;
    return c;
}

// a manifest whose products are all in the train split
CorpusManifest train_only_corpus(int n_products, uint64_t seed = 7) {
    CorpusManifest m = synth_corpus(seed, n_products, 4, 32, 1, 3);
    for (Product& p : m.products) p.split = Split::train;
    return m;
}

TrainConfig fast_config() {
    TrainConfig cfg;
    cfg.batch = 8;
    cfg.lr = 1e-3;
    cfg.seed = 5;
    return cfg;
}

std::string log_bytes(const TrainLog& log) {
    const std::string path = "trainer_tmp_log.jsonl";
    save_train_log(log, path);
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    std::remove(path.c_str());
    return ss.str();
}

}  // namespace

TEST_CASE("train config defaults follow the reference recipe") {
    const TrainConfig cfg;
    CHECK(cfg.lr == 1e-5);
    CHECK(cfg.weight_decay == 0.01);
    CHECK(cfg.grad_clip == 1.0);
    CHECK(cfg.epochs == 1);
    CHECK(cfg.tau == 0.07);
    CHECK(cfg.lambda_d == 0.25);
    CHECK(cfg.lambda_s == 0.25);
    CHECK(cfg.schedule == LrSchedule::cosine_no_warmup);
    CHECK(cfg.normalize_embeddings);
}

TEST_CASE("step count follows ceil(n * epochs / batch)") {
    const CorpusManifest m = train_only_corpus(100);  // 200 triplets
    REQUIRE(m.triplets_in(Split::train).size() == 200);
    const Params init = init_params(tiny_model(32, 4));

    TrainConfig cfg = fast_config();
    cfg.batch = 16;
    cfg.epochs = 1;
    const TrainResult res = train(cfg, m, init);
    CHECK(res.log.total_steps == 13);  // ceil(200 / 16)
    CHECK(res.log.steps.size() == 13);
}

TEST_CASE("log columns mirror the gating contract") {
    const CorpusManifest m = train_only_corpus(16);
    const Params init = init_params(tiny_model(32, 4));

    SUBCASE("baseline logs only l_cir") {
        TrainConfig cfg = fast_config();
        const TrainResult res = train(cfg, m, init);
        for (const StepRecord& s : res.log.steps) {
            CHECK_FALSE(s.l_doc.has_value());
            CHECK_FALSE(s.l_src.has_value());
            CHECK(s.total == s.l_cir);
        }
    }
    SUBCASE("align without mt logs l_doc but not l_src") {
        TrainConfig cfg = fast_config();
        cfg.align = true;
        const TrainResult res = train(cfg, m, init);
        for (const StepRecord& s : res.log.steps) {
            CHECK(s.l_doc.has_value());
            CHECK_FALSE(s.l_src.has_value());
        }
    }
    SUBCASE("mt plus align logs all three terms") {
        TrainConfig cfg = fast_config();
        cfg.mt = true;
        cfg.align = true;
        const TrainResult res = train(cfg, m, init);
        for (const StepRecord& s : res.log.steps) {
            CHECK(s.l_doc.has_value());
            CHECK(s.l_src.has_value());
            CHECK(s.total ==
                  doctest::Approx(s.l_cir + 0.25 * *s.l_doc + 0.25 * *s.l_src).epsilon(1e-12));
        }
    }
}

TEST_CASE("rho column obeys the keep-ratio schedule and lr decays cosinely") {
    const CorpusManifest m = train_only_corpus(32);  // 64 triplets
    const Params init = init_params(tiny_model(32, 4));
    TrainConfig cfg = fast_config();
    cfg.batch = 4;
    cfg.cot = true;
    const TrainResult res = train(cfg, m, init);
    const int T = res.log.total_steps;

    double prev_lr = cfg.lr + 1e-12;
    for (const StepRecord& s : res.log.steps) {
        CHECK(s.rho == keep_ratio(s.step, T));
        if (s.step >= (T + 1) / 2) CHECK(s.rho == 0.0);
        CHECK(s.lr <= prev_lr);
        prev_lr = s.lr;
    }
    CHECK(res.log.steps.front().lr == doctest::Approx(cfg.lr).epsilon(1e-12));
}

TEST_CASE("gradient norm never exceeds the clip threshold") {
    const CorpusManifest m = train_only_corpus(16);
    const Params init = init_params(tiny_model(32, 4));
    TrainConfig cfg = fast_config();
    cfg.grad_clip = 0.5;
    cfg.mt = true;
    cfg.align = true;
    const TrainResult res = train(cfg, m, init);
    for (const StepRecord& s : res.log.steps) CHECK(s.grad_norm <= cfg.grad_clip + 1e-9);
}

TEST_CASE("training is deterministic in seed, config and manifest") {
    const CorpusManifest m = train_only_corpus(16);
    const Params init = init_params(tiny_model(32, 4));
    TrainConfig cfg = fast_config();
    cfg.mt = true;
    cfg.align = true;
    const TrainResult a = train(cfg, m, init);
    const TrainResult b = train(cfg, m, init);
    CHECK(a.params.flat == b.params.flat);
    CHECK(log_bytes(a.log) == log_bytes(b.log));

    cfg.seed += 1;
    const TrainResult c = train(cfg, m, init);
    CHECK(log_bytes(a.log) != log_bytes(c.log));
}

TEST_CASE("empty train split is a data error") {
    CorpusManifest m = synth_corpus(7, 8, 4, 32, 1, 2);
    for (Product& p : m.products) p.split = Split::val;
    const Params init = init_params(tiny_model(32, 4));
    CHECK_THROWS_AS(train(fast_config(), m, init), DataError);
}

TEST_CASE("run_sft example counts and first-step loss") {
    // 10 products, 5 triplets, all train
    CorpusManifest m = train_only_corpus(10);
    m.triplets.resize(5);
    REQUIRE(m.products_in(Split::train).size() == 10);
    REQUIRE(m.triplets_in(Split::train).size() == 5);

    const BackboneConfig model = tiny_model(32, 4);
    const Params init = init_params(model);
    TrainConfig cfg = fast_config();
    cfg.batch = 15;

    SUBCASE("fraction 1.0 keeps all 15 examples in one batch") {
        std::vector<double> losses;
        run_sft(cfg, m, init, 1.0, &losses);
        REQUIRE(losses.size() == 1);  // 15 examples, batch 15
        // fresh random model: near-uniform logits, CE close to log(vocab_ext)
        const double expected = std::log(double(model.extended_vocab()));
        CHECK(losses[0] > 0.8 * expected);
        CHECK(losses[0] < 1.2 * expected);
    }
    SUBCASE("fraction 0.2 is a deterministic subset") {
        const Params a = run_sft(cfg, m, init, 0.2);
        const Params b = run_sft(cfg, m, init, 0.2);
        CHECK(a.flat == b.flat);
    }
    SUBCASE("bad fractions are parameter errors") {
        CHECK_THROWS_AS(run_sft(cfg, m, init, 0.0), ParameterError);
        CHECK_THROWS_AS(run_sft(cfg, m, init, 1.5), ParameterError);
    }
}

TEST_CASE("ablation matrix enumerates all 16 configurations in table order") {
    const std::vector<TrainConfig> configs = ablation_matrix(fast_config());
    REQUIRE(configs.size() == 16);

    // all-off first
    CHECK_FALSE(configs[0].mt);
    CHECK_FALSE(configs[0].align);
    CHECK_FALSE(configs[0].cot);
    CHECK_FALSE(configs[0].sft_init);

    int sft_count = 0;
    for (const TrainConfig& c : configs) sft_count += c.sft_init ? 1 : 0;
    CHECK(sft_count == 8);

    // first block pretrained, second block SFT, each ordered
    // baseline, align, cot, align+cot, mt, mt+align, mt+cot, mt+align+cot
    const std::vector<std::array<bool, 3>> expected = {
        {false, false, false}, {false, true, false}, {false, false, true},
        {false, true, true},   {true, false, false}, {true, true, false},
        {true, false, true},   {true, true, true},
    };
    for (int block = 0; block < 2; ++block)
        for (int i = 0; i < 8; ++i) {
            const TrainConfig& c = configs[block * 8 + i];
            CHECK(c.mt == expected[i][0]);
            CHECK(c.align == expected[i][1]);
            CHECK(c.cot == expected[i][2]);
            CHECK(c.sft_init == (block == 1));
        }

    // no duplicates
    for (size_t i = 0; i < configs.size(); ++i)
        for (size_t j = i + 1; j < configs.size(); ++j)
            CHECK_FALSE(std::tie(configs[i].mt, configs[i].align, configs[i].cot,
                                 configs[i].sft_init) ==
                        std::tie(configs[j].mt, configs[j].align, configs[j].cot,
                                 configs[j].sft_init));
}

TEST_CASE("dry-run ablation reports gating structure without training") {
    const CorpusManifest m = train_only_corpus(8);
    const AblationTable t = run_ablation(m, fast_config(), tiny_model(32, 4), true);
    REQUIRE(t.rows.size() == 16);
    for (const AblationRow& r : t.rows) {
        CHECK(r.logs_l_doc == r.config.align);
        CHECK(r.logs_l_src == (r.config.align && r.config.mt));
        CHECK_FALSE(r.recall_at_5.has_value());
        CHECK_FALSE(r.recall_at_10.has_value());
    }
    const std::string csv = t.to_csv();
    CHECK(csv.substr(0, csv.find('\n')) ==
          "mt,align,cot,sft,l_doc,l_src,recall_at_5,recall_at_10");
    int lines = 0;
    for (char c : csv) lines += c == '\n' ? 1 : 0;
    CHECK(lines == 17);  // header + 16 rows
}

TEST_CASE("full ablation on a micro corpus produces recalls in range") {
    // tiny but complete end-to-end run across all 16 configurations
    CorpusManifest m = split_products(synth_corpus(3, 32, 4, 32, 1, 2), 0.25, 3);
    TrainConfig base = fast_config();
    base.batch = 16;
    const AblationTable t = run_ablation(m, base, tiny_model(32, 4), false, 0.5);
    REQUIRE(t.rows.size() == 16);
    for (const AblationRow& r : t.rows) {
        REQUIRE(r.recall_at_5.has_value());
        REQUIRE(r.recall_at_10.has_value());
        CHECK(*r.recall_at_5 >= 0.0);
        CHECK(*r.recall_at_5 <= 1.0);
        CHECK(*r.recall_at_10 >= *r.recall_at_5);
    }
}

TEST_CASE("train log round-trips its header fields") {
    const CorpusManifest m = train_only_corpus(8);
    const Params init = init_params(tiny_model(32, 4));
    TrainConfig cfg = fast_config();
    cfg.align = true;
    const TrainResult res = train(cfg, m, init);
    const std::string bytes = log_bytes(res.log);
    CHECK(bytes.find("\"optimizer\":\"adamw\"") != std::string::npos);
    CHECK(bytes.find("\"adamw_beta1\":0.9") != std::string::npos);
    CHECK(bytes.find("\"lr_schedule\":\"cosine_no_warmup\"") != std::string::npos);
    CHECK(bytes.find("\"l_doc\"") != std::string::npos);
    CHECK(bytes.find("\"l_src\"") == std::string::npos);
}
