#include "mvcir/backbone.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "mvcir/dialogue.hpp"

namespace mvcir {

void BackboneConfig::validate() const {
    if (hidden_dim < 4) throw ParameterError("hidden_dim must be >= 4");
    if (n_heads < 1 || hidden_dim % n_heads != 0)
        throw ParameterError("hidden_dim must be divisible by n_heads");
    if (n_layers < 1) throw ParameterError("n_layers must be >= 1");
    if (vocab_size < 2) throw ParameterError("vocab_size must be >= 2");
    if (feature_dim < 1) throw ParameterError("feature_dim must be >= 1");
    if (max_seq_len < 8) throw ParameterError("max_seq_len must be >= 8");
}

ParamLayout ParamLayout::build(const BackboneConfig& cfg) {
    cfg.validate();
    ParamLayout l;
    auto add = [&](const std::string& name, int rows, int cols) {
        ParamSegment s{name, rows, cols, l.total};
        l.total += s.size();
        l.segments.push_back(std::move(s));
    };
    add("tok_emb", cfg.extended_vocab(), cfg.hidden_dim);
    add("w_view", cfg.feature_dim, cfg.hidden_dim);
    add("b_view", 1, cfg.hidden_dim);
    add("pos_emb", cfg.max_seq_len, cfg.hidden_dim);
    for (int i = 0; i < cfg.n_layers; ++i) {
        const std::string p = "layer" + std::to_string(i) + ".";
        add(p + "ln1_g", 1, cfg.hidden_dim);
        add(p + "ln1_b", 1, cfg.hidden_dim);
        add(p + "wq", cfg.hidden_dim, cfg.hidden_dim);
        add(p + "bq", 1, cfg.hidden_dim);
        add(p + "wk", cfg.hidden_dim, cfg.hidden_dim);
        add(p + "bk", 1, cfg.hidden_dim);
        add(p + "wv", cfg.hidden_dim, cfg.hidden_dim);
        add(p + "bv", 1, cfg.hidden_dim);
        add(p + "wo", cfg.hidden_dim, cfg.hidden_dim);
        add(p + "bo", 1, cfg.hidden_dim);
        add(p + "ln2_g", 1, cfg.hidden_dim);
        add(p + "ln2_b", 1, cfg.hidden_dim);
        add(p + "w_fc1", cfg.hidden_dim, cfg.mlp_dim());
        add(p + "b_fc1", 1, cfg.mlp_dim());
        add(p + "w_fc2", cfg.mlp_dim(), cfg.hidden_dim);
        add(p + "b_fc2", 1, cfg.hidden_dim);
    }
    add("ln_f_g", 1, cfg.hidden_dim);
    add("ln_f_b", 1, cfg.hidden_dim);
    add("w_out", cfg.extended_vocab(), cfg.hidden_dim);
    return l;
}

int ParamLayout::segment_id(const std::string& name) const {
    for (size_t i = 0; i < segments.size(); ++i)
        if (segments[i].name == name) return int(i);
    throw IndexError("unknown parameter segment: " + name);
}

Mat Params::segment(int id) const {
    const ParamSegment& s = layout.segments[id];
    Mat m(s.rows, s.cols);
    std::copy(flat.begin() + s.offset, flat.begin() + s.offset + s.size(), m.a.begin());
    return m;
}

void Params::set_segment(int id, const Mat& m) {
    const ParamSegment& s = layout.segments[id];
    if (m.rows != s.rows || m.cols != s.cols) throw ParameterError("set_segment: shape mismatch");
    std::copy(m.a.begin(), m.a.end(), flat.begin() + s.offset);
}

Params init_params(const BackboneConfig& cfg) {
    Params p;
    p.config = cfg;
    p.layout = ParamLayout::build(cfg);
    p.flat.assign(p.layout.total, 0.0);
    Rng rng(cfg.init_seed);
    for (const ParamSegment& s : p.layout.segments) {
        double* base = p.flat.data() + s.offset;
        if (s.name.ends_with("ln1_g") || s.name.ends_with("ln2_g") || s.name == "ln_f_g") {
            for (size_t i = 0; i < s.size(); ++i) base[i] = 1.0;
        } else if (s.name.ends_with("_b") || s.name.starts_with("b_") ||
                   s.name.find(".b") != std::string::npos) {
            // biases and LN offsets start at zero
        } else {
            for (size_t i = 0; i < s.size(); ++i) base[i] = 0.02 * gauss(rng);
        }
    }
    return p;
}

int ParamNodes::operator[](const std::string& name) const {
    return node_of[layout->segment_id(name)];
}

ParamNodes bind_params(Tape& tape, const Params& params) {
    ParamNodes pn;
    pn.layout = &params.layout;
    pn.node_of.resize(params.layout.segments.size());
    for (size_t i = 0; i < params.layout.segments.size(); ++i)
        pn.node_of[i] = tape.param(int(i), params.segment(int(i)));
    return pn;
}

ForwardNodes forward_graph(Tape& tape, const ParamNodes& pn, const BackboneConfig& cfg,
                           const TokenSequence& seq) {
    if (seq.length() == 0) throw ParameterError("forward: empty sequence");
    if (seq.length() > cfg.max_seq_len) throw CapacityError("forward: sequence exceeds max_seq_len");
    for (size_t i = 0; i < seq.emb_positions.size(); ++i) {
        const int p = seq.emb_positions[i];
        if (p < 0 || p >= seq.length() || seq.tokens[p].kind != TokenKind::emb_marker)
            throw IndexError("forward: emb_positions out of sync with tokens");
    }

    const int dh = cfg.head_dim();
    const double att_scale = 1.0 / std::sqrt(double(dh));

    int x = tape.embed_sequence(seq, cfg.vocab_size, pn["tok_emb"], pn["w_view"], pn["b_view"],
                                pn["pos_emb"]);
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        const int a = tape.layernorm_rows(x, pn[p + "ln1_g"], pn[p + "ln1_b"]);
        const int q = tape.affine(a, pn[p + "wq"], pn[p + "bq"]);
        const int k = tape.affine(a, pn[p + "wk"], pn[p + "bk"]);
        const int v = tape.affine(a, pn[p + "wv"], pn[p + "bv"]);
        std::vector<int> heads;
        heads.reserve(cfg.n_heads);
        for (int h = 0; h < cfg.n_heads; ++h) {
            const int c0 = h * dh, c1 = (h + 1) * dh;
            const int qh = tape.slice_cols(q, c0, c1);
            const int kh = tape.slice_cols(k, c0, c1);
            const int vh = tape.slice_cols(v, c0, c1);
            const int scores = tape.scale(tape.matmul_nt(qh, kh), att_scale);
            const int probs = tape.causal_softmax_rows(scores);
            heads.push_back(tape.matmul_nn(probs, vh));
        }
        const int att = tape.affine(tape.concat_cols(heads), pn[p + "wo"], pn[p + "bo"]);
        x = tape.add(x, att);
        const int a2 = tape.layernorm_rows(x, pn[p + "ln2_g"], pn[p + "ln2_b"]);
        const int h1 = tape.gelu(tape.affine(a2, pn[p + "w_fc1"], pn[p + "b_fc1"]));
        const int h2 = tape.affine(h1, pn[p + "w_fc2"], pn[p + "b_fc2"]);
        x = tape.add(x, h2);
    }
    ForwardNodes out;
    out.states = tape.layernorm_rows(x, pn["ln_f_g"], pn["ln_f_b"]);
    for (int pos : seq.emb_positions) out.marker_rows.push_back(tape.slice_row(out.states, pos));
    return out;
}

int logits_graph(Tape& tape, const ParamNodes& pn, int states) {
    return tape.matmul_nt(states, pn["w_out"]);
}

std::vector<Vec> forward(const TokenSequence& seq, const Params& params) {
    Tape tape;
    ParamNodes pn = bind_params(tape, params);
    ForwardNodes f = forward_graph(tape, pn, params.config, seq);
    const Mat& h = tape.val(f.states);
    std::vector<Vec> states(h.rows);
    for (int i = 0; i < h.rows; ++i) states[i] = h.row_vec(i);
    return states;
}

std::vector<Vec> extract_embeddings(const std::vector<Vec>& states,
                                    const std::vector<int>& emb_positions) {
    std::vector<Vec> out;
    out.reserve(emb_positions.size());
    for (int p : emb_positions) {
        if (p < 0 || p >= int(states.size()))
            throw IndexError("extract_embeddings: position out of range");
        out.push_back(states[p]);
    }
    return out;
}

Vec embed_text(const TokenList& caption, const Params& params) {
    if (caption.empty()) throw ParameterError("embed_text: caption must be non-empty");
    const TokenSequence seq = build_text_only(caption);
    const std::vector<Vec> states = forward(seq, params);
    return extract_embeddings(states, seq.emb_positions).at(0);
}

Vec collect_gradients(const Tape& tape, const Params& params) {
    Vec g(params.layout.total, 0.0);
    for (size_t i = 0; i < params.layout.segments.size(); ++i) {
        const Mat* gm = tape.param_grad(int(i));
        if (!gm) continue;
        const ParamSegment& s = params.layout.segments[i];
        std::copy(gm->a.begin(), gm->a.end(), g.begin() + s.offset);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'M', 'V', 'C', 'K'};
constexpr uint32_t kCkptVersion = 1;

template <typename T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
void get(std::ifstream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof v);
}
}  // namespace

void save_checkpoint(const Params& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path);
    out.write(kMagic, 4);
    put(out, kCkptVersion);
    const BackboneConfig& c = params.config;
    for (int v : {c.hidden_dim, c.n_layers, c.n_heads, c.vocab_size, c.feature_dim, c.max_seq_len})
        put(out, int32_t(v));
    put(out, uint64_t(c.init_seed));
    put(out, uint64_t(params.flat.size()));
    out.write(reinterpret_cast<const char*>(params.flat.data()),
              std::streamsize(params.flat.size() * sizeof(double)));
    if (!out) throw DataError("failed while writing: " + path);
}

Params load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open for reading: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw ParseError("not a checkpoint file", 1);
    uint32_t version = 0;
    get(in, version);
    if (version != kCkptVersion) throw ParseError("unsupported checkpoint version", 1);
    BackboneConfig c;
    int32_t vals[6];
    for (int32_t& v : vals) get(in, v);
    c.hidden_dim = vals[0];
    c.n_layers = vals[1];
    c.n_heads = vals[2];
    c.vocab_size = vals[3];
    c.feature_dim = vals[4];
    c.max_seq_len = vals[5];
    uint64_t seed = 0;
    get(in, seed);
    c.init_seed = seed;
    uint64_t count = 0;
    get(in, count);
    Params p;
    p.config = c;
    p.layout = ParamLayout::build(c);
    if (count != p.layout.total) throw ParseError("checkpoint parameter count mismatch", 1);
    p.flat.resize(count);
    in.read(reinterpret_cast<char*>(p.flat.data()), std::streamsize(count * sizeof(double)));
    if (!in) throw ParseError("truncated checkpoint", 1);
    return p;
}

}  // namespace mvcir
