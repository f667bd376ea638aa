#include "mvcir/objectives.hpp"

#include <cmath>

namespace mvcir {

namespace {

Mat stack_normalized(const std::vector<Vec>& rows, bool normalize) {
    Mat m(int(rows.size()), int(rows[0].size()));
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size())
            throw ParameterError("sym_infonce: embedding dimensions differ");
        double r = 1.0;
        if (normalize) {
            double s = 0.0;
            for (double x : rows[i]) s += x * x;
            r = std::max(std::sqrt(s), 1e-12);
        }
        for (size_t j = 0; j < rows[i].size(); ++j) m.at(int(i), int(j)) = rows[i][j] / r;
    }
    return m;
}

double xent_diag(const Mat& s) {
    double loss = 0.0;
    for (int i = 0; i < s.rows; ++i) {
        const double* row = s.row(i);
        double mx = row[0];
        for (int j = 1; j < s.cols; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < s.cols; ++j) z += std::exp(row[j] - mx);
        loss += mx + std::log(z) - row[i];
    }
    return loss / s.rows;
}

}  // namespace

double sym_infonce(const std::vector<Vec>& queries, const std::vector<Vec>& documents,
                   double tau, bool normalize) {
    if (queries.empty() || queries.size() != documents.size())
        throw ParameterError("sym_infonce: need equal non-zero batch sizes");
    if (!(tau > 0.0)) throw ParameterError("sym_infonce: tau must be positive");

    const Mat q = stack_normalized(queries, normalize);
    const Mat d = stack_normalized(documents, normalize);
    if (q.cols != d.cols) throw ParameterError("sym_infonce: embedding dimensions differ");

    Mat s = matmul_nt(q, d);
    for (double& x : s.a) x /= tau;
    Mat st(s.cols, s.rows);
    for (int i = 0; i < s.rows; ++i)
        for (int j = 0; j < s.cols; ++j) st.at(j, i) = s.at(i, j);
    return 0.5 * (xent_diag(s) + xent_diag(st));
}

int sym_infonce_node(Tape& tape, const std::vector<int>& queries,
                     const std::vector<int>& documents, double tau, bool normalize) {
    if (queries.empty() || queries.size() != documents.size())
        throw ParameterError("sym_infonce: need equal non-zero batch sizes");
    if (!(tau > 0.0)) throw ParameterError("sym_infonce: tau must be positive");
    int q = tape.stack_rows(queries);
    int d = tape.stack_rows(documents);
    if (normalize) {
        q = tape.l2_normalize_rows(q);
        d = tape.l2_normalize_rows(d);
    }
    const int s = tape.scale(tape.matmul_nt(q, d), 1.0 / tau);
    const int fwd = tape.softmax_xent_diag(s);
    const int bwd = tape.softmax_xent_diag(tape.transpose(s));
    return tape.weighted_sum({fwd, bwd}, {0.5, 0.5});
}

LossTerms total_loss(double l_cir, std::optional<double> l_doc, std::optional<double> l_src,
                     const ObjectiveConfig& cfg) {
    const bool doc_gate = cfg.align;
    const bool src_gate = cfg.align && cfg.mt;
    if (l_doc.has_value() != doc_gate)
        throw ConfigError(doc_gate ? "total_loss: l_doc required by align variant"
                                   : "total_loss: l_doc supplied but align is off");
    if (l_src.has_value() != src_gate)
        throw ConfigError(src_gate ? "total_loss: l_src required by align+mt variant"
                                   : "total_loss: l_src supplied but its gate is off");
    LossTerms t;
    t.l_cir = l_cir;
    t.l_doc = l_doc;
    t.l_src = l_src;
    t.total = l_cir;
    if (l_doc) t.total += cfg.lambda_d * *l_doc;
    if (l_src) t.total += cfg.lambda_s * *l_src;
    if (!std::isfinite(t.total)) throw ConfigError("total_loss: non-finite loss");
    return t;
}

double sft_loss(const Mat& logits, const std::vector<int>& targets,
                const std::vector<uint8_t>& mask) {
    if (int(targets.size()) != logits.rows || int(mask.size()) != logits.rows)
        throw ParameterError("sft_loss: targets/mask must match logit rows");
    int m = 0;
    for (uint8_t b : mask) m += b ? 1 : 0;
    if (m == 0) throw ParameterError("sft_loss: mask selects no positions");
    double loss = 0.0;
    for (int i = 0; i < logits.rows; ++i) {
        if (!mask[i]) continue;
        if (targets[i] < 0 || targets[i] >= logits.cols)
            throw IndexError("sft_loss: target id out of range");
        const double* row = logits.row(i);
        double mx = row[0];
        for (int j = 1; j < logits.cols; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < logits.cols; ++j) z += std::exp(row[j] - mx);
        loss += mx + std::log(z) - row[targets[i]];
    }
    return loss / m;
}

}  // namespace mvcir
