#include "mvcir/tape.hpp"

#include <cmath>

namespace mvcir {

namespace {

constexpr double kLnEps = 1e-5;

double gelu_fwd(double x) {
    const double k = std::sqrt(2.0 / M_PI);
    const double u = k * (x + 0.044715 * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_bwd(double x) {
    const double k = std::sqrt(2.0 / M_PI);
    const double u = k * (x + 0.044715 * x * x * x);
    const double t = std::tanh(u);
    const double du = k * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

// softmax of row[0..n) into out, numerically stable
void softmax_row(const double* row, int n, double* out) {
    double m = row[0];
    for (int j = 1; j < n; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
        out[j] = std::exp(row[j] - m);
        z += out[j];
    }
    for (int j = 0; j < n; ++j) out[j] /= z;
}

double logsumexp_row(const double* row, int n) {
    double m = row[0];
    for (int j = 1; j < n; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (int j = 0; j < n; ++j) z += std::exp(row[j] - m);
    return m + std::log(z);
}

}  // namespace

int Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return int(nodes_.size()) - 1;
}

int Tape::constant(Mat v) {
    Node n;
    n.op = Op::constant;
    n.val = std::move(v);
    return push(std::move(n));
}

int Tape::param(int segment_id, const Mat& value) {
    auto it = param_nodes_.find(segment_id);
    if (it != param_nodes_.end()) return it->second;
    Node n;
    n.op = Op::param;
    n.val = value;
    n.needs_grad = true;
    n.i0 = segment_id;
    const int id = push(std::move(n));
    param_nodes_[segment_id] = id;
    return id;
}

int Tape::embed_sequence(const TokenSequence& seq, int vocab_size, int tok_emb, int w_view,
                         int b_view, int pos_emb) {
    const Mat& te = nodes_[tok_emb].val;
    const Mat& wv = nodes_[w_view].val;
    const Mat& bv = nodes_[b_view].val;
    const Mat& pe = nodes_[pos_emb].val;
    const int L = seq.length();
    const int d = te.cols;
    if (L > pe.rows) throw CapacityError("sequence length exceeds max_seq_len");

    Node n;
    n.op = Op::embed_sequence;
    n.parents = {tok_emb, w_view, b_view, pos_emb};
    n.needs_grad = true;
    n.val = Mat(L, d);
    n.idx.resize(L);
    n.feats.resize(L);
    for (int i = 0; i < L; ++i) {
        const Token& t = seq.tokens[i];
        double* out = n.val.row(i);
        const int ext = extended_id(t, vocab_size);
        n.idx[i] = ext;
        if (ext >= 0) {
            if (ext >= te.rows) throw IndexError("token id out of vocabulary");
            const double* row = te.row(ext);
            for (int j = 0; j < d; ++j) out[j] = row[j];
        } else {
            if (int(t.feature.size()) != wv.rows)
                throw ParameterError("view feature length does not match feature_dim");
            n.feats[i] = t.feature;
            for (int j = 0; j < d; ++j) {
                double s = bv.at(0, j);
                for (int k = 0; k < wv.rows; ++k) s += t.feature[k] * wv.at(k, j);
                out[j] = s;
            }
        }
        const double* prow = pe.row(i);
        for (int j = 0; j < d; ++j) out[j] += prow[j];
    }
    return push(std::move(n));
}

int Tape::affine(int x, int w, int b) {
    const Mat& X = nodes_[x].val;
    const Mat& W = nodes_[w].val;
    const Mat& B = nodes_[b].val;
    if (X.cols != W.rows || B.cols != W.cols || B.rows != 1)
        throw ParameterError("affine: shape mismatch");
    Node n;
    n.op = Op::affine;
    n.parents = {x, w, b};
    n.needs_grad = nodes_[x].needs_grad || nodes_[w].needs_grad || nodes_[b].needs_grad;
    n.val = Mat(X.rows, W.cols);
    for (int i = 0; i < X.rows; ++i)
        for (int j = 0; j < W.cols; ++j) n.val.at(i, j) = B.at(0, j);
    addmul_nn(n.val, X, W);
    return push(std::move(n));
}

int Tape::matmul_nn(int a, int b) {
    const Mat& A = nodes_[a].val;
    const Mat& B = nodes_[b].val;
    if (A.cols != B.rows) throw ParameterError("matmul_nn: shape mismatch");
    Node n;
    n.op = Op::matmul_nn;
    n.parents = {a, b};
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    n.val = mvcir::matmul_nn(A, B);
    return push(std::move(n));
}

int Tape::matmul_nt(int a, int b) {
    const Mat& A = nodes_[a].val;
    const Mat& B = nodes_[b].val;
    if (A.cols != B.cols) throw ParameterError("matmul_nt: shape mismatch");
    Node n;
    n.op = Op::matmul_nt;
    n.parents = {a, b};
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    n.val = mvcir::matmul_nt(A, B);
    return push(std::move(n));
}

int Tape::add(int a, int b) {
    const Mat& A = nodes_[a].val;
    const Mat& B = nodes_[b].val;
    if (A.rows != B.rows || A.cols != B.cols) throw ParameterError("add: shape mismatch");
    Node n;
    n.op = Op::add;
    n.parents = {a, b};
    n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
    n.val = A;
    for (size_t i = 0; i < n.val.a.size(); ++i) n.val.a[i] += B.a[i];
    return push(std::move(n));
}

int Tape::scale(int a, double c) {
    Node n;
    n.op = Op::scale;
    n.parents = {a};
    n.c0 = c;
    n.needs_grad = nodes_[a].needs_grad;
    n.val = nodes_[a].val;
    for (double& v : n.val.a) v *= c;
    return push(std::move(n));
}

int Tape::slice_cols(int a, int c0, int c1) {
    const Mat& A = nodes_[a].val;
    if (c0 < 0 || c1 > A.cols || c0 >= c1) throw IndexError("slice_cols: bad range");
    Node n;
    n.op = Op::slice_cols;
    n.parents = {a};
    n.i0 = c0;
    n.i1 = c1;
    n.needs_grad = nodes_[a].needs_grad;
    n.val = Mat(A.rows, c1 - c0);
    for (int i = 0; i < A.rows; ++i)
        for (int j = c0; j < c1; ++j) n.val.at(i, j - c0) = A.at(i, j);
    return push(std::move(n));
}

int Tape::concat_cols(const std::vector<int>& parts) {
    if (parts.empty()) throw ParameterError("concat_cols: empty");
    int rows = nodes_[parts[0]].val.rows;
    int cols = 0;
    bool ng = false;
    for (int p : parts) {
        if (nodes_[p].val.rows != rows) throw ParameterError("concat_cols: row mismatch");
        cols += nodes_[p].val.cols;
        ng = ng || nodes_[p].needs_grad;
    }
    Node n;
    n.op = Op::concat_cols;
    n.parents = parts;
    n.needs_grad = ng;
    n.val = Mat(rows, cols);
    int off = 0;
    for (int p : parts) {
        const Mat& P = nodes_[p].val;
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < P.cols; ++j) n.val.at(i, off + j) = P.at(i, j);
        off += P.cols;
    }
    return push(std::move(n));
}

int Tape::slice_row(int a, int r) {
    const Mat& A = nodes_[a].val;
    if (r < 0 || r >= A.rows) throw IndexError("slice_row: row out of range");
    Node n;
    n.op = Op::slice_row;
    n.parents = {a};
    n.i0 = r;
    n.needs_grad = nodes_[a].needs_grad;
    n.val = Mat(1, A.cols);
    for (int j = 0; j < A.cols; ++j) n.val.at(0, j) = A.at(r, j);
    return push(std::move(n));
}

int Tape::stack_rows(const std::vector<int>& rows) {
    if (rows.empty()) throw ParameterError("stack_rows: empty");
    const int cols = nodes_[rows[0]].val.cols;
    Node n;
    n.op = Op::stack_rows;
    n.parents = rows;
    n.val = Mat(int(rows.size()), cols);
    for (size_t i = 0; i < rows.size(); ++i) {
        const Mat& R = nodes_[rows[i]].val;
        if (R.rows != 1 || R.cols != cols) throw ParameterError("stack_rows: shape mismatch");
        n.needs_grad = n.needs_grad || nodes_[rows[i]].needs_grad;
        for (int j = 0; j < cols; ++j) n.val.at(int(i), j) = R.at(0, j);
    }
    return push(std::move(n));
}

int Tape::layernorm_rows(int x, int gain, int bias) {
    const Mat& X = nodes_[x].val;
    const Mat& G = nodes_[gain].val;
    const Mat& B = nodes_[bias].val;
    if (G.cols != X.cols || B.cols != X.cols) throw ParameterError("layernorm: shape mismatch");
    Node n;
    n.op = Op::layernorm_rows;
    n.parents = {x, gain, bias};
    n.needs_grad = nodes_[x].needs_grad || nodes_[gain].needs_grad || nodes_[bias].needs_grad;
    n.c0 = kLnEps;
    n.val = Mat(X.rows, X.cols);
    for (int i = 0; i < X.rows; ++i) {
        const double* xr = X.row(i);
        double mu = 0.0;
        for (int j = 0; j < X.cols; ++j) mu += xr[j];
        mu /= X.cols;
        double var = 0.0;
        for (int j = 0; j < X.cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= X.cols;
        const double inv = 1.0 / std::sqrt(var + kLnEps);
        for (int j = 0; j < X.cols; ++j)
            n.val.at(i, j) = G.at(0, j) * (xr[j] - mu) * inv + B.at(0, j);
    }
    return push(std::move(n));
}

int Tape::gelu(int x) {
    Node n;
    n.op = Op::gelu;
    n.parents = {x};
    n.needs_grad = nodes_[x].needs_grad;
    n.val = nodes_[x].val;
    for (double& v : n.val.a) v = gelu_fwd(v);
    return push(std::move(n));
}

int Tape::causal_softmax_rows(int scores) {
    const Mat& S = nodes_[scores].val;
    if (S.rows != S.cols) throw ParameterError("causal_softmax: matrix must be square");
    Node n;
    n.op = Op::causal_softmax_rows;
    n.parents = {scores};
    n.needs_grad = nodes_[scores].needs_grad;
    n.val = Mat(S.rows, S.cols, 0.0);
    for (int i = 0; i < S.rows; ++i) softmax_row(S.row(i), i + 1, n.val.row(i));
    return push(std::move(n));
}

int Tape::l2_normalize_rows(int x) {
    const Mat& X = nodes_[x].val;
    Node n;
    n.op = Op::l2_normalize_rows;
    n.parents = {x};
    n.needs_grad = nodes_[x].needs_grad;
    n.val = Mat(X.rows, X.cols);
    for (int i = 0; i < X.rows; ++i) {
        const double* xr = X.row(i);
        double s = 0.0;
        for (int j = 0; j < X.cols; ++j) s += xr[j] * xr[j];
        const double r = std::max(std::sqrt(s), 1e-12);
        for (int j = 0; j < X.cols; ++j) n.val.at(i, j) = xr[j] / r;
    }
    return push(std::move(n));
}

int Tape::transpose(int a) {
    const Mat& A = nodes_[a].val;
    Node n;
    n.op = Op::transpose;
    n.parents = {a};
    n.needs_grad = nodes_[a].needs_grad;
    n.val = Mat(A.cols, A.rows);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) n.val.at(j, i) = A.at(i, j);
    return push(std::move(n));
}

int Tape::softmax_xent_diag(int s) {
    const Mat& S = nodes_[s].val;
    if (S.rows != S.cols || S.rows < 1) throw ParameterError("softmax_xent_diag: square input required");
    Node n;
    n.op = Op::softmax_xent_diag;
    n.parents = {s};
    n.needs_grad = nodes_[s].needs_grad;
    double loss = 0.0;
    for (int i = 0; i < S.rows; ++i) loss += logsumexp_row(S.row(i), S.cols) - S.at(i, i);
    n.val = Mat(1, 1, loss / S.rows);
    return push(std::move(n));
}

int Tape::masked_xent(int logits, const std::vector<int>& targets,
                      const std::vector<uint8_t>& mask) {
    const Mat& L = nodes_[logits].val;
    if (int(targets.size()) != L.rows || int(mask.size()) != L.rows)
        throw ParameterError("masked_xent: targets/mask length must match logit rows");
    int m = 0;
    for (uint8_t b : mask) m += b ? 1 : 0;
    if (m == 0) throw ParameterError("masked_xent: mask selects no positions");
    Node n;
    n.op = Op::masked_xent;
    n.parents = {logits};
    n.needs_grad = nodes_[logits].needs_grad;
    n.idx = targets;
    n.mask = mask;
    double loss = 0.0;
    for (int i = 0; i < L.rows; ++i) {
        if (!mask[i]) continue;
        if (targets[i] < 0 || targets[i] >= L.cols) throw IndexError("masked_xent: target out of range");
        loss += logsumexp_row(L.row(i), L.cols) - L.at(i, targets[i]);
    }
    n.val = Mat(1, 1, loss / m);
    n.i0 = m;
    return push(std::move(n));
}

int Tape::weighted_sum(const std::vector<int>& xs, const std::vector<double>& ws) {
    if (xs.size() != ws.size() || xs.empty()) throw ParameterError("weighted_sum: bad arity");
    Node n;
    n.op = Op::weighted_sum;
    n.parents = xs;
    n.ws = ws;
    double s = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        const Mat& X = nodes_[xs[i]].val;
        if (X.rows != 1 || X.cols != 1) throw ParameterError("weighted_sum: scalar inputs required");
        n.needs_grad = n.needs_grad || nodes_[xs[i]].needs_grad;
        s += ws[i] * X.at(0, 0);
    }
    n.val = Mat(1, 1, s);
    return push(std::move(n));
}

void Tape::backward(int loss_node) {
    Node& ln = nodes_[loss_node];
    if (ln.val.rows != 1 || ln.val.cols != 1)
        throw ParameterError("backward: loss must be scalar");
    for (Node& n : nodes_) {
        if (n.needs_grad) n.grad = Mat(n.val.rows, n.val.cols, 0.0);
    }
    if (!ln.needs_grad) return;  // constant loss: all parameter gradients are zero
    ln.grad.at(0, 0) = 1.0;

    for (int id = loss_node; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.needs_grad) continue;
        const Mat& g = n.grad;
        auto pg = [&](int k) -> Mat& { return nodes_[n.parents[k]].grad; };
        auto pneeds = [&](int k) { return nodes_[n.parents[k]].needs_grad; };
        auto pval = [&](int k) -> const Mat& { return nodes_[n.parents[k]].val; };

        switch (n.op) {
            case Op::constant:
            case Op::param:
                break;
            case Op::embed_sequence: {
                Mat& d_te = pg(0);
                Mat& d_wv = pg(1);
                Mat& d_bv = pg(2);
                Mat& d_pe = pg(3);
                const int d = n.val.cols;
                for (int i = 0; i < n.val.rows; ++i) {
                    const double* gr = g.row(i);
                    if (n.idx[i] >= 0) {
                        double* tr = d_te.row(n.idx[i]);
                        for (int j = 0; j < d; ++j) tr[j] += gr[j];
                    } else {
                        const Vec& f = n.feats[i];
                        for (int k = 0; k < int(f.size()); ++k) {
                            double* wr = d_wv.row(k);
                            for (int j = 0; j < d; ++j) wr[j] += f[k] * gr[j];
                        }
                        double* br = d_bv.row(0);
                        for (int j = 0; j < d; ++j) br[j] += gr[j];
                    }
                    double* pr = d_pe.row(i);
                    for (int j = 0; j < d; ++j) pr[j] += gr[j];
                }
                break;
            }
            case Op::affine: {
                if (pneeds(0)) addmul_nt(pg(0), g, pval(1));
                if (pneeds(1)) addmul_tn(pg(1), pval(0), g);
                if (pneeds(2)) {
                    Mat& db = pg(2);
                    for (int i = 0; i < g.rows; ++i)
                        for (int j = 0; j < g.cols; ++j) db.at(0, j) += g.at(i, j);
                }
                break;
            }
            case Op::matmul_nn:
                if (pneeds(0)) addmul_nt(pg(0), g, pval(1));
                if (pneeds(1)) addmul_tn(pg(1), pval(0), g);
                break;
            case Op::matmul_nt:
                if (pneeds(0)) addmul_nn(pg(0), g, pval(1));
                if (pneeds(1)) addmul_tn(pg(1), g, pval(0));
                break;
            case Op::add:
                for (int k = 0; k < 2; ++k) {
                    if (!pneeds(k)) continue;
                    Mat& d = pg(k);
                    for (size_t i = 0; i < d.a.size(); ++i) d.a[i] += g.a[i];
                }
                break;
            case Op::scale:
                if (pneeds(0)) {
                    Mat& d = pg(0);
                    for (size_t i = 0; i < d.a.size(); ++i) d.a[i] += n.c0 * g.a[i];
                }
                break;
            case Op::slice_cols:
                if (pneeds(0)) {
                    Mat& d = pg(0);
                    for (int i = 0; i < g.rows; ++i)
                        for (int j = 0; j < g.cols; ++j) d.at(i, n.i0 + j) += g.at(i, j);
                }
                break;
            case Op::concat_cols: {
                int off = 0;
                for (size_t k = 0; k < n.parents.size(); ++k) {
                    const Mat& P = pval(int(k));
                    if (pneeds(int(k))) {
                        Mat& d = pg(int(k));
                        for (int i = 0; i < d.rows; ++i)
                            for (int j = 0; j < d.cols; ++j) d.at(i, j) += g.at(i, off + j);
                    }
                    off += P.cols;
                }
                break;
            }
            case Op::slice_row:
                if (pneeds(0)) {
                    Mat& d = pg(0);
                    for (int j = 0; j < g.cols; ++j) d.at(n.i0, j) += g.at(0, j);
                }
                break;
            case Op::stack_rows:
                for (size_t k = 0; k < n.parents.size(); ++k) {
                    if (!pneeds(int(k))) continue;
                    Mat& d = pg(int(k));
                    for (int j = 0; j < g.cols; ++j) d.at(0, j) += g.at(int(k), j);
                }
                break;
            case Op::layernorm_rows: {
                const Mat& X = pval(0);
                const Mat& G = pval(1);
                const int C = X.cols;
                for (int i = 0; i < X.rows; ++i) {
                    const double* xr = X.row(i);
                    double mu = 0.0;
                    for (int j = 0; j < C; ++j) mu += xr[j];
                    mu /= C;
                    double var = 0.0;
                    for (int j = 0; j < C; ++j) var += (xr[j] - mu) * (xr[j] - mu);
                    var /= C;
                    const double inv = 1.0 / std::sqrt(var + n.c0);
                    // xhat and the two row means the standard LN backward needs
                    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                    std::vector<double> xhat(C), dxhat(C);
                    for (int j = 0; j < C; ++j) {
                        xhat[j] = (xr[j] - mu) * inv;
                        dxhat[j] = g.at(i, j) * G.at(0, j);
                        mean_dxhat += dxhat[j];
                        mean_dxhat_xhat += dxhat[j] * xhat[j];
                    }
                    mean_dxhat /= C;
                    mean_dxhat_xhat /= C;
                    if (pneeds(0)) {
                        Mat& dx = pg(0);
                        for (int j = 0; j < C; ++j)
                            dx.at(i, j) += inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                    }
                    if (pneeds(1)) {
                        Mat& dg = pg(1);
                        for (int j = 0; j < C; ++j) dg.at(0, j) += g.at(i, j) * xhat[j];
                    }
                    if (pneeds(2)) {
                        Mat& db = pg(2);
                        for (int j = 0; j < C; ++j) db.at(0, j) += g.at(i, j);
                    }
                }
                break;
            }
            case Op::gelu:
                if (pneeds(0)) {
                    const Mat& X = pval(0);
                    Mat& d = pg(0);
                    for (size_t i = 0; i < d.a.size(); ++i) d.a[i] += gelu_bwd(X.a[i]) * g.a[i];
                }
                break;
            case Op::causal_softmax_rows:
                if (pneeds(0)) {
                    Mat& d = pg(0);
                    for (int i = 0; i < n.val.rows; ++i) {
                        const double* p = n.val.row(i);
                        const double* gr = g.row(i);
                        double dotpg = 0.0;
                        for (int j = 0; j <= i; ++j) dotpg += p[j] * gr[j];
                        for (int j = 0; j <= i; ++j) d.at(i, j) += p[j] * (gr[j] - dotpg);
                    }
                }
                break;
            case Op::l2_normalize_rows:
                if (pneeds(0)) {
                    const Mat& X = pval(0);
                    Mat& d = pg(0);
                    for (int i = 0; i < X.rows; ++i) {
                        const double* xr = X.row(i);
                        double s = 0.0;
                        for (int j = 0; j < X.cols; ++j) s += xr[j] * xr[j];
                        const double r = std::max(std::sqrt(s), 1e-12);
                        const double* y = n.val.row(i);
                        const double* gr = g.row(i);
                        double ydotg = 0.0;
                        for (int j = 0; j < X.cols; ++j) ydotg += y[j] * gr[j];
                        for (int j = 0; j < X.cols; ++j) d.at(i, j) += (gr[j] - y[j] * ydotg) / r;
                    }
                }
                break;
            case Op::transpose:
                if (pneeds(0)) {
                    Mat& d = pg(0);
                    for (int i = 0; i < g.rows; ++i)
                        for (int j = 0; j < g.cols; ++j) d.at(j, i) += g.at(i, j);
                }
                break;
            case Op::softmax_xent_diag:
                if (pneeds(0)) {
                    const Mat& S = pval(0);
                    Mat& d = pg(0);
                    const double up = g.at(0, 0) / S.rows;
                    std::vector<double> p(S.cols);
                    for (int i = 0; i < S.rows; ++i) {
                        softmax_row(S.row(i), S.cols, p.data());
                        for (int j = 0; j < S.cols; ++j)
                            d.at(i, j) += up * (p[j] - (i == j ? 1.0 : 0.0));
                    }
                }
                break;
            case Op::masked_xent:
                if (pneeds(0)) {
                    const Mat& L = pval(0);
                    Mat& d = pg(0);
                    const double up = g.at(0, 0) / n.i0;
                    std::vector<double> p(L.cols);
                    for (int i = 0; i < L.rows; ++i) {
                        if (!n.mask[i]) continue;
                        softmax_row(L.row(i), L.cols, p.data());
                        for (int j = 0; j < L.cols; ++j)
                            d.at(i, j) += up * (p[j] - (j == n.idx[i] ? 1.0 : 0.0));
                    }
                }
                break;
            case Op::weighted_sum:
                for (size_t k = 0; k < n.parents.size(); ++k)
                    if (pneeds(int(k))) pg(int(k)).at(0, 0) += n.ws[k] * g.at(0, 0);
                break;
        }
    }
}

const Mat* Tape::param_grad(int segment_id) const {
    auto it = param_nodes_.find(segment_id);
    if (it == param_nodes_.end()) return nullptr;
    const Node& n = nodes_[it->second];
    if (n.grad.rows == 0) return nullptr;
    return &n.grad;
}

}  // namespace mvcir
