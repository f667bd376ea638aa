#pragma once

#include <map>

#include "mvcir/mat.hpp"
#include "mvcir/tokens.hpp"

namespace mvcir {

// Reverse-mode autodiff over matrix-valued nodes. One Tape instance holds the
// graph for a single forward/backward pass (a training step builds one tape
// across every sequence in the batch, calls backward once, then the tape is
// discarded). Ops are the minimal set a causal transformer plus the
// contrastive / language-modeling losses need; each backward rule is local
// and independently exercised by the finite-difference tests.
class Tape {
  public:
    enum class Op {
        constant,
        param,
        embed_sequence,
        affine,        // X*W + 1 b
        matmul_nn,     // A*B
        matmul_nt,     // A*B^T
        add,
        scale,
        slice_cols,
        concat_cols,
        slice_row,
        stack_rows,
        layernorm_rows,
        gelu,
        causal_softmax_rows,
        l2_normalize_rows,
        transpose,
        softmax_xent_diag,  // mean_i CE(row i, target i); input square
        masked_xent,        // mean CE over masked rows of (logits, targets)
        weighted_sum,       // sum_i w_i * scalar_i
    };

    struct Node {
        Op op;
        Mat val;
        Mat grad;
        bool needs_grad = false;
        std::vector<int> parents;
        int i0 = 0, i1 = 0;  // op-specific (slice bounds, row index, segment id)
        double c0 = 0.0;     // op-specific scalar (scale factor, epsilon)
        std::vector<int> idx;        // embed: extended ids (-1 = view); xent: targets
        std::vector<uint8_t> mask;   // masked_xent
        std::vector<Vec> feats;      // embed: view features per position (empty otherwise)
        std::vector<double> ws;      // weighted_sum coefficients
    };

    int constant(Mat v);
    // One node per segment id per tape; repeated binds return the cached node
    // so gradients from every use accumulate in one place.
    int param(int segment_id, const Mat& value);

    int embed_sequence(const TokenSequence& seq, int vocab_size, int tok_emb, int w_view,
                       int b_view, int pos_emb);
    int affine(int x, int w, int b);
    int matmul_nn(int a, int b);
    int matmul_nt(int a, int b);
    int add(int a, int b);
    int scale(int a, double c);
    int slice_cols(int a, int c0, int c1);
    int concat_cols(const std::vector<int>& parts);
    int slice_row(int a, int r);
    int stack_rows(const std::vector<int>& rows);
    int layernorm_rows(int x, int gain, int bias);
    int gelu(int x);
    int causal_softmax_rows(int scores);
    int l2_normalize_rows(int x);
    int transpose(int a);
    int softmax_xent_diag(int s);
    int masked_xent(int logits, const std::vector<int>& targets,
                    const std::vector<uint8_t>& mask);
    int weighted_sum(const std::vector<int>& xs, const std::vector<double>& ws);

    const Mat& val(int id) const { return nodes_[id].val; }
    double scalar(int id) const { return nodes_[id].val.at(0, 0); }
    const Mat& grad(int id) const { return nodes_[id].grad; }

    /// Backpropagate from a 1x1 loss node through the whole graph.
    void backward(int loss_node);

    /// Gradient of the given parameter segment, or nullptr if the segment was
    /// never bound (or backward has not run).
    const Mat* param_grad(int segment_id) const;

    size_t node_count() const { return nodes_.size(); }

  private:
    int push(Node n);
    std::vector<Node> nodes_;
    std::map<int, int> param_nodes_;  // segment id -> node id
};

}  // namespace mvcir
