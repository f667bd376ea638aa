#pragma once

// Test-only oracles, kept independent of the library implementations they
// check: a brute-force softmax cross-entropy for the contrastive loss, plain
// central finite differences, and an exhaustive pairwise-cosine scorer.

#include <cmath>
#include <functional>
#include <vector>

#include "mvcir/common.hpp"

namespace oracle {

inline double cosine_ref(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) return 0.0;
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

// Brute-force symmetric InfoNCE: explicit per-row softmax cross-entropies in
// both directions, no shared code with the library.
inline double sym_infonce_ref(std::vector<std::vector<double>> q,
                              std::vector<std::vector<double>> d, double tau,
                              bool normalize = true) {
    const size_t B = q.size();
    if (normalize) {
        for (auto* side : {&q, &d}) {
            for (auto& v : *side) {
                double n = 0.0;
                for (double x : v) n += x * x;
                n = std::max(std::sqrt(n), 1e-12);
                for (double& x : v) x /= n;
            }
        }
    }
    auto logit = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
        return s / tau;
    };
    double total = 0.0;
    for (size_t i = 0; i < B; ++i) {
        // query -> document
        double denom = 0.0;
        for (size_t j = 0; j < B; ++j) denom += std::exp(logit(q[i], d[j]));
        total += -std::log(std::exp(logit(q[i], d[i])) / denom);
        // document -> query
        denom = 0.0;
        for (size_t j = 0; j < B; ++j) denom += std::exp(logit(d[i], q[j]));
        total += -std::log(std::exp(logit(d[i], q[i])) / denom);
    }
    return total / (2.0 * double(B));
}

// Per-position cross-entropy for masked language-modeling targets.
inline double masked_ce_ref(const std::vector<std::vector<double>>& logits,
                            const std::vector<int>& targets,
                            const std::vector<uint8_t>& mask) {
    double total = 0.0;
    int m = 0;
    for (size_t i = 0; i < logits.size(); ++i) {
        if (!mask[i]) continue;
        ++m;
        double denom = 0.0;
        for (double x : logits[i]) denom += std::exp(x);
        total += -std::log(std::exp(logits[i][targets[i]]) / denom);
    }
    return total / m;
}

// Central finite difference of f at coordinate i of x.
inline double central_diff(const std::function<double(const std::vector<double>&)>& f,
                           std::vector<double> x, size_t i, double h = 1e-5) {
    const double step = h * std::max(1.0, std::abs(x[i]));
    const double x0 = x[i];
    x[i] = x0 + step;
    const double fp = f(x);
    x[i] = x0 - step;
    const double fm = f(x);
    return (fp - fm) / (2.0 * step);
}

inline bool close(double a, double b, double rtol, double atol) {
    return std::abs(a - b) <= atol + rtol * std::abs(b);
}

// Exhaustive max over all pairwise cosines.
inline double maxsim_ref(const std::vector<std::vector<double>>& qs,
                         const std::vector<std::vector<double>>& ds) {
    double best = -2.0;
    for (const auto& q : qs)
        for (const auto& d : ds) best = std::max(best, cosine_ref(q, d));
    return best;
}

}  // namespace oracle
