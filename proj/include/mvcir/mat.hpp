#pragma once

#include <cmath>
#include <cstddef>

#include "mvcir/common.hpp"

namespace mvcir {

// Row-major dense matrix of doubles. All model math runs on these; the sizes
// involved are tiny (sequence length x hidden dim), so plain loops are fast
// enough and keep the numerics easy to reason about.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), a(size_t(r) * size_t(c), fill) {}

    double& at(int r, int c) { return a[size_t(r) * cols + c]; }
    double at(int r, int c) const { return a[size_t(r) * cols + c]; }
    double* row(int r) { return a.data() + size_t(r) * cols; }
    const double* row(int r) const { return a.data() + size_t(r) * cols; }
    size_t size() const { return a.size(); }

    Vec row_vec(int r) const { return Vec(row(r), row(r) + cols); }

    static Mat from_row(const Vec& v) {
        Mat m(1, int(v.size()));
        m.a = v;
        return m;
    }
};

// out += A * B
inline void addmul_nn(Mat& out, const Mat& A, const Mat& B) {
    for (int i = 0; i < A.rows; ++i) {
        const double* arow = A.row(i);
        double* orow = out.row(i);
        for (int k = 0; k < A.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = B.row(k);
            for (int j = 0; j < B.cols; ++j) orow[j] += aik * brow[j];
        }
    }
}

// out += A * B^T
inline void addmul_nt(Mat& out, const Mat& A, const Mat& B) {
    for (int i = 0; i < A.rows; ++i) {
        const double* arow = A.row(i);
        double* orow = out.row(i);
        for (int j = 0; j < B.rows; ++j) {
            const double* brow = B.row(j);
            double s = 0.0;
            for (int k = 0; k < A.cols; ++k) s += arow[k] * brow[k];
            orow[j] += s;
        }
    }
}

// out += A^T * B
inline void addmul_tn(Mat& out, const Mat& A, const Mat& B) {
    for (int k = 0; k < A.rows; ++k) {
        const double* arow = A.row(k);
        const double* brow = B.row(k);
        for (int i = 0; i < A.cols; ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            double* orow = out.row(i);
            for (int j = 0; j < B.cols; ++j) orow[j] += aki * brow[j];
        }
    }
}

inline Mat matmul_nn(const Mat& A, const Mat& B) {
    Mat out(A.rows, B.cols);
    addmul_nn(out, A, B);
    return out;
}

inline Mat matmul_nt(const Mat& A, const Mat& B) {
    Mat out(A.rows, B.rows);
    addmul_nt(out, A, B);
    return out;
}

}  // namespace mvcir
