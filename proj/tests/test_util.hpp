// Shared test helpers: finite-difference oracles, a one-sided Jacobi SVD used
// as an independent rank oracle, and Spearman rank correlation. These live in
// test code only and stay independent of the library's gradient path.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "adalora/adapters.hpp"
#include "adalora/matrix.hpp"

namespace testutil {

inline double relative_error(double a, double b, double floor = 1e-5) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

// Central finite difference d(loss)/d(entry) with the entry restored after.
inline double central_difference(adalora::Matrix& param, int i, int j,
                                 const std::function<double()>& loss, double step = 1e-5) {
    const double saved = param(i, j);
    param(i, j) = saved + step;
    const double up = loss();
    param(i, j) = saved - step;
    const double down = loss();
    param(i, j) = saved;
    return (up - down) / (2.0 * step);
}

// Max relative error between an analytic gradient and central differences
// over every entry of one parameter matrix.
inline double max_grad_error(adalora::Matrix& param, const adalora::Matrix& grad,
                             const std::function<double()>& loss, double step = 1e-5) {
    double worst = 0.0;
    for (int i = 0; i < param.rows(); ++i) {
        for (int j = 0; j < param.cols(); ++j) {
            const double fd = central_difference(param, i, j, loss, step);
            worst = std::max(worst, relative_error(grad(i, j), fd));
        }
    }
    return worst;
}

// Singular values by one-sided Jacobi rotations. Deliberately a different
// algorithm from anything in the library; used as the planted-rank oracle.
inline std::vector<double> jacobi_singular_values(const adalora::Matrix& input) {
    adalora::Matrix a = input.rows() >= input.cols() ? input : adalora::transpose(input);
    const int m = a.rows(), n = a.cols();
    for (int sweep = 0; sweep < 60; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (int i = 0; i < m; ++i) {
                    app += a(i, p) * a(i, p);
                    aqq += a(i, q) * a(i, q);
                    apq += a(i, p) * a(i, q);
                }
                off = std::max(off, std::fabs(apq));
                if (std::fabs(apq) < 1e-15) continue;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int i = 0; i < m; ++i) {
                    const double vip = a(i, p), viq = a(i, q);
                    a(i, p) = c * vip - s * viq;
                    a(i, q) = s * vip + c * viq;
                }
            }
        }
        if (off < 1e-14) break;
    }
    std::vector<double> sv(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        double norm = 0.0;
        for (int i = 0; i < m; ++i) norm += a(i, j) * a(i, j);
        sv[static_cast<std::size_t>(j)] = std::sqrt(norm);
    }
    std::sort(sv.rbegin(), sv.rend());
    return sv;
}

inline int numerical_rank(const adalora::Matrix& a, double tol = 1e-8) {
    int rank = 0;
    for (double s : jacobi_singular_values(a))
        if (s > tol) ++rank;
    return rank;
}

// Average ranks (ties share the mean rank), then Pearson on the ranks.
inline std::vector<double> tied_ranks(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        const double mean_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

// Tape-free re-implementation of the adapted block-stack forward, written
// against the same math but none of the same code. Serves as the fast
// independent evaluator for finite-difference oracles.
inline adalora::Matrix reference_forward(const adalora::ToyModel& model, adalora::Matrix x) {
    using adalora::Matrix;
    using adalora::MatKind;
    const int dh = model.head_dim();
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const double eps = 1e-5;

    auto adapted = [&](int matrix_id, const Matrix& in) {
        const adalora::FrozenLinear& fl = model.frozen(matrix_id);
        Matrix y = adalora::matmul(in, fl.w0);
        if (fl.bias) {
            for (int i = 0; i < y.rows(); ++i)
                for (int j = 0; j < y.cols(); ++j) y(i, j) += (*fl.bias)(0, j);
        }
        if (model.adapter_set == adalora::AdapterSet::Svd) {
            const adalora::SvdAdapter& ad = model.svd[static_cast<std::size_t>(matrix_id)];
            Matrix t = adalora::matmul(in, ad.p);
            for (int i = 0; i < t.rows(); ++i)
                for (int j = 0; j < t.cols(); ++j) t(i, j) *= ad.lambda(0, j);
            y = adalora::add(y, adalora::scale(adalora::matmul(t, ad.q), ad.alpha / ad.rank()));
        } else if (model.adapter_set == adalora::AdapterSet::Lora) {
            const adalora::LoraAdapter& ad = model.lora[static_cast<std::size_t>(matrix_id)];
            Matrix t = adalora::matmul(in, ad.b);
            for (int i = 0; i < t.rows(); ++i)
                for (int j = 0; j < t.cols(); ++j)
                    if (!ad.doublet_mask[static_cast<std::size_t>(j)]) t(i, j) = 0.0;
            y = adalora::add(y, adalora::scale(adalora::matmul(t, ad.a), ad.alpha / ad.rank));
        }
        return y;
    };
    auto layer_norm = [&](const Matrix& in) {
        Matrix y = in;
        for (int i = 0; i < y.rows(); ++i) {
            double mean = 0.0;
            for (int j = 0; j < y.cols(); ++j) mean += y(i, j);
            mean /= y.cols();
            double var = 0.0;
            for (int j = 0; j < y.cols(); ++j) var += (y(i, j) - mean) * (y(i, j) - mean);
            var /= y.cols();
            const double inv = 1.0 / std::sqrt(var + eps);
            for (int j = 0; j < y.cols(); ++j) y(i, j) = (y(i, j) - mean) * inv;
        }
        return y;
    };

    for (int l = 0; l < static_cast<int>(model.blocks.size()); ++l) {
        const int base = l * adalora::kNumKinds;
        const Matrix q = adapted(base + static_cast<int>(MatKind::Wq), x);
        const Matrix k = adapted(base + static_cast<int>(MatKind::Wk), x);
        const Matrix v = adapted(base + static_cast<int>(MatKind::Wv), x);
        Matrix cat(x.rows(), model.d);
        for (int h = 0; h < model.heads; ++h) {
            // scores = softmax(q_h k_h^T / sqrt(dh)), head = scores * v_h
            for (int i = 0; i < x.rows(); ++i) {
                std::vector<double> row(static_cast<std::size_t>(x.rows()));
                double mx = -1e300;
                for (int j = 0; j < x.rows(); ++j) {
                    double dot = 0.0;
                    for (int c = 0; c < dh; ++c) dot += q(i, h * dh + c) * k(j, h * dh + c);
                    row[static_cast<std::size_t>(j)] = dot * att_scale;
                    mx = std::max(mx, row[static_cast<std::size_t>(j)]);
                }
                double z = 0.0;
                for (int j = 0; j < x.rows(); ++j) {
                    row[static_cast<std::size_t>(j)] = std::exp(row[static_cast<std::size_t>(j)] - mx);
                    z += row[static_cast<std::size_t>(j)];
                }
                for (int c = 0; c < dh; ++c) {
                    double acc = 0.0;
                    for (int j = 0; j < x.rows(); ++j)
                        acc += row[static_cast<std::size_t>(j)] / z * v(j, h * dh + c);
                    cat(i, h * dh + c) = acc;
                }
            }
        }
        const Matrix o = adapted(base + static_cast<int>(MatKind::Wo), cat);
        x = layer_norm(adalora::add(x, o));
        Matrix f = adapted(base + static_cast<int>(MatKind::Wf1), x);
        for (std::size_t i = 0; i < f.size(); ++i)
            if (f.at(i) < 0.0) f.at(i) = 0.0;
        f = adapted(base + static_cast<int>(MatKind::Wf2), f);
        x = layer_norm(adalora::add(x, f));
    }
    return x;
}

inline double reference_mse(const adalora::ToyModel& model, const adalora::Matrix& x,
                            const adalora::Matrix& target) {
    const adalora::Matrix y = reference_forward(model, x);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = y.at(i) - target.at(i);
        acc += d * d;
    }
    return acc / static_cast<double>(y.size());
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    const std::vector<double> rx = tied_ranks(x);
    const std::vector<double> ry = tied_ranks(y);
    const std::size_t n = x.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double cov = 0.0, vx = 0.0, vy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx) * (rx[i] - mx);
        vy += (ry[i] - my) * (ry[i] - my);
    }
    if (vx == 0.0 || vy == 0.0) return 0.0;
    return cov / std::sqrt(vx * vy);
}

} // namespace testutil
