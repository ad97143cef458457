#include "adalora/importance.hpp"

#include <string>

#include "adalora/errors.hpp"

namespace adalora {

const char* variant_name(ScoreVariant v) {
    switch (v) {
    case ScoreVariant::SmoothedSensitivity: return "smoothed_sensitivity";
    case ScoreVariant::RawSensitivity: return "raw_sensitivity";
    case ScoreVariant::SingularMagnitude: return "singular_magnitude";
    }
    return "?";
}

Matrix sensitivity_matrix(const Matrix& w, const Matrix& g) {
    require_same_shape(w, g, "sensitivity_matrix");
    Matrix s(w.rows(), w.cols());
    for (std::size_t i = 0; i < s.size(); ++i) s.at(i) = std::fabs(w.at(i) * g.at(i));
    return s;
}

void update_stats(EntryStats& stats, const Matrix& current_sensitivity, double beta1,
                  double beta2, UncertaintyTiming timing) {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("EMA betas must lie in [0,1), got " + std::to_string(beta1) + ", " +
                          std::to_string(beta2));
    }
    if (stats.empty()) {
        stats = EntryStats(current_sensitivity.rows(), current_sensitivity.cols());
    }
    require_same_shape(stats.ibar, current_sensitivity, "update_stats");
    for (std::size_t i = 0; i < stats.ibar.size(); ++i) {
        const double ib_prev = stats.ibar.at(i);
        const double cur = current_sensitivity.at(i);
        const double ib_new = beta1 * ib_prev + (1.0 - beta1) * cur;
        const double ref = timing == UncertaintyTiming::CurrentIbar ? ib_new : ib_prev;
        stats.ibar.at(i) = ib_new;
        stats.ubar.at(i) = beta2 * stats.ubar.at(i) + (1.0 - beta2) * std::fabs(cur - ref);
    }
}

Matrix entry_score(const EntryStats& stats, const Matrix& w, const Matrix& g,
                   ScoreVariant variant) {
    switch (variant) {
    case ScoreVariant::SmoothedSensitivity:
        return hadamard(stats.ibar, stats.ubar);
    case ScoreVariant::RawSensitivity:
        return sensitivity_matrix(w, g);
    case ScoreVariant::SingularMagnitude:
        break;
    }
    throw ContractError("entry_score: SingularMagnitude bypasses entry scores");
}

namespace {

// Mean of s(.) over column j of a matrix-sized score table.
double col_mean(const Matrix& scores, int j) {
    double acc = 0.0;
    for (int i = 0; i < scores.rows(); ++i) acc += scores(i, j);
    return acc / scores.rows();
}

double row_mean(const Matrix& scores, int i) {
    double acc = 0.0;
    for (int j = 0; j < scores.cols(); ++j) acc += scores(i, j);
    return acc / scores.cols();
}

} // namespace

std::vector<TripletScore> triplet_score(const SvdAdapter& ad, const SvdScoreInputs& in,
                                        ScoreVariant variant) {
    const int r = ad.rank();
    std::vector<TripletScore> out;
    out.reserve(static_cast<std::size_t>(r));
    if (variant == ScoreVariant::SingularMagnitude) {
        for (int i = 0; i < r; ++i)
            out.push_back({ad.matrix_id, i, std::fabs(ad.lambda(0, i))});
        return out;
    }
    Matrix sp, sl, sq;
    if (variant == ScoreVariant::RawSensitivity) {
        sp = sensitivity_matrix(ad.p, *in.p_grad);
        sl = sensitivity_matrix(ad.lambda, *in.lambda_grad);
        sq = sensitivity_matrix(ad.q, *in.q_grad);
    } else {
        sp = hadamard(in.p_stats->ibar, in.p_stats->ubar);
        sl = hadamard(in.lambda_stats->ibar, in.lambda_stats->ubar);
        sq = hadamard(in.q_stats->ibar, in.q_stats->ubar);
    }
    for (int i = 0; i < r; ++i) {
        const double s = sl(0, i) + col_mean(sp, i) + row_mean(sq, i);
        out.push_back({ad.matrix_id, i, s});
    }
    return out;
}

std::vector<TripletScore> doublet_score(const LoraAdapter& ad, const LoraScoreInputs& in,
                                        ScoreVariant variant) {
    if (variant == ScoreVariant::SingularMagnitude) {
        throw ContractError("doublet_score: LoRA doublets have no singular value");
    }
    Matrix sa, sb;
    if (variant == ScoreVariant::RawSensitivity) {
        sa = sensitivity_matrix(ad.a, *in.a_grad);
        sb = sensitivity_matrix(ad.b, *in.b_grad);
    } else {
        sa = hadamard(in.a_stats->ibar, in.a_stats->ubar);
        sb = hadamard(in.b_stats->ibar, in.b_stats->ubar);
    }
    std::vector<TripletScore> out;
    out.reserve(static_cast<std::size_t>(ad.rank));
    for (int i = 0; i < ad.rank; ++i)
        out.push_back({ad.matrix_id, i, row_mean(sa, i) + col_mean(sb, i)});
    return out;
}

} // namespace adalora
