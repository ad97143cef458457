#pragma once

#include <cmath>
#include <vector>

#include "adalora/adapters.hpp"
#include "adalora/matrix.hpp"

namespace adalora {

/// Which per-entry score s(.) feeds the triplet aggregation.
enum class ScoreVariant {
    SmoothedSensitivity,  // s = Ibar * Ubar
    RawSensitivity,       // s = |w * g|
    SingularMagnitude,    // S_i = |lambda_i|, no entry machinery
};
const char* variant_name(ScoreVariant v);

/// Exponentially smoothed sensitivity Ibar and uncertainty Ubar, one entry per
/// trainable parameter entry. Zero-initialized; shapes track their parameter.
struct EntryStats {
    Matrix ibar;
    Matrix ubar;

    EntryStats() = default;
    EntryStats(int rows, int cols) : ibar(rows, cols), ubar(rows, cols) {}
    bool empty() const { return ibar.empty(); }
};

/// Which Ibar enters the |I - Ibar| uncertainty update: the just-updated value
/// (default) or the previous step's.
enum class UncertaintyTiming { CurrentIbar, PreviousIbar };

struct TripletScore {
    int matrix_id = 0;
    int triplet_index = 0;
    double score = 0.0;
};

/// |w * g|: first-order estimate of the loss change from zeroing w.
inline double sensitivity(double w, double g) { return std::fabs(w * g); }

/// Element-wise |w .* g|.
Matrix sensitivity_matrix(const Matrix& w, const Matrix& g);

/// Ibar' = b1*Ibar + (1-b1)*I;  Ubar' = b2*Ubar + (1-b2)*|I - Ibar@timing|.
/// Betas live in [0,1): zero gives the degenerate (memoryless) EMA.
void update_stats(EntryStats& stats, const Matrix& current_sensitivity, double beta1,
                  double beta2, UncertaintyTiming timing = UncertaintyTiming::CurrentIbar);

/// Per-entry score for the given variant. SingularMagnitude is rejected here:
/// that variant bypasses entry scores entirely.
Matrix entry_score(const EntryStats& stats, const Matrix& w, const Matrix& g,
                   ScoreVariant variant);

/// Per-parameter inputs needed to score one SVD adapter.
struct SvdScoreInputs {
    const Matrix* p_grad = nullptr;
    const Matrix* lambda_grad = nullptr;
    const Matrix* q_grad = nullptr;
    const EntryStats* p_stats = nullptr;
    const EntryStats* lambda_stats = nullptr;
    const EntryStats* q_stats = nullptr;
};

/// S_{k,i} = s(lambda_i) + mean_j s(P_{ji}) + mean_j s(Q_{ij}), or |lambda_i|
/// for SingularMagnitude. Scores every triplet, masked ones included: they
/// remain candidates for reactivation.
std::vector<TripletScore> triplet_score(const SvdAdapter& ad, const SvdScoreInputs& in,
                                        ScoreVariant variant);

struct LoraScoreInputs {
    const Matrix* a_grad = nullptr;
    const Matrix* b_grad = nullptr;
    const EntryStats* a_stats = nullptr;
    const EntryStats* b_stats = nullptr;
};

/// Doublet analogue: S_i = mean_j s(A_{ij}) + mean_j s(B_{ji}).
std::vector<TripletScore> doublet_score(const LoraAdapter& ad, const LoraScoreInputs& in,
                                        ScoreVariant variant);

} // namespace adalora
