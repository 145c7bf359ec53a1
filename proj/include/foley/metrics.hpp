#pragma once

#include <utility>
#include <vector>

#include "foley/audio.hpp"
#include "foley/nn.hpp"
#include "foley/tensor.hpp"

namespace foley {

// Default novelty-over-local-mean threshold for accepting an onset peak.
inline constexpr double kOnsetThreshold = 1.0;
inline constexpr double kOnsetMinSep = 0.1;   // seconds
inline constexpr double kOnsetTol = 0.1;      // matching tolerance, seconds

struct OnsetCandidate {
    double time = 0.0;      // seconds
    double strength = 0.0;  // novelty minus adaptive local mean
};

// Spectral-flux novelty peaks over a normalized log-mel [n_mels x frames].
// Frames before the clip are treated as silence so an event at time zero
// still produces a peak.
std::vector<OnsetCandidate> onset_candidates(const Tensor& mel, const AudioConfig& cfg);

// Strongest-first peak picking with a minimum separation, then sorted by time.
std::vector<double> pick_onsets(const std::vector<OnsetCandidate>& cands,
                                double threshold = kOnsetThreshold,
                                double min_sep = kOnsetMinSep);

std::vector<double> onset_detect(const Tensor& mel, const AudioConfig& cfg,
                                 double threshold = kOnsetThreshold);

struct OnsetScore {
    double acc = 0.0;
    int matches = 0;
};

// Greedy one-to-one matching within +-tol; acc = matches / max(|pred|, |gt|),
// defined as 1 when both lists are empty.
OnsetScore onset_metrics(std::vector<double> pred, std::vector<double> gt,
                         double tol = kOnsetTol);

// Ranked-detection average precision across clips: candidates are swept from
// strongest to weakest, merged against stronger accepted peaks within
// min_sep, and matched to unmatched reference onsets within +-tol.
double detection_ap(const std::vector<std::vector<OnsetCandidate>>& cands,
                    const std::vector<std::vector<double>>& refs, double tol = kOnsetTol,
                    double min_sep = kOnsetMinSep);

// Plain ranking average precision for scored binary labels.
double ranking_ap(const std::vector<double>& scores, const std::vector<int>& labels);

// KL(p || q) with both distributions floored at 1e-8.
double kl_div(const std::vector<double>& p, const std::vector<double>& q);

// Mean KL over paired rows of [n x K] class probabilities, reference first.
double mkl(const Tensor& probs_ref, const Tensor& probs_gen);

// Frechet distance between Gaussian fits of two feature sets [n x d]. The
// trace term uses the symmetrized product sqrt(A)^T B sqrt(A) with negative
// eigenvalues clamped; degenerate covariances are lifted by 1e-6 I with a
// warning on stderr.
double fid(const Tensor& feats_a, const Tensor& feats_b);

// Small conv net over mel spectrograms used for MKL, FID features and the
// class-accuracy report. Penultimate feature width is 64.
class AudioClassifier {
  public:
    AudioClassifier(ParamStore& ps, int n_classes, Rng& rng);

    Tensor features(const Tensor& mel) const;  // [N,1,H,W] -> [N, 64]
    Tensor logits(const Tensor& mel) const;    // [N,1,H,W] -> [N, K]

  private:
    Conv2d c1_, c2_, c3_;
    GroupNorm g1_, g2_, g3_;
    Linear head_;
};

// Softmax cross-entropy with label smoothing; probabilities floored at 1e-8.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, float smoothing);

}  // namespace foley
