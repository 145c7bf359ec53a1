#include "foley/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

namespace foley {

namespace {

constexpr int kNoveltyMeanRadius = 8;  // frames of adaptive-mean context
constexpr int kPeakRadius = 3;         // frames a peak must dominate

std::vector<double> novelty_curve(const Tensor& mel) {
    const int m = mel.dim(0), frames = mel.dim(1);
    const float* d = mel.data();
    std::vector<double> nov(static_cast<size_t>(frames), 0.0);
    for (int f = 0; f < frames; ++f) {
        double acc = 0.0;
        for (int b = 0; b < m; ++b) {
            const float prev = f > 0 ? d[b * frames + f - 1] : -1.0f;
            const float diff = d[b * frames + f] - prev;
            if (diff > 0.0f) acc += diff;
        }
        nov[static_cast<size_t>(f)] = acc;
    }
    return nov;
}

}  // namespace

std::vector<OnsetCandidate> onset_candidates(const Tensor& mel, const AudioConfig& cfg) {
    if (mel.rank() != 2) throw ShapeError("onset input must be [n_mels x frames]");
    const std::vector<double> nov = novelty_curve(mel);
    const int frames = static_cast<int>(nov.size());
    std::vector<OnsetCandidate> out;
    for (int f = 0; f < frames; ++f) {
        if (nov[static_cast<size_t>(f)] <= 0.0) continue;
        bool peak = true;
        for (int g = std::max(0, f - kPeakRadius); g < f && peak; ++g)
            if (nov[static_cast<size_t>(g)] >= nov[static_cast<size_t>(f)]) peak = false;
        for (int g = f + 1; g <= std::min(frames - 1, f + kPeakRadius) && peak; ++g)
            if (nov[static_cast<size_t>(g)] > nov[static_cast<size_t>(f)]) peak = false;
        if (!peak) continue;
        const int lo = std::max(0, f - kNoveltyMeanRadius);
        const int hi = std::min(frames - 1, f + kNoveltyMeanRadius);
        double mean = 0.0;
        for (int g = lo; g <= hi; ++g) mean += nov[static_cast<size_t>(g)];
        mean /= (hi - lo + 1);
        const double strength = nov[static_cast<size_t>(f)] - mean;
        if (strength <= 0.0) continue;
        out.push_back({static_cast<double>(f) * cfg.hop / cfg.sample_rate, strength});
    }
    return out;
}

std::vector<double> pick_onsets(const std::vector<OnsetCandidate>& cands, double threshold,
                                double min_sep) {
    std::vector<OnsetCandidate> sorted = cands;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const OnsetCandidate& a, const OnsetCandidate& b) {
                         return a.strength > b.strength;
                     });
    std::vector<double> accepted;
    for (const OnsetCandidate& c : sorted) {
        if (c.strength < threshold) break;
        bool clear = true;
        for (double t : accepted)
            if (std::abs(t - c.time) < min_sep) {
                clear = false;
                break;
            }
        if (clear) accepted.push_back(c.time);
    }
    std::sort(accepted.begin(), accepted.end());
    return accepted;
}

std::vector<double> onset_detect(const Tensor& mel, const AudioConfig& cfg, double threshold) {
    return pick_onsets(onset_candidates(mel, cfg), threshold, kOnsetMinSep);
}

OnsetScore onset_metrics(std::vector<double> pred, std::vector<double> gt, double tol) {
    std::sort(pred.begin(), pred.end());
    std::sort(gt.begin(), gt.end());
    std::vector<bool> used(gt.size(), false);
    int matches = 0;
    for (double p : pred) {
        int best = -1;
        double best_d = tol;
        for (size_t i = 0; i < gt.size(); ++i) {
            if (used[i]) continue;
            const double d = std::abs(gt[i] - p);
            if (d <= best_d) {
                best_d = d;
                best = static_cast<int>(i);
            }
        }
        if (best >= 0) {
            used[static_cast<size_t>(best)] = true;
            ++matches;
        }
    }
    OnsetScore s;
    s.matches = matches;
    const size_t denom = std::max(pred.size(), gt.size());
    s.acc = denom == 0 ? 1.0 : static_cast<double>(matches) / static_cast<double>(denom);
    return s;
}

double detection_ap(const std::vector<std::vector<OnsetCandidate>>& cands,
                    const std::vector<std::vector<double>>& refs, double tol, double min_sep) {
    if (cands.size() != refs.size())
        throw ValueError("candidate and reference clip counts differ");
    struct Ranked {
        double strength;
        int clip;
        double time;
    };
    std::vector<Ranked> ranked;
    size_t n_ref = 0;
    for (size_t c = 0; c < cands.size(); ++c) {
        n_ref += refs[c].size();
        for (const OnsetCandidate& o : cands[c])
            ranked.push_back({o.strength, static_cast<int>(c), o.time});
    }
    if (n_ref == 0) return 0.0;
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const Ranked& a, const Ranked& b) { return a.strength > b.strength; });

    std::vector<std::vector<double>> accepted(cands.size());
    std::vector<std::vector<bool>> used(refs.size());
    for (size_t c = 0; c < refs.size(); ++c) used[c].assign(refs[c].size(), false);

    double ap = 0.0;
    int tp = 0, fp = 0;
    for (const Ranked& r : ranked) {
        auto& acc = accepted[static_cast<size_t>(r.clip)];
        bool merged = false;
        for (double t : acc)
            if (std::abs(t - r.time) < min_sep) {
                merged = true;
                break;
            }
        if (merged) continue;
        acc.push_back(r.time);
        const auto& clip_refs = refs[static_cast<size_t>(r.clip)];
        auto& clip_used = used[static_cast<size_t>(r.clip)];
        int best = -1;
        double best_d = tol;
        for (size_t i = 0; i < clip_refs.size(); ++i) {
            if (clip_used[i]) continue;
            const double d = std::abs(clip_refs[i] - r.time);
            if (d <= best_d) {
                best_d = d;
                best = static_cast<int>(i);
            }
        }
        if (best >= 0) {
            clip_used[static_cast<size_t>(best)] = true;
            ++tp;
            ap += static_cast<double>(tp) / (tp + fp) / static_cast<double>(n_ref);
        } else {
            ++fp;
        }
    }
    return ap;
}

double ranking_ap(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ValueError("scores/labels length mismatch");
    std::vector<size_t> order(scores.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    size_t n_pos = 0;
    for (int l : labels) n_pos += l ? 1 : 0;
    if (n_pos == 0) return 0.0;
    double ap = 0.0;
    size_t tp = 0;
    for (size_t k = 0; k < order.size(); ++k) {
        if (labels[order[k]]) {
            ++tp;
            ap += static_cast<double>(tp) / static_cast<double>(k + 1) /
                  static_cast<double>(n_pos);
        }
    }
    return ap;
}

double kl_div(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw ValueError("distribution length mismatch");
    constexpr double floor = 1e-8;
    double acc = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        const double pi = std::max(p[i], floor);
        const double qi = std::max(q[i], floor);
        acc += pi * std::log(pi / qi);
    }
    return acc;
}

double mkl(const Tensor& probs_ref, const Tensor& probs_gen) {
    if (probs_ref.shape() != probs_gen.shape() || probs_ref.rank() != 2)
        throw ShapeError("mkl expects matching [n x K] probability tables");
    const int n = probs_ref.dim(0), k = probs_ref.dim(1);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        std::vector<double> p(static_cast<size_t>(k)), q(static_cast<size_t>(k));
        for (int j = 0; j < k; ++j) {
            p[static_cast<size_t>(j)] = probs_ref.data()[i * k + j];
            q[static_cast<size_t>(j)] = probs_gen.data()[i * k + j];
        }
        acc += kl_div(p, q);
    }
    return n == 0 ? 0.0 : acc / n;
}

namespace {

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, const Eigen::VectorXd& mu) {
    const Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
    return centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double fid(const Tensor& feats_a, const Tensor& feats_b) {
    if (feats_a.rank() != 2 || feats_b.rank() != 2 || feats_a.dim(1) != feats_b.dim(1))
        throw ShapeError("fid expects [n x d] feature tables with equal d");
    if (feats_a.dim(0) < 2 || feats_b.dim(0) < 2)
        throw ValueError("fid needs at least two samples per side");
    const int d = feats_a.dim(1);
    auto to_eigen = [d](const Tensor& t) {
        Eigen::MatrixXd m(t.dim(0), d);
        for (int i = 0; i < t.dim(0); ++i)
            for (int j = 0; j < d; ++j) m(i, j) = t.data()[i * d + j];
        return m;
    };
    const Eigen::MatrixXd a = to_eigen(feats_a), b = to_eigen(feats_b);
    const Eigen::VectorXd mu_a = a.colwise().mean(), mu_b = b.colwise().mean();
    Eigen::MatrixXd cov_a = covariance(a, mu_a), cov_b = covariance(b, mu_b);

    auto lift_if_degenerate = [d](Eigen::MatrixXd& cov, const char* side) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
        if (es.eigenvalues().minCoeff() <= 0.0) {
            std::cerr << "warning: degenerate " << side
                      << " covariance in fid, adding 1e-6 ridge\n";
            cov += 1e-6 * Eigen::MatrixXd::Identity(d, d);
        }
    };
    lift_if_degenerate(cov_a, "first");
    lift_if_degenerate(cov_b, "second");

    const Eigen::MatrixXd a_half = sqrtm_psd(cov_a);
    Eigen::MatrixXd inner = a_half * cov_b * a_half;
    inner = 0.5 * (inner + inner.transpose().eval());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner);
    const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    const double mean_term = (mu_a - mu_b).squaredNorm();
    return mean_term + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
}

AudioClassifier::AudioClassifier(ParamStore& ps, int n_classes, Rng& rng) {
    c1_ = make_conv2d(ps, "clf.c1", 1, 16, 3, 2, 1, rng);
    g1_ = make_group_norm(ps, "clf.g1", 16, 4);
    c2_ = make_conv2d(ps, "clf.c2", 16, 32, 3, 2, 1, rng);
    g2_ = make_group_norm(ps, "clf.g2", 32, 4);
    c3_ = make_conv2d(ps, "clf.c3", 32, 64, 3, 2, 1, rng);
    g3_ = make_group_norm(ps, "clf.g3", 64, 4);
    head_ = make_linear(ps, "clf.head", 64, n_classes, rng);
}

Tensor AudioClassifier::features(const Tensor& mel) const {
    if (mel.rank() != 4 || mel.dim(1) != 1)
        throw ShapeError("classifier input must be [N x 1 x H x W]");
    Tensor h = silu(g1_(c1_(mel)));
    h = silu(g2_(c2_(h)));
    h = silu(g3_(c3_(h)));
    h = reshape(h, {h.dim(0), h.dim(1), h.dim(2) * h.dim(3)});
    return mean_axis(h, 2);
}

Tensor AudioClassifier::logits(const Tensor& mel) const { return head_(features(mel)); }

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, float smoothing) {
    if (logits.rank() != 2 || logits.dim(0) != static_cast<int>(labels.size()))
        throw ShapeError("logits must be [n x K] with one label per row");
    const int n = logits.dim(0), k = logits.dim(1);
    std::vector<float> target(static_cast<size_t>(n) * k, smoothing / k);
    for (int i = 0; i < n; ++i) {
        const int l = labels[static_cast<size_t>(i)];
        if (l < 0 || l >= k) throw ValueError("label out of range");
        target[static_cast<size_t>(i) * k + l] += 1.0f - smoothing;
    }
    Tensor t = Tensor::from({n, k}, std::move(target));
    Tensor logp = log_t(clamp(softmax(logits, 1), 1e-8f, 1.0f));
    return mul_scalar(mean(sum_axis(mul(t, logp), 1)), -1.0f);
}

}  // namespace foley
