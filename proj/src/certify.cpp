#include "fairsmooth/certify.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace fairsmooth::certify {

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
        .count();
}

}  // namespace

const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::Certified: return "certified";
        case Verdict::NotCertified: return "not_certified";
        case Verdict::Abstain: return "abstain";
    }
    return "?";
}

Verdict decide(double r_cs, double R) {
    return r_cs < R ? Verdict::Certified : Verdict::NotCertified;
}

smooth::VecFn segment_map(const Pipeline& models, const flow::SimilaritySpec& spec,
                          const Vec& z_G) {
    const flow::Bijection* gen = models.gen;
    const nets::LassiEncoder* enc = models.enc;
    const Mat attrs = spec.attributes;
    return [gen, enc, attrs, z_G](const Vec& t) {
        return nets::encoder_forward(*enc, gen->decode(z_G + attrs * t));
    };
}

CertificateOutcome certify_point(const Pipeline& models, const Vec& x,
                                 const flow::SimilaritySpec& spec,
                                 const smooth::SmoothingConfig& cfg, numkit::RngStream rng,
                                 double timeout_s, std::optional<int> label) {
    if (!models.gen || !models.enc || !models.cls) {
        throw std::invalid_argument("certify_point: pipeline incomplete");
    }
    if (models.enc->train_mode) {
        throw std::invalid_argument("certify_point: encoder must be frozen (eval mode)");
    }
    spec.validate();
    cfg.validate();

    const auto start = std::chrono::steady_clock::now();
    CertificateOutcome out;
    out.confidence = 1.0 - cfg.alpha_c - cfg.alpha_s;

    const Vec z_G = models.gen->encode(x);
    const smooth::VecFn g = segment_map(models, spec, z_G);

    const smooth::CenterResult center =
        smooth::center_smooth(g, spec.attr_count(), spec.epsilon, cfg, rng.substream("center"));
    out.audit.center_ran = true;
    out.audit.center_abstained = center.abstained;
    out.audit.center_r = center.abstained ? 0.0 : center.r_cs;

    if (elapsed_ms(start) > timeout_s * 1000.0) {
        out.verdict = Verdict::Abstain;
        out.timeout = true;
        out.wall_ms = elapsed_ms(start);
        return out;
    }
    if (center.abstained) {
        out.verdict = Verdict::Abstain;
        out.wall_ms = elapsed_ms(start);
        return out;
    }

    const smooth::SmoothedPrediction pred =
        smooth::smoothed_classify_certify(*models.cls, center.z_cs, cfg, rng.substream("classify"));
    out.audit.classify_ran = true;
    out.audit.classify_abstained = pred.abstained;
    out.audit.raw_p_lower = pred.p_lower;
    out.audit.votes = pred.votes;
    out.audit.vote_samples = pred.samples;

    if (elapsed_ms(start) > timeout_s * 1000.0) {
        out.verdict = Verdict::Abstain;
        out.timeout = true;
        out.wall_ms = elapsed_ms(start);
        return out;
    }
    if (pred.abstained) {
        out.verdict = Verdict::Abstain;
        out.wall_ms = elapsed_ms(start);
        return out;
    }

    out.verdict = decide(center.r_cs, pred.radius);
    out.z_cs = center.z_cs;
    out.r_cs = center.r_cs;
    out.R = pred.radius;
    out.p_lower = pred.p_lower;
    out.predicted_class = pred.label;
    if (label.has_value()) out.prediction_correct = pred.label == *label;
    out.wall_ms = elapsed_ms(start);
    return out;
}

DatasetSummary summarize(const std::vector<CertificateOutcome>& outcomes,
                         const std::vector<int>& ys) {
    DatasetSummary s;
    s.count = int(outcomes.size());
    for (const CertificateOutcome& o : outcomes) {
        if (o.verdict == Verdict::Certified) s.certified++;
        if (o.verdict == Verdict::Abstain) s.abstained++;
        if (o.timeout) s.timeouts++;
        if (o.prediction_correct.value_or(false)) s.correct++;
    }
    if (s.count > 0) {
        s.fair_pct = 100.0 * double(s.certified) / double(s.count);
        if (!ys.empty()) s.acc_pct = 100.0 * double(s.correct) / double(s.count);
    }
    return s;
}

std::vector<CertificateOutcome> certify_dataset(const Pipeline& models, const std::vector<Vec>& xs,
                                                const std::vector<int>& ys,
                                                const flow::SimilaritySpec& spec,
                                                const smooth::SmoothingConfig& cfg,
                                                std::uint64_t seed, int workers, double timeout_s,
                                                int max_points, DatasetSummary* summary) {
    if (!ys.empty() && ys.size() != xs.size()) {
        throw std::invalid_argument("certify_dataset: label count mismatch");
    }
    const int total =
        max_points > 0 ? std::min<int>(max_points, int(xs.size())) : int(xs.size());
    std::vector<CertificateOutcome> outcomes(static_cast<std::size_t>(total));

    const numkit::RngStream base = numkit::RngStream(seed, 0).substream("certify");
    std::atomic<int> next{0};
    auto work = [&]() {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= total) return;
            std::optional<int> label;
            if (!ys.empty()) label = ys[std::size_t(i)];
            CertificateOutcome o =
                certify_point(models, xs[std::size_t(i)], spec, cfg,
                              base.substream(std::uint64_t(i)), timeout_s, label);
            o.index = i;
            outcomes[std::size_t(i)] = std::move(o);
        }
    };

    const int pool = std::max(1, workers);
    if (pool == 1) {
        work();
    } else {
        std::vector<std::thread> threads;
        for (int w = 0; w < pool; ++w) threads.emplace_back(work);
        for (std::thread& t : threads) t.join();
    }

    if (summary) *summary = summarize(outcomes, ys);
    return outcomes;
}

ViolationReport brute_force_fairness_check(const Pipeline& models, const Vec& x,
                                           const flow::SimilaritySpec& spec,
                                           const smooth::SmoothingConfig& cfg, int grid_size,
                                           numkit::RngStream rng, int m_eval, int n_votes) {
    if (grid_size < 3) throw std::invalid_argument("brute_force_fairness_check: grid_size >= 3");
    spec.validate();

    const int d = spec.attr_count();
    Mat grid(d, grid_size);
    if (spec.epsilon == 0.0) {
        grid.setZero();
    } else if (d == 1) {
        for (int j = 0; j < grid_size; ++j) {
            grid(0, j) = -spec.epsilon + 2.0 * spec.epsilon * double(j) / double(grid_size - 1);
        }
    } else {
        // Axis endpoints first, then deterministic ball samples.
        int j = 0;
        numkit::RngStream ball = rng.substream("grid");
        for (int a = 0; a < d && j < grid_size; ++a) {
            Vec t = Vec::Zero(d);
            t[a] = spec.epsilon;
            grid.col(j++) = t;
            if (j < grid_size) {
                grid.col(j++) = -t;
            }
        }
        while (j < grid_size) {
            grid.col(j++) = flow::sample_coefficients(spec, ball);
        }
    }

    const Vec z_G = models.gen->encode(x);
    const smooth::VecFn g = segment_map(models, spec, z_G);

    auto eval_class = [&](const Vec& t, std::uint64_t tag) {
        const Vec center = smooth::smoothed_center_eval(g, t, cfg.sigma_enc, m_eval, cfg.chunk,
                                                        rng.substream("ctr").substream(tag));
        return smooth::smoothed_majority_class(*models.cls, center, cfg.sigma_cls, n_votes,
                                               cfg.chunk, rng.substream("vote").substream(tag));
    };

    ViolationReport report;
    report.grid = grid;
    report.reference_class = eval_class(Vec::Zero(d), 0xFFFFFFFFULL);
    report.classes.resize(std::size_t(grid_size));
    for (int j = 0; j < grid_size; ++j) {
        if (spec.epsilon == 0.0) {
            // Singleton similarity set: no distinct members to disagree.
            report.classes[std::size_t(j)] = report.reference_class;
            continue;
        }
        report.classes[std::size_t(j)] = eval_class(grid.col(j), std::uint64_t(j));
        if (report.classes[std::size_t(j)] != report.reference_class) {
            report.violations.push_back(j);
        }
    }
    return report;
}

}  // namespace fairsmooth::certify
