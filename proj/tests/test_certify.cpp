#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fairsmooth/certify.hpp"
#include "test_helpers.hpp"

#include <cmath>

using namespace fairsmooth;
using namespace fairsmooth::certify;

namespace {

smooth::SmoothingConfig fast_cfg() {
    smooth::SmoothingConfig cfg;
    cfg.m = 1024;
    cfg.n0 = 64;
    cfg.n = 2000;
    cfg.sigma_enc = 0.75;
    cfg.sigma_cls = 1.0;
    return cfg;
}

// Pipeline whose encoder simply forwards the input. With the identity
// generator, the representation of z + t a moves by exactly t * ||a||.
struct PassThroughRig {
    testkit::IdentityGen gen{4};
    nets::LassiEncoder enc = testkit::identity_encoder(4);
    nets::LinearClassifier cls;
    flow::SimilaritySpec spec;

    PassThroughRig() {
        Vec a = Vec::Zero(4);
        a[3] = 1.0;
        spec = testkit::segment_spec(a, 1.0);
        cls.W = Mat::Zero(2, 4);
        cls.b = Vec::Zero(2);
    }
    Pipeline pipeline() const { return {&gen, &enc, &cls}; }
};

}  // namespace

TEST_CASE("decide applies the strict inequality") {
    CHECK(decide(5.0, 7.0) == Verdict::Certified);
    CHECK(decide(7.0, 5.0) == Verdict::NotCertified);
    CHECK(decide(5.0, 5.0) == Verdict::NotCertified);
}

TEST_CASE("fair pipeline: ignore-the-attribute classifier certifies") {
    PassThroughRig rig;
    // Class signal on coordinate 0, attribute on coordinate 3.
    rig.cls.W(1, 0) = 8.0;
    rig.cls.W(0, 0) = -8.0;

    // The encoder ignores nothing, but the segment moves only coordinate 3,
    // so the center-smoothing radius is driven by sigma_enc alone; combined
    // with a confident classifier the point certifies.
    auto enc_inv = rig.enc;
    enc_inv.W[0] = Mat::Zero(4, 4);
    enc_inv.W[0](0, 0) = 1.0;  // representation keeps only the label signal
    enc_inv.W[0](1, 1) = 1.0;
    enc_inv.W[0](2, 2) = 1.0;
    Pipeline models{&rig.gen, &enc_inv, &rig.cls};

    Vec x = (Vec(4) << 1.0, 0.2, -0.1, 0.4).finished();
    const CertificateOutcome out =
        certify_point(models, x, rig.spec, fast_cfg(), numkit::RngStream(1, 1), 10.0, 1);
    CHECK(out.verdict == Verdict::Certified);
    REQUIRE(out.r_cs.has_value());
    CHECK(*out.r_cs == 0.0);  // representation constant along the segment
    REQUIRE(out.R.has_value());
    CHECK(*out.R > 0.0);
    CHECK(*out.predicted_class == 1);
    CHECK(out.prediction_correct.value_or(false));
    CHECK(out.confidence == doctest::Approx(1.0 - 0.01 - 0.001));
}

TEST_CASE("unfair pipeline: attribute-thresholding classifier is caught") {
    PassThroughRig rig;
    // The classifier reads exactly the attribute coordinate.
    rig.cls.W(1, 3) = 6.0;
    rig.cls.W(0, 3) = -6.0;
    Pipeline models = rig.pipeline();

    Vec x = Vec::Zero(4);
    x[3] = 0.1;  // near the decision boundary inside the segment

    const CertificateOutcome out =
        certify_point(models, x, rig.spec, fast_cfg(), numkit::RngStream(2, 1), 10.0, 1);
    // The representation sweeps ||a|| * 2 eps = 2 along the segment, and the
    // smoothed classifier cannot certify a radius that large.
    CHECK(out.verdict != Verdict::Certified);

    // The dense audit findsprediction flips across the segment.
    const ViolationReport report = brute_force_fairness_check(
        models, x, rig.spec, fast_cfg(), 21, numkit::RngStream(3, 1), 512, 401);
    CHECK_FALSE(report.violations.empty());
}

TEST_CASE("epsilon zero: singleton similarity set has no violations") {
    PassThroughRig rig;
    rig.cls.W(1, 3) = 6.0;
    rig.cls.W(0, 3) = -6.0;
    rig.spec.epsilon = 0.0;
    Pipeline models = rig.pipeline();
    const ViolationReport report = brute_force_fairness_check(
        models, Vec::Zero(4), rig.spec, fast_cfg(), 11, numkit::RngStream(4, 1), 256, 201);
    CHECK(report.violations.empty());
}

TEST_CASE("certificate invariant: Certified iff not abstained and r_cs < R") {
    PassThroughRig rig;
    rig.cls.W(1, 0) = 4.0;
    rig.cls.W(0, 0) = -4.0;
    Pipeline models = rig.pipeline();

    numkit::RngStream data_rng(9, 9);
    std::vector<Vec> xs;
    std::vector<int> ys;
    for (int i = 0; i < 24; ++i) {
        Vec x = numkit::gaussian_vec(data_rng, 4, 0.8);
        xs.push_back(x);
        ys.push_back(x[0] > 0 ? 1 : 0);
    }

    DatasetSummary summary;
    const auto outcomes =
        certify_dataset(models, xs, ys, rig.spec, fast_cfg(), 77, 1, 10.0, 0, &summary);
    for (const auto& o : outcomes) {
        if (o.verdict == Verdict::Certified) {
            REQUIRE(o.r_cs.has_value());
            REQUIRE(o.R.has_value());
            CHECK(*o.r_cs < *o.R);
            CHECK(o.confidence == doctest::Approx(0.989));
        }
        if (o.verdict == Verdict::Abstain) {
            CHECK_FALSE(o.r_cs.has_value());
            CHECK_FALSE(o.R.has_value());
            CHECK_FALSE(o.p_lower.has_value());
            CHECK_FALSE(o.predicted_class.has_value());
        }
    }
    CHECK(summary.count == 24);
    CHECK(summary.certified + summary.abstained <= 24);
}

TEST_CASE("certify_dataset: empty input reports nulls") {
    PassThroughRig rig;
    Pipeline models = rig.pipeline();
    DatasetSummary summary;
    const auto outcomes =
        certify_dataset(models, {}, {}, rig.spec, fast_cfg(), 1, 1, 10.0, 0, &summary);
    CHECK(outcomes.empty());
    CHECK(summary.count == 0);
    CHECK_FALSE(summary.acc_pct.has_value());
    CHECK_FALSE(summary.fair_pct.has_value());
}

TEST_CASE("constant-prediction model: fair rate is one minus abstention, acc majority share") {
    PassThroughRig rig;
    rig.cls.b = (Vec(2) << -90.0, 90.0).finished();  // always class 1
    Pipeline models = rig.pipeline();

    numkit::RngStream data_rng(5, 4);
    std::vector<Vec> xs;
    std::vector<int> ys;
    for (int i = 0; i < 30; ++i) {
        xs.push_back(numkit::gaussian_vec(data_rng, 4, 1.0));
        ys.push_back(i % 3 == 0 ? 1 : 0);  // majority class 0
    }
    auto cfg = fast_cfg();
    cfg.sigma_cls = 4.0;  // keeps R above the pass-through encoder's r_cs
    DatasetSummary summary;
    const auto outcomes = certify_dataset(models, xs, ys, rig.spec, cfg, 13, 2, 10.0, 0, &summary);
    (void)outcomes;
    REQUIRE(summary.fair_pct.has_value());
    CHECK(*summary.fair_pct ==
          doctest::Approx(100.0 * (1.0 - double(summary.abstained) / 30.0)));
    REQUIRE(summary.acc_pct.has_value());
    CHECK(*summary.acc_pct == doctest::Approx(100.0 / 3.0).epsilon(0.01));
}

TEST_CASE("worker count does not change outcomes") {
    PassThroughRig rig;
    rig.cls.W(1, 0) = 4.0;
    rig.cls.W(0, 0) = -4.0;
    Pipeline models = rig.pipeline();

    numkit::RngStream data_rng(31, 2);
    std::vector<Vec> xs;
    std::vector<int> ys;
    for (int i = 0; i < 12; ++i) {
        xs.push_back(numkit::gaussian_vec(data_rng, 4, 1.0));
        ys.push_back(i % 2);
    }
    auto cfg = fast_cfg();
    const auto seq = certify_dataset(models, xs, ys, rig.spec, cfg, 7, 1, 10.0, 0, nullptr);
    const auto par = certify_dataset(models, xs, ys, rig.spec, cfg, 7, 4, 10.0, 0, nullptr);
    REQUIRE(seq.size() == par.size());
    for (std::size_t i = 0; i < seq.size(); ++i) {
        CHECK(seq[i].verdict == par[i].verdict);
        CHECK(seq[i].r_cs.has_value() == par[i].r_cs.has_value());
        if (seq[i].r_cs && par[i].r_cs) CHECK(*seq[i].r_cs == *par[i].r_cs);
        if (seq[i].R && par[i].R) CHECK(*seq[i].R == *par[i].R);
    }
}

TEST_CASE("timeout aborts with the distinct flag") {
    PassThroughRig rig;
    rig.cls.W(1, 0) = 4.0;
    rig.cls.W(0, 0) = -4.0;
    Pipeline models = rig.pipeline();
    const CertificateOutcome out = certify_point(models, Vec::Ones(4), rig.spec, fast_cfg(),
                                                 numkit::RngStream(1, 1), 0.0, std::nullopt);
    CHECK(out.verdict == Verdict::Abstain);
    CHECK(out.timeout);
    CHECK_FALSE(out.r_cs.has_value());
}

TEST_CASE("max_points caps the certified prefix") {
    PassThroughRig rig;
    rig.cls.W(1, 0) = 4.0;
    rig.cls.W(0, 0) = -4.0;
    Pipeline models = rig.pipeline();
    numkit::RngStream data_rng(8, 1);
    std::vector<Vec> xs;
    std::vector<int> ys;
    for (int i = 0; i < 10; ++i) {
        xs.push_back(numkit::gaussian_vec(data_rng, 4, 1.0));
        ys.push_back(0);
    }
    const auto outcomes =
        certify_dataset(models, xs, ys, rig.spec, fast_cfg(), 7, 1, 10.0, 4, nullptr);
    CHECK(outcomes.size() == 4);
}

TEST_CASE("multi-attribute certification uses the coefficient ball") {
    PassThroughRig rig;
    rig.cls.W(1, 0) = 8.0;
    rig.cls.W(0, 0) = -8.0;
    // Two attributes spanning coordinates 2 and 3; the classifier ignores both.
    rig.spec.attributes = Mat::Zero(4, 2);
    rig.spec.attributes(2, 0) = 1.0;
    rig.spec.attributes(3, 1) = 1.0;
    rig.spec.epsilon = 1.0;

    auto enc_inv = rig.enc;
    enc_inv.W[0] = Mat::Zero(4, 4);
    enc_inv.W[0](0, 0) = 1.0;
    enc_inv.W[0](1, 1) = 1.0;
    Pipeline models{&rig.gen, &enc_inv, &rig.cls};

    Vec x = (Vec(4) << 1.0, 0.1, 0.2, -0.3).finished();
    const CertificateOutcome out =
        certify_point(models, x, rig.spec, fast_cfg(), numkit::RngStream(5, 5), 10.0, 1);
    CHECK(out.verdict == Verdict::Certified);
    REQUIRE(out.r_cs.has_value());
    CHECK(*out.r_cs == 0.0);

    // The dense audit covers axis endpoints plus ball samples and finds no
    // violations for the invariant pipeline.
    const ViolationReport report = brute_force_fairness_check(
        models, x, rig.spec, fast_cfg(), 15, numkit::RngStream(6, 6), 256, 201);
    CHECK(report.grid.rows() == 2);
    CHECK(report.grid.cols() == 15);
    CHECK(report.violations.empty());
    // Endpoints of both axes are present in the grid.
    bool has_axis0 = false, has_axis1 = false;
    for (int j = 0; j < 15; ++j) {
        if (report.grid(0, j) == 1.0 && report.grid(1, j) == 0.0) has_axis0 = true;
        if (report.grid(1, j) == -1.0 && report.grid(0, j) == 0.0) has_axis1 = true;
        CHECK(report.grid.col(j).norm() <= rig.spec.epsilon + 1e-12);
    }
    CHECK(has_axis0);
    CHECK(has_axis1);

    // A classifier reading an attribute coordinate is caught here too.
    PassThroughRig unfair;
    unfair.spec = rig.spec;
    unfair.cls.W(1, 2) = 6.0;
    unfair.cls.W(0, 2) = -6.0;
    Pipeline upipe = unfair.pipeline();
    const ViolationReport caught = brute_force_fairness_check(
        upipe, Vec::Zero(4), unfair.spec, fast_cfg(), 15, numkit::RngStream(7, 7), 256, 201);
    CHECK_FALSE(caught.violations.empty());
}
