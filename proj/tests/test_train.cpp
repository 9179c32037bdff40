#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fairsmooth/train.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

#include <cmath>

using namespace fairsmooth;
using namespace fairsmooth::train;
using testkit::IdentityGen;

namespace {

// Small synthetic binary task: class means +/- mu on the first coordinates,
// plus a "sensitive" direction that carries no label signal.
struct Toy {
    IdentityGen gen{8};
    std::vector<Vec> xs;
    std::vector<int> ys;
    flow::SimilaritySpec spec;

    explicit Toy(int n, std::uint64_t seed = 99) {
        numkit::RngStream rng(seed, 0);
        Vec a = Vec::Zero(8);
        a[7] = 1.0;
        spec = testkit::segment_spec(a, 1.0);
        for (int i = 0; i < n; ++i) {
            const int y = i % 2;
            Vec x = numkit::gaussian_vec(rng, 8, 0.3);
            x[0] += y == 1 ? 1.5 : -1.5;
            x[1] += y == 1 ? 0.8 : -0.8;
            xs.push_back(x);
            ys.push_back(y);
        }
    }
};

}  // namespace

TEST_CASE("adv_loss: distance arithmetic on hand-picked coefficients") {
    // P = identity, unit-norm attribute, coefficients {-0.5, 0.2, 0.9}.
    IdentityGen gen(3);
    auto enc = testkit::identity_encoder(3);
    Vec a = Vec::Zero(3);
    a[1] = 1.0;
    auto spec = testkit::segment_spec(a, 1.0);
    const Vec z = (Vec(3) << 0.1, -0.2, 0.4).finished();

    nets::Tape tape;
    auto rep0 = nets::encoder_forward_node(tape, enc, nullptr, gen.decode(z));
    std::vector<nets::Tape::NodeId> dists;
    for (double t : {-0.5, 0.2, 0.9}) {
        Vec tv(1);
        tv << t;
        auto rep = nets::encoder_forward_node(tape, enc, nullptr,
                                              gen.decode(flow::similarity_endpoint(spec, z, tv)));
        dists.push_back(tape.l2norm(tape.sub(rep0, rep)));
    }
    CHECK(tape.value(tape.max_of(dists)) == doctest::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("adv_loss: epsilon zero gives exactly zero") {
    IdentityGen gen(4);
    auto enc = testkit::identity_encoder(4);
    Vec a = Vec::Zero(4);
    a[0] = 2.0;
    auto spec = testkit::segment_spec(a, 0.0);
    numkit::RngStream rng(5, 5);
    CHECK(adv_loss(gen, enc, spec, Vec::Ones(4), 5, rng) == 0.0);
}

TEST_CASE("adv_loss is a lower bound of the dense-grid segment maximum") {
    IdentityGen gen(6);
    numkit::RngStream init(42, 0);
    nets::LassiEncoder enc = nets::make_encoder(6, 16, 2, 5, init);
    enc.norm.running_mean = numkit::gaussian_vec(init, 5, 0.2);

    Vec a = numkit::gaussian_vec(init, 6, 1.0);
    auto spec = testkit::segment_spec(a, 0.8);
    const Vec z = numkit::gaussian_vec(init, 6, 1.0);

    // Dense-grid oracle for max_t ||P(z) - P(z + t a)||.
    const Vec rep0 = nets::encoder_forward(enc, z);
    double grid_max = 0.0;
    const int G = 10000;
    for (int j = 0; j < G; ++j) {
        const double t = -spec.epsilon + 2.0 * spec.epsilon * double(j) / double(G - 1);
        const Vec rep = nets::encoder_forward(enc, z + t * a);
        grid_max = std::max(grid_max, (rep0 - rep).norm());
    }

    numkit::RngStream rng(9, 9);
    double prev = 0.0;
    for (int s : {4, 64, 1024}) {
        numkit::RngStream local = rng.substream(std::uint64_t(s));
        const double loss = adv_loss(gen, enc, spec, z, s, local);
        CHECK(loss <= grid_max + 1e-9);
        prev = loss;
    }
    // At s = 1024 random search essentially saturates the segment maximum.
    CHECK(prev >= 0.98 * grid_max);
}

TEST_CASE("cls_loss values") {
    IdentityGen gen(2);
    auto enc = testkit::identity_encoder(2);

    SUBCASE("uniform logits over two classes cost ln 2") {
        nets::LinearClassifier aux;
        aux.W = Mat::Zero(2, 2);
        aux.b = Vec::Zero(2);
        CHECK(cls_loss(gen, enc, aux, Vec::Ones(2), 0) ==
              doctest::Approx(std::log(2.0)).epsilon(1e-15));
    }

    SUBCASE("a huge margin drives the loss to zero") {
        nets::LinearClassifier aux;
        aux.W = Mat::Zero(2, 2);
        aux.b = (Vec(2) << 40.0, -40.0).finished();
        CHECK(cls_loss(gen, enc, aux, Vec::Ones(2), 0) <= 1e-10);
    }

    SUBCASE("matches a direct log-sum-exp oracle") {
        numkit::RngStream rng(3, 3);
        nets::LinearClassifier aux = nets::make_classifier(2, 4, rng);
        const Vec z = numkit::gaussian_vec(rng, 2, 1.5);
        const Vec logits = nets::classifier_forward(aux, z);
        long double sum = 0.0L;
        for (int c = 0; c < 4; ++c) sum += std::exp((long double)logits[c]);
        const double want = double(std::log(sum) - (long double)logits[1]);
        CHECK(std::abs(cls_loss(gen, enc, aux, z, 1) - want) <= 1e-10);
    }
}

TEST_CASE("contrastive hinge arithmetic") {
    auto enc = testkit::identity_encoder(2);
    const double delta = 50.0;

    std::vector<Vec> xs{(Vec(2) << 0, 0).finished(), (Vec(2) << 60, 0).finished()};

    // Same class at distance 60: per ordered pair 10, both orderings 20.
    CHECK(contrastive_loss(enc, xs, {1, 1}, delta) == doctest::Approx(20.0).epsilon(1e-12));
    // Different classes at distance 60: per ordered pair 40.
    CHECK(contrastive_loss(enc, xs, {0, 1}, delta) == doctest::Approx(80.0).epsilon(1e-12));

    // A tight same-class cluster costs nothing.
    std::vector<Vec> close{(Vec(2) << 0, 0).finished(), (Vec(2) << 3, 4).finished(),
                           (Vec(2) << -1, 1).finished()};
    CHECK(contrastive_loss(enc, close, {0, 0, 0}, delta) == 0.0);
}

TEST_CASE("total_loss composition") {
    Toy toy(6);
    numkit::RngStream init(7, 0);
    nets::LassiEncoder enc = nets::make_encoder(8, 12, 2, 4, init);
    nets::LinearClassifier aux = nets::make_classifier(4, 2, init);

    TrainConfig cfg;
    cfg.lambda1 = 0.3;
    cfg.lambda2 = 0.25;
    cfg.delta = 1.0;
    cfg.s = 4;

    SUBCASE("lambda1 = lambda2 = 0 reduces to the mean classification loss") {
        TrainConfig naive = cfg;
        naive.lambda1 = 0.0;
        naive.lambda2 = 0.0;
        numkit::RngStream rng(1, 1);
        double mean_cls = 0.0;
        for (std::size_t i = 0; i < toy.xs.size(); ++i) {
            mean_cls += cls_loss(toy.gen, enc, aux, toy.xs[i], toy.ys[i]);
        }
        mean_cls /= double(toy.xs.size());
        CHECK(total_loss(toy.gen, enc, aux, toy.spec, naive, toy.xs, toy.ys, rng) ==
              doctest::Approx(mean_cls).epsilon(1e-15));
    }

    SUBCASE("matches the hand-assembled sum of the three terms") {
        numkit::RngStream rng(2, 2);
        const double got = total_loss(toy.gen, enc, aux, toy.spec, cfg, toy.xs, toy.ys, rng);

        // Replay: the attack stream is consumed per item in batch order.
        numkit::RngStream replay(2, 2);
        const double b = double(toy.xs.size());
        double want = 0.0;
        for (std::size_t i = 0; i < toy.xs.size(); ++i) {
            want += cls_loss(toy.gen, enc, aux, toy.xs[i], toy.ys[i]) / b;
            want += cfg.lambda1 * adv_loss(toy.gen, enc, toy.spec, toy.xs[i], cfg.s, replay) / b;
        }
        want += cfg.lambda2 / (b * b) *
                contrastive_loss(enc, toy.xs, toy.ys, cfg.delta);
        CHECK(got == doctest::Approx(want).epsilon(1e-12));
    }

    SUBCASE("single-item batch has no contrastive contribution") {
        numkit::RngStream rng(3, 3);
        std::vector<Vec> one{toy.xs[0]};
        std::vector<int> y{toy.ys[0]};
        const double got = total_loss(toy.gen, enc, aux, toy.spec, cfg, one, y, rng);
        numkit::RngStream replay(3, 3);
        const double want = cls_loss(toy.gen, enc, aux, one[0], y[0]) +
                            cfg.lambda1 * adv_loss(toy.gen, enc, toy.spec, one[0], cfg.s, replay);
        CHECK(got == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("every loss gradient matches central finite differences") {
    Toy toy(4, 123);
    numkit::RngStream init(31, 0);
    nets::LassiEncoder enc = nets::make_encoder(8, 10, 2, 4, init);
    nets::LinearClassifier aux = nets::make_classifier(4, 2, init);
    nets::EncoderGrads eg = nets::make_grads(enc);
    nets::ClassifierGrads ag = nets::make_grads(aux);

    TrainConfig cfg;
    cfg.lambda1 = 0.4;
    cfg.lambda2 = 0.3;
    cfg.delta = 0.8;
    cfg.s = 3;

    // One recorded backward of the full objective.
    {
        nets::Tape tape;
        numkit::RngStream rng(11, 11);
        std::vector<nets::Tape::NodeId> parts;
        std::vector<double> weights;
        const double b = double(toy.xs.size());
        std::vector<nets::Tape::NodeId> reps;
        for (std::size_t i = 0; i < toy.xs.size(); ++i) {
            auto rep = nets::encoder_forward_node(tape, enc, &eg, toy.xs[i]);
            reps.push_back(rep);
            parts.push_back(cls_loss_node(tape, toy.gen, enc, &eg, aux, &ag, toy.xs[i],
                                          toy.ys[i], rep));
            weights.push_back(1.0 / b);
            parts.push_back(adv_loss_node(tape, toy.gen, enc, &eg, toy.spec, toy.xs[i], cfg.s,
                                          rng, rep));
            weights.push_back(cfg.lambda1 / b);
        }
        parts.push_back(contrastive_loss_node(tape, reps, toy.ys, cfg.delta));
        weights.push_back(cfg.lambda2 / (b * b));
        auto total = tape.weighted_sum(parts, weights);
        eg.zero();
        ag.zero();
        tape.backward(total);
    }

    auto loss_value = [&]() {
        numkit::RngStream rng(11, 11);
        return total_loss(toy.gen, enc, aux, toy.spec, cfg, toy.xs, toy.ys, rng);
    };

    numkit::RngStream pick(77, 1);
    double worst = 0.0;
    for (int probe = 0; probe < 40; ++probe) {
        const std::size_t layer = std::size_t(pick.next_unit() * double(enc.W.size()));
        Mat& W = enc.W[layer];
        const int r = int(pick.next_unit() * double(W.rows()));
        const int c = int(pick.next_unit() * double(W.cols()));
        const double fd = oracles::central_diff(loss_value, &W(r, c));
        worst = std::max(worst, oracles::rel_err(eg.dW[layer](r, c), fd, 1e-6));
    }
    for (int probe = 0; probe < 8; ++probe) {
        const int r = int(pick.next_unit() * 2.0);
        const int c = int(pick.next_unit() * 4.0);
        const double fd = oracles::central_diff(loss_value, &aux.W(r, c));
        worst = std::max(worst, oracles::rel_err(ag.dW(r, c), fd, 1e-6));
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("train_encoder: zero epochs returns the pristine initialization") {
    Toy toy(12);
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.seed = 5;
    EncoderArch arch;
    arch.hidden = 8;
    arch.hidden_layers = 2;
    arch.k = 4;
    const auto result = train_encoder(cfg, arch, toy.gen, toy.spec, toy.xs, toy.ys, 2);

    numkit::RngStream root(cfg.seed, 0);
    numkit::RngStream init = root.substream("enc_init");
    const nets::LassiEncoder fresh = nets::make_encoder(8, 8, 2, 4, init);
    for (std::size_t l = 0; l < fresh.W.size(); ++l) {
        CHECK((result.encoder.W[l] - fresh.W[l]).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK((result.encoder.norm.running_mean.cwiseAbs().maxCoeff()) == 0.0);
    CHECK(result.trace.empty());
}

TEST_CASE("train_encoder separates a linearly separable task and is reproducible") {
    Toy toy(160);
    TrainConfig cfg;
    cfg.lambda1 = 0.0;
    cfg.lambda2 = 0.0;
    cfg.epochs = 20;
    cfg.batch_size = 16;
    cfg.lr = 0.05;
    cfg.seed = 11;
    EncoderArch arch;
    arch.hidden = 16;
    arch.hidden_layers = 2;
    arch.k = 6;

    const auto run1 = train_encoder(cfg, arch, toy.gen, toy.spec, toy.xs, toy.ys, 2);
    CHECK(run1.trace.back().train_acc >= 0.95);
    CHECK_FALSE(run1.encoder.train_mode);

    const auto run2 = train_encoder(cfg, arch, toy.gen, toy.spec, toy.xs, toy.ys, 2);
    for (std::size_t l = 0; l < run1.encoder.W.size(); ++l) {
        CHECK((run1.encoder.W[l] - run2.encoder.W[l]).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK(run1.trace.back().total == run2.trace.back().total);
}

TEST_CASE("adversarial training shrinks the segment spread") {
    Toy toy(160);
    EncoderArch arch;
    arch.hidden = 16;
    arch.hidden_layers = 2;
    arch.k = 6;

    TrainConfig naive;
    naive.lambda1 = 0.0;
    naive.lambda2 = 0.0;
    naive.epochs = 25;
    naive.batch_size = 16;
    naive.lr = 0.05;
    naive.seed = 13;

    TrainConfig lassi = naive;
    lassi.lambda1 = 0.1;
    lassi.lambda2 = 0.1;
    lassi.delta = 5.0;
    lassi.s = 5;

    const auto run_naive = train_encoder(naive, arch, toy.gen, toy.spec, toy.xs, toy.ys, 2);
    const auto run_lassi = train_encoder(lassi, arch, toy.gen, toy.spec, toy.xs, toy.ys, 2);

    // Held-out grid spread of P along the segment.
    auto spread = [&](const nets::LassiEncoder& enc) {
        numkit::RngStream rng(500, 1);
        double total = 0.0;
        for (int i = 0; i < 40; ++i) {
            Vec x = numkit::gaussian_vec(rng, 8, 0.3);
            x[0] += (i % 2 == 1) ? 1.5 : -1.5;
            const Vec rep0 = nets::encoder_forward(enc, x);
            double worst = 0.0;
            for (int j = 0; j <= 40; ++j) {
                const double t = -1.0 + 2.0 * double(j) / 40.0;
                const Vec rep = nets::encoder_forward(enc, x + t * toy.spec.attributes.col(0));
                worst = std::max(worst, (rep0 - rep).norm());
            }
            total += worst;
        }
        return total / 40.0;
    };

    CHECK(spread(run_lassi.encoder) < spread(run_naive.encoder));
}

TEST_CASE("train_classifier basics and noise requirements") {
    Toy toy(120);
    numkit::RngStream init(3, 0);
    nets::LassiEncoder enc = nets::make_encoder(8, 16, 2, 6, init);
    nets::calibrate_norm(enc, toy.xs);

    std::vector<double> trace;
    const auto cls =
        train_classifier(toy.gen, enc, toy.xs, toy.ys, 2, 0.0, 15, 0.1, 16, 21, &trace);
    CHECK(trace.size() == 15);
    int correct = 0;
    for (std::size_t i = 0; i < toy.xs.size(); ++i) {
        const Vec rep = nets::encoder_forward(enc, toy.xs[i]);
        correct += nets::argmax_class(nets::classifier_forward(cls, rep)) == toy.ys[i] ? 1 : 0;
    }
    CHECK(double(correct) / double(toy.xs.size()) >= 0.9);

    nets::LassiEncoder training_mode = enc;
    training_mode.train_mode = true;
    CHECK_THROWS_AS(
        train_classifier(toy.gen, training_mode, toy.xs, toy.ys, 2, 1.0, 1, 0.1, 16, 21, nullptr),
        std::logic_error);
}

TEST_CASE("noise-trained classifier wins the smoothed-agreement comparison") {
    Toy toy(200, 7);
    numkit::RngStream init(17, 0);
    nets::LassiEncoder enc = nets::make_encoder(8, 16, 2, 6, init);
    nets::calibrate_norm(enc, toy.xs);

    const double sigma = 2.0;
    const auto noisy = train_classifier(toy.gen, enc, toy.xs, toy.ys, 2, sigma, 30, 0.1, 16, 5);
    const auto clean = train_classifier(toy.gen, enc, toy.xs, toy.ys, 2, 0.0, 30, 0.1, 16, 5);

    // Agreement: fraction of points whose 1000-vote majority under noise
    // matches the clean prediction.
    auto agreement = [&](const nets::LinearClassifier& cls) {
        numkit::RngStream rng(400, 2);
        int agree = 0;
        for (std::size_t i = 0; i < 60; ++i) {
            const Vec rep = nets::encoder_forward(enc, toy.xs[i]);
            const int clean_class = nets::argmax_class(nets::classifier_forward(cls, rep));
            int votes = 0;
            for (int v = 0; v < 1000; ++v) {
                const Vec noisy_rep = rep + numkit::gaussian_vec(rng, 6, sigma);
                votes += nets::argmax_class(nets::classifier_forward(cls, noisy_rep)) ==
                                 clean_class
                             ? 1
                             : 0;
            }
            agree += votes > 500 ? 1 : 0;
        }
        return double(agree) / 60.0;
    };

    CHECK(agreement(noisy) >= agreement(clean));
}

TEST_CASE("augment_batch counting and segment membership") {
    Toy toy(10);
    numkit::RngStream rng(8, 8);

    auto [x0, y0] = augment_batch(toy.xs, toy.ys, toy.gen, toy.spec, 0, rng);
    CHECK(x0.size() == toy.xs.size());

    auto [x5, y5] = augment_batch(toy.xs, toy.ys, toy.gen, toy.spec, 5, rng);
    CHECK(x5.size() == toy.xs.size() * 6);
    CHECK(y5.size() == x5.size());

    // Every augmented point re-encodes onto the segment.
    const Vec a = toy.spec.attributes.col(0);
    for (std::size_t i = toy.xs.size(); i < x5.size(); ++i) {
        const std::size_t orig = (i - toy.xs.size()) / 5;
        const Vec d = toy.gen.encode(x5[i]) - toy.gen.encode(toy.xs[orig]);
        const double t = d.dot(a) / a.squaredNorm();
        CHECK(std::abs(t) <= toy.spec.epsilon + 1e-6);
        CHECK((d - t * a).cwiseAbs().maxCoeff() <= 1e-6);
    }
}
