#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fairsmooth/flow.hpp"
#include "oracles.hpp"
#include "fairsmooth/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

using namespace fairsmooth;
using namespace fairsmooth::flow;

namespace {

// Flow with active coupling nets (the default construction is the identity).
FlowModel perturbed_flow(int dim, int layers, int hidden, std::uint64_t seed) {
    numkit::RngStream rng(seed, 0);
    FlowModel model = make_flow(dim, layers, hidden, rng);
    for (CouplingLayer& layer : model.layers) {
        for (CouplingNet* net : {&layer.scale_net, &layer.shift_net}) {
            for (int r = 0; r < net->W2.rows(); ++r) {
                for (int c = 0; c < net->W2.cols(); ++c) net->W2(r, c) = rng.next_gaussian(0.4);
            }
            net->b2 = numkit::gaussian_vec(rng, int(net->b2.size()), 0.2);
        }
    }
    return model;
}

}  // namespace

TEST_CASE("identity-initialized coupling layers give the identity map") {
    numkit::RngStream rng(11, 0);
    FlowModel model = make_flow(6, 4, 8, rng);
    const Vec x = numkit::gaussian_vec(rng, 6, 2.0);
    CHECK((model.encode(x) - x).cwiseAbs().maxCoeff() == 0.0);
    CHECK((model.decode(x) - x).cwiseAbs().maxCoeff() == 0.0);
    CHECK(log_det_jacobian_encode(model, x) == 0.0);
}

TEST_CASE("decode inverts encode on active flows") {
    FlowModel model = perturbed_flow(10, 6, 12, 5);
    numkit::RngStream rng(99, 2);
    for (int i = 0; i < 200; ++i) {
        const Vec x = numkit::gaussian_vec(rng, 10, 1.5);
        const Vec back = model.decode(model.encode(x));
        CHECK((back - x).cwiseAbs().maxCoeff() <= 1e-6);
    }
    CHECK_THROWS_AS(model.encode(Vec::Constant(10, std::nan(""))), std::domain_error);
    CHECK_THROWS_AS(model.encode(Vec::Ones(7)), std::domain_error);
}

TEST_CASE("log_det matches a finite-difference Jacobian determinant") {
    FlowModel model = perturbed_flow(5, 4, 6, 17);
    numkit::RngStream rng(3, 1);
    for (int trial = 0; trial < 4; ++trial) {
        const Vec x = numkit::gaussian_vec(rng, 5, 1.0);
        const double h = 1e-6;
        Mat jac(5, 5);
        for (int c = 0; c < 5; ++c) {
            Vec xp = x, xm = x;
            xp[c] += h;
            xm[c] -= h;
            jac.col(c) = (model.encode(xp) - model.encode(xm)) / (2.0 * h);
        }
        const double log_det_fd = std::log(std::abs(jac.determinant()));
        CHECK(std::abs(log_det_jacobian_encode(model, x) - log_det_fd) <= 1e-5);

        // encode/decode log-dets cancel.
        const Vec z = model.encode(x);
        Mat jac_dec(5, 5);
        for (int c = 0; c < 5; ++c) {
            Vec zp = z, zm = z;
            zp[c] += h;
            zm[c] -= h;
            jac_dec.col(c) = (model.decode(zp) - model.decode(zm)) / (2.0 * h);
        }
        CHECK(std::abs(log_det_jacobian_encode(model, x) +
                       std::log(std::abs(jac_dec.determinant()))) <= 1e-5);
    }
}

TEST_CASE("log-likelihood gradient matches central finite differences") {
    FlowModel model = perturbed_flow(4, 3, 5, 23);
    numkit::RngStream rng(7, 7);
    const Vec x = numkit::gaussian_vec(rng, 4, 1.0);

    FlowGrads grads = make_grads(model);
    {
        nets::Tape tape;
        auto ll = log_likelihood_node(tape, model, &grads, x);
        CHECK(tape.value(ll) == doctest::Approx(log_likelihood(model, x)).epsilon(1e-12));
        grads.zero();
        tape.backward(ll);
    }

    auto value = [&]() { return log_likelihood(model, x); };
    double worst = 0.0;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        CouplingLayer& layer = model.layers[l];
        CouplingLayerGrads& lg = grads.layers[l];
        for (auto [net, ng] : {std::pair{&layer.scale_net, &lg.scale},
                               std::pair{&layer.shift_net, &lg.shift}}) {
            worst = std::max(worst, oracles::rel_err(ng->dW1(0, 0),
                                                     oracles::central_diff(value, &net->W1(0, 0))));
            worst = std::max(worst, oracles::rel_err(ng->dW2(0, 0),
                                                     oracles::central_diff(value, &net->W2(0, 0))));
            worst = std::max(worst,
                             oracles::rel_err(ng->db2[0], oracles::central_diff(value, &net->b2[0])));
            worst = std::max(worst,
                             oracles::rel_err(ng->db1[1], oracles::central_diff(value, &net->b1[1])));
        }
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("mle training: zero steps is a no-op, real steps gain >= 1 nat") {
    // Data from an invertible linear map with a variance mismatch the flow
    // has to soak up.
    Mat A(2, 2);
    A << 3.0, 0.8, -0.4, 2.2;
    numkit::RngStream rng(2024, 5);
    std::vector<Vec> train_data, held_out;
    for (int i = 0; i < 192; ++i) train_data.push_back(A * numkit::gaussian_vec(rng, 2, 1.0));
    for (int i = 0; i < 128; ++i) held_out.push_back(A * numkit::gaussian_vec(rng, 2, 1.0));

    numkit::RngStream init(4, 0);
    const FlowModel model0 = make_flow(2, 2, 8, init);

    const FlowModel unchanged = mle_train_flow(model0, train_data, 0, 0.05);
    const Vec probe = numkit::gaussian_vec(rng, 2, 1.0);
    CHECK((unchanged.encode(probe) - model0.encode(probe)).cwiseAbs().maxCoeff() == 0.0);

    auto avg_ll = [&](const FlowModel& m, const std::vector<Vec>& data) {
        double sum = 0.0;
        for (const Vec& x : data) sum += log_likelihood(m, x);
        return sum / double(data.size());
    };

    FlowTrainTrace trace;
    const FlowModel trained = mle_train_flow(model0, train_data, 400, 0.05, &trace);
    const double before = avg_ll(model0, held_out);
    const double after = avg_ll(trained, held_out);
    CHECK(after - before >= 1.0);
    CHECK(trace.avg_log_likelihood.back() >= trace.avg_log_likelihood.front());

    // Bijectivity survives training.
    for (int i = 0; i < 50; ++i) {
        const Vec x = A * numkit::gaussian_vec(rng, 2, 1.0);
        CHECK((trained.decode(trained.encode(x)) - x).cwiseAbs().maxCoeff() <= 1e-6);
    }

    CHECK_THROWS_AS(mle_train_flow(model0, {}, 5, 0.1), std::invalid_argument);
}

TEST_CASE("divergent training reports the failing step") {
    Mat A(2, 2);
    A << 3.0, 0.0, 0.0, 3.0;
    numkit::RngStream rng(8, 8);
    std::vector<Vec> data;
    for (int i = 0; i < 32; ++i) data.push_back(A * numkit::gaussian_vec(rng, 2, 1.0));
    numkit::RngStream init(4, 0);
    FlowModel model = make_flow(2, 2, 8, init);
    CHECK_THROWS_AS(mle_train_flow(model, data, 200, 1e7), TrainError);
}

TEST_CASE("attribute_vector arithmetic") {
    numkit::RngStream rng(1, 1);
    FlowModel identity = make_flow(2, 2, 4, rng);

    std::vector<Vec> pos{(Vec(2) << 1, 0).finished(), (Vec(2) << 3, 0).finished()};
    std::vector<Vec> neg{(Vec(2) << 0, 0).finished(), (Vec(2) << 0, 2).finished()};
    const Vec a = attribute_vector(identity, pos, neg);
    CHECK(a[0] == doctest::Approx(2.0));
    CHECK(a[1] == doctest::Approx(-1.0));

    // Same multiset on both sides cancels exactly.
    CHECK(attribute_vector(identity, pos, pos).cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(attribute_vector(identity, {}, neg), std::invalid_argument);
}

TEST_CASE("attribute_vector scales with the inputs under an affine flow") {
    // Coupling layers with zero first-layer weights have constant nets, so
    // the flow reduces to a translation (an affine map).
    numkit::RngStream rng(21, 3);
    FlowModel affine = make_flow(4, 3, 6, rng);
    for (CouplingLayer& layer : affine.layers) {
        layer.scale_net.W1.setZero();
        layer.shift_net.W1.setZero();
        layer.shift_net.b2 = numkit::gaussian_vec(rng, int(layer.shift_net.b2.size()), 1.0);
    }

    std::vector<Vec> pos, neg, pos3, neg3;
    for (int i = 0; i < 5; ++i) {
        pos.push_back(numkit::gaussian_vec(rng, 4, 1.0));
        neg.push_back(numkit::gaussian_vec(rng, 4, 1.0));
        pos3.push_back(3.0 * pos.back());
        neg3.push_back(3.0 * neg.back());
    }
    const Vec a1 = attribute_vector(affine, pos, neg);
    const Vec a3 = attribute_vector(affine, pos3, neg3);
    CHECK((a3 - 3.0 * a1).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("similarity sampling: segment case") {
    SimilaritySpec spec;
    spec.attributes = Mat(3, 1);
    spec.attributes << 0.6, -0.8, 0.0;  // unit norm
    spec.epsilon = 1.5;

    numkit::RngStream rng(77, 0);
    const Vec z = numkit::gaussian_vec(rng, 3, 1.0);

    SUBCASE("epsilon zero returns the point itself") {
        SimilaritySpec degenerate = spec;
        degenerate.epsilon = 0.0;
        CHECK((similarity_sample(degenerate, z, rng) - z).cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("samples stay collinear with the attribute within epsilon") {
        const Vec a = spec.attributes.col(0);
        for (int i = 0; i < 500; ++i) {
            const Vec s = similarity_sample(spec, z, rng);
            const Vec d = s - z;
            const double t = d.dot(a) / a.squaredNorm();
            CHECK(std::abs(t) <= spec.epsilon + 1e-12);
            CHECK((d - t * a).cwiseAbs().maxCoeff() <= 1e-12);
        }
    }
}

TEST_CASE("similarity sampling: coefficient ball matches the radial law") {
    const int d = 3;
    SimilaritySpec spec;
    spec.attributes = Mat::Identity(4, d) * 2.0;
    spec.epsilon = 1.25;

    numkit::RngStream rng(123, 9);
    const int n = 100000;
    std::vector<double> radii;
    radii.reserve(n);
    double max_norm = 0.0;
    for (int i = 0; i < n; ++i) {
        const Vec t = sample_coefficients(spec, rng);
        max_norm = std::max(max_norm, t.norm());
        radii.push_back(t.norm() / spec.epsilon);
    }
    CHECK(max_norm <= spec.epsilon + 1e-12);

    // Kolmogorov-Smirnov distance against F(r) = r^d.
    std::sort(radii.begin(), radii.end());
    double ks = 0.0;
    for (int i = 0; i < n; ++i) {
        const double f = std::pow(radii[std::size_t(i)], d);
        ks = std::max(ks, std::abs(f - double(i + 1) / n));
        ks = std::max(ks, std::abs(f - double(i) / n));
    }
    CHECK(ks <= 0.01);
}

TEST_CASE("similarity_endpoint contract and shift identity") {
    SimilaritySpec spec;
    spec.attributes = Mat(2, 1);
    spec.attributes << 1.0, 2.0;
    spec.epsilon = 0.75;
    const Vec z = (Vec(2) << 0.3, -0.4).finished();

    Vec t0(1);
    t0 << 0.0;
    CHECK((similarity_endpoint(spec, z, t0) - z).cwiseAbs().maxCoeff() == 0.0);

    Vec t_max(1);
    t_max << spec.epsilon;
    CHECK((similarity_endpoint(spec, z, t_max) - (z + spec.epsilon * spec.attributes.col(0)))
              .cwiseAbs()
              .maxCoeff() <= 1e-15);

    Vec t_bad(1);
    t_bad << spec.epsilon * 1.01;
    CHECK_THROWS_AS(similarity_endpoint(spec, z, t_bad), std::domain_error);

    // Shift identity: endpoint(z + t' a, t) == endpoint(z, t + t').
    Vec tp(1), t(1), sum(1);
    tp << 0.3;
    t << 0.2;
    sum << 0.5;
    const Vec shifted_base = z + spec.attributes * tp;
    const Vec lhs = similarity_endpoint(spec, shifted_base, t);
    const Vec rhs = similarity_endpoint(spec, z, sum);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12);

    // A fifteen-value endpoint grid covers [-eps, eps] with both ends.
    std::vector<Vec> grid;
    for (int j = 0; j < 15; ++j) {
        Vec tj(1);
        tj << -spec.epsilon + 2.0 * spec.epsilon * double(j) / 14.0;
        grid.push_back(similarity_endpoint(spec, z, tj));
    }
    CHECK((grid.front() - (z - spec.epsilon * spec.attributes.col(0))).cwiseAbs().maxCoeff() <=
          1e-12);
    CHECK((grid.back() - (z + spec.epsilon * spec.attributes.col(0))).cwiseAbs().maxCoeff() <=
          1e-12);
}

TEST_CASE("ground-truth generator round-trips exactly") {
    const GroundTruthGenerator gen = make_ground_truth_generator(12, 42);
    numkit::RngStream rng(0, 0);
    for (int i = 0; i < 100; ++i) {
        const Vec z = numkit::gaussian_vec(rng, 12, 1.0);
        CHECK((gen.encode(gen.decode(z)) - z).cwiseAbs().maxCoeff() <= 1e-9);
        const Vec x = numkit::gaussian_vec(rng, 12, 2.0);
        CHECK((gen.decode(gen.encode(x)) - x).cwiseAbs().maxCoeff() <= 1e-9);
    }
    // Rotations are orthogonal, so the map is seeded-deterministic.
    const GroundTruthGenerator again = make_ground_truth_generator(12, 42);
    const Vec probe = numkit::gaussian_vec(rng, 12, 1.0);
    CHECK((gen.decode(probe) - again.decode(probe)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((gen.rot_in * gen.rot_in.transpose() - Mat::Identity(12, 12)).cwiseAbs().maxCoeff() <=
          1e-12);
}

TEST_CASE("similarity spec validation") {
    SimilaritySpec spec;
    spec.attributes = Mat::Zero(3, 1);
    spec.epsilon = 1.0;
    CHECK_THROWS_AS(spec.validate(), std::domain_error);
    spec.attributes(0, 0) = 1.0;
    CHECK_NOTHROW(spec.validate());
    spec.epsilon = -0.1;
    CHECK_THROWS_AS(spec.validate(), std::domain_error);
}

TEST_CASE("flow checkpoints round-trip bit-exactly") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "fairsmooth_flow_ckpt";
    fs::create_directories(dir);
    const std::string p1 = (dir / "m.flow").string();
    const std::string p2 = (dir / "m2.flow").string();

    FlowModel model = perturbed_flow(6, 4, 8, 31);
    fairsmooth::io::save_flow(p1, model);
    const FlowModel back = fairsmooth::io::load_flow(p1);
    fairsmooth::io::save_flow(p2, back);

    fairsmooth::io::ByteReader r1(p1), r2(p2);
    CHECK(r1.data == r2.data);

    numkit::RngStream rng(3, 3);
    const Vec x = numkit::gaussian_vec(rng, 6, 1.0);
    CHECK((back.encode(x) - model.encode(x)).cwiseAbs().maxCoeff() == 0.0);

    // Corrupted magic and bumped version are rejected with located errors.
    {
        std::fstream f(p1, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.put('Z');
    }
    try {
        fairsmooth::io::load_flow(p1);
        FAIL("expected ParseError");
    } catch (const fairsmooth::ParseError& e) {
        CHECK(e.offset == 0);
    }
    {
        std::fstream f(p2, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(15);  // version field sits after the magic
        f.put(char(7));
    }
    CHECK_THROWS_AS(fairsmooth::io::load_flow(p2), fairsmooth::io::UnsupportedVersion);
    fs::remove_all(dir);
}
