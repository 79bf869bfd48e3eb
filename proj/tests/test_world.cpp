#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "taxocap/rng.hpp"
#include "taxocap/world.hpp"

using namespace taxocap;
using model::Mat;
using world::WorldModel;

namespace {

Mat random_matrix(Rng& rng, int rows, int cols) {
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
    }
    return m;
}

}  // namespace

TEST_CASE("sample_world: noiseless identity world reproduces class means") {
    WorldModel w;
    w.a = Mat::Identity(3, 3);
    w.b = Mat::Identity(3, 3);
    w.g = Mat::Zero(3, 2);
    w.d = Mat::Zero(3, 2);
    w.sigma_x = 0.0;
    w.sigma_c = 0.0;
    w.n_classes = 4;
    w.class_means = Mat::Random(4, 3);
    w.latent_jitter = 0.0;
    const auto ds = world::sample_world(w, 100, 5);
    for (int i = 0; i < 100; ++i) {
        const int y = ds.label_ids[static_cast<std::size_t>(i)];
        CHECK((ds.x.row(i) - w.class_means.row(y)).norm() == 0.0);
        CHECK((ds.c.row(i) - w.class_means.row(y)).norm() == 0.0);
    }
}

TEST_CASE("sample_world: same seed gives identical datasets") {
    const auto w = world::make_world({}, world::CaptionScenario::noisy, 3);
    const auto a = world::sample_world(w, 64, 123);
    const auto b = world::sample_world(w, 64, 123);
    CHECK((a.x - b.x).norm() == 0.0);
    CHECK((a.c - b.c).norm() == 0.0);
    CHECK(a.label_ids == b.label_ids);

    const auto c = world::sample_world(w, 64, 124);
    CHECK((a.x - c.x).norm() > 0.0);
}

TEST_CASE("cross_covariance: C = X reduces to the covariance of X") {
    Rng rng(9);
    const Mat x = random_matrix(rng, 500, 4);
    const Mat sigma = world::cross_covariance(x, x);
    // Direct covariance computation as the oracle.
    Eigen::RowVectorXd mean = x.colwise().mean();
    Mat expected = Mat::Zero(4, 4);
    for (int i = 0; i < x.rows(); ++i) {
        const Eigen::VectorXd d = (x.row(i) - mean).transpose();
        expected += (d * d.transpose());
    }
    expected /= (x.rows() - 1);
    CHECK((sigma - expected).norm() < 1e-10);
    CHECK_THROWS_AS(world::cross_covariance(x.topRows(1), x.topRows(1)),
                    std::invalid_argument);
}

TEST_CASE("cross_covariance of independent views is near zero") {
    Rng rng(10);
    const Mat x = random_matrix(rng, 100000, 3);
    const Mat c = random_matrix(rng, 100000, 3);
    const Mat sigma = world::cross_covariance(x, c);
    CHECK(sigma.cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("empirical cross-covariance approaches A Cov(z) B^T + G D^T") {
    // Unit-variance latents: single zero class mean, jitter 1.
    Rng rng(20);
    WorldModel w;
    w.a = random_matrix(rng, 16, 4) * 0.25;
    w.b = random_matrix(rng, 16, 4) * 0.25;
    w.g = random_matrix(rng, 16, 4) * 0.25;
    w.d = random_matrix(rng, 16, 4) * 0.25;
    w.sigma_x = 0.1;
    w.sigma_c = 0.1;
    w.n_classes = 1;
    w.class_means = Mat::Zero(1, 4);
    w.latent_jitter = 1.0;

    const Mat analytic = world::analytic_cross_covariance(w);
    const auto small = world::sample_world(w, 200000, 77);
    const double err_small = (world::cross_covariance(small.x, small.c) - analytic).norm();
    CHECK(err_small < 0.05);

    const auto big = world::sample_world(w, 800000, 78);
    const double err_big = (world::cross_covariance(big.x, big.c) - analytic).norm();
    CHECK(err_big < err_small);
}

TEST_CASE("generated data with D = 0 recovers the trait-shared component") {
    Rng rng(30);
    WorldModel w;
    w.a = random_matrix(rng, 8, 3) * 0.4;
    w.b = random_matrix(rng, 8, 3) * 0.4;
    w.g = random_matrix(rng, 8, 3) * 0.4;
    w.d = Mat::Zero(8, 3);
    w.sigma_x = 0.05;
    w.sigma_c = 0.05;
    w.n_classes = 1;
    w.class_means = Mat::Zero(1, 3);
    w.latent_jitter = 1.0;
    const auto ds = world::sample_world(w, 150000, 5);
    const Mat trait_component = w.a * w.b.transpose();  // Cov(z) = I
    CHECK((world::cross_covariance(ds.x, ds.c) - trait_component).norm() < 0.05);
}

TEST_CASE("make_world scenarios share everything except the caption nuisance") {
    const world::WorldSpec spec;
    const auto faithful = world::make_world(spec, world::CaptionScenario::faithful, 42);
    const auto noisy = world::make_world(spec, world::CaptionScenario::noisy, 42);
    const auto tax_only = world::make_world(spec, world::CaptionScenario::taxonomy_only, 42);
    CHECK((faithful.a - noisy.a).norm() == 0.0);
    CHECK((faithful.g - noisy.g).norm() == 0.0);
    CHECK((faithful.class_means - noisy.class_means).norm() == 0.0);
    CHECK(faithful.d.norm() == 0.0);
    CHECK(tax_only.d.norm() == 0.0);
    // Noisy scenario: ||G D^T||_F matches ||A B^T||_F.
    const double trait = (noisy.a * noisy.b.transpose()).norm();
    const double nuisance = (noisy.g * noisy.d.transpose()).norm();
    CHECK(nuisance == doctest::Approx(trait).epsilon(1e-9));
    // G columns were orthogonalized against col(A).
    CHECK((faithful.a.transpose() * faithful.g).norm() < 1e-9);
}
