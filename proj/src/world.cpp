#include "taxocap/world.hpp"

#include <stdexcept>

#include "taxocap/rng.hpp"

namespace taxocap::world {

void WorldModel::validate() const {
    if (a.rows() < 1 || a.cols() < 1) throw std::invalid_argument("A must be non-empty");
    if (b.cols() != a.cols()) throw std::invalid_argument("A and B disagree on d_z");
    if (g.rows() != a.rows()) throw std::invalid_argument("A and G disagree on d_x");
    if (d.rows() != b.rows()) throw std::invalid_argument("B and D disagree on d_c");
    if (d.cols() != g.cols()) throw std::invalid_argument("G and D disagree on d_eps");
    if (sigma_x < 0.0 || sigma_c < 0.0) throw std::invalid_argument("sigma must be >= 0");
    if (n_classes < 1) throw std::invalid_argument("need at least one class");
    if (class_means.rows() != n_classes || class_means.cols() != a.cols()) {
        throw std::invalid_argument("class_means must be n_classes x d_z");
    }
    if (latent_jitter < 0.0) throw std::invalid_argument("jitter must be >= 0");
}

SyntheticDataset sample_world(const WorldModel& world, int n, std::uint64_t seed) {
    world.validate();
    if (n < 1) throw std::invalid_argument("need at least one sample");
    Rng rng(seed);

    SyntheticDataset ds;
    ds.x.resize(n, world.d_x());
    ds.c.resize(n, world.d_c());
    ds.z.resize(n, world.d_z());
    ds.e.resize(n, world.d_eps());
    ds.label_ids.resize(n);

    model::Vec z(world.d_z()), e(world.d_eps());
    for (int i = 0; i < n; ++i) {
        const int label = static_cast<int>(rng.uniform_index(world.n_classes));
        ds.label_ids[i] = label;
        for (int k = 0; k < world.d_z(); ++k) {
            z(k) = world.class_means(label, k) + world.latent_jitter * rng.normal();
        }
        for (int k = 0; k < world.d_eps(); ++k) e(k) = rng.normal();
        ds.z.row(i) = z.transpose();
        ds.e.row(i) = e.transpose();
        ds.x.row(i) = (world.a * z + world.g * e).transpose();
        ds.c.row(i) = (world.b * z + world.d * e).transpose();
        for (int k = 0; k < world.d_x(); ++k) ds.x(i, k) += world.sigma_x * rng.normal();
        for (int k = 0; k < world.d_c(); ++k) ds.c(i, k) += world.sigma_c * rng.normal();
    }
    return ds;
}

Mat cross_covariance(const Mat& x, const Mat& c) {
    if (x.rows() != c.rows()) throw std::invalid_argument("row counts must match");
    if (x.rows() < 2) throw std::invalid_argument("need at least two rows");
    const auto n = x.rows();
    const Eigen::RowVectorXd mean_x = x.colwise().mean();
    const Eigen::RowVectorXd mean_c = c.colwise().mean();
    const Mat xc = x.rowwise() - mean_x;
    const Mat cc = c.rowwise() - mean_c;
    return (xc.transpose() * cc) / static_cast<double>(n - 1);
}

Mat analytic_cross_covariance(const WorldModel& world) {
    world.validate();
    const double k = static_cast<double>(world.n_classes);
    const Eigen::RowVectorXd mean = world.class_means.colwise().mean();
    const Mat centered = world.class_means.rowwise() - mean;
    Mat cov_z = (centered.transpose() * centered) / k;
    cov_z += world.latent_jitter * world.latent_jitter *
             Mat::Identity(world.d_z(), world.d_z());
    return world.a * cov_z * world.b.transpose() + world.g * world.d.transpose();
}

const char* scenario_name(CaptionScenario s) {
    switch (s) {
        case CaptionScenario::faithful: return "faithful";
        case CaptionScenario::taxonomy_only: return "taxonomy_only";
        case CaptionScenario::noisy: return "noisy";
    }
    return "?";
}

namespace {

Mat random_gaussian(Rng& rng, int rows, int cols) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal();
    }
    return m;
}

Mat orthonormal_columns(const Mat& m) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
    return qr.householderQ() * Eigen::MatrixXd::Identity(m.rows(), m.cols());
}

}  // namespace

WorldModel make_world(const WorldSpec& spec, CaptionScenario scenario, std::uint64_t seed) {
    // The same seed yields the same A, B, G, class means for every scenario;
    // only D differs, so scenario comparisons see identical images and labels.
    Rng rng(seed);
    WorldModel world;
    world.a = orthonormal_columns(random_gaussian(rng, spec.d_x, spec.d_z));
    world.b = orthonormal_columns(random_gaussian(rng, spec.d_c, spec.d_z));
    Mat g_raw = random_gaussian(rng, spec.d_x, spec.d_eps);
    // Remove the trait component so nuisance lives in its own subspace.
    g_raw -= world.a * (world.a.transpose() * g_raw);
    world.g = orthonormal_columns(g_raw) * spec.nuisance_scale;
    // Hallucination-style caption noise: nuisance enters through the trait
    // coordinates (col(B)), so the caption reports corrupted trait values and
    // no caption-side projection can separate them out again.
    const Mat mixing = orthonormal_columns(random_gaussian(rng, spec.d_z, spec.d_eps));
    const Mat d_raw = world.b * mixing;
    world.sigma_x = spec.sigma_x;
    world.sigma_c = spec.sigma_c;
    world.n_classes = spec.n_classes;
    world.class_means =
        random_gaussian(rng, spec.n_classes, spec.d_z) * spec.class_mean_scale;
    world.latent_jitter = spec.latent_jitter;

    switch (scenario) {
        case CaptionScenario::faithful:
        case CaptionScenario::taxonomy_only:
            world.d = Mat::Zero(spec.d_c, spec.d_eps);
            break;
        case CaptionScenario::noisy: {
            const double trait_energy = (world.a * world.b.transpose()).norm();
            const double nuisance_energy = (world.g * d_raw.transpose()).norm();
            world.d = d_raw * (trait_energy / nuisance_energy);
            break;
        }
    }
    return world;
}

}  // namespace taxocap::world
