#pragma once

#include <cstdint>
#include <vector>

#include "taxocap/model.hpp"

namespace taxocap::world {

using model::Mat;

// Linear-Gaussian generative world: a class index y picks a latent trait
// vector z (class mean plus jitter), an independent nuisance vector e is
// drawn, and the two views are
//   x = A z + G e + eta_x,   c = B z + D e + eta_c
// with independent zero-mean Gaussian eta of the given scales.
struct WorldModel {
    Mat a;             // d_x x d_z, trait loadings into image space
    Mat b;             // d_c x d_z, trait loadings into caption space
    Mat g;             // d_x x d_eps, nuisance loadings into image space
    Mat d;             // d_c x d_eps, nuisance loadings into caption space
    double sigma_x = 0.0;
    double sigma_c = 0.0;
    int n_classes = 1;
    Mat class_means;   // n_classes x d_z
    double latent_jitter = 0.3;

    int d_x() const { return static_cast<int>(a.rows()); }
    int d_c() const { return static_cast<int>(b.rows()); }
    int d_z() const { return static_cast<int>(a.cols()); }
    int d_eps() const { return static_cast<int>(g.cols()); }

    void validate() const;
};

struct SyntheticDataset {
    Mat x;
    Mat c;
    std::vector<int> label_ids;
    Mat z;  // latents retained for diagnostics
    Mat e;
};

// Fully determined by the seed. Per-sample draw order: label, z jitter,
// nuisance, image noise, caption noise.
SyntheticDataset sample_world(const WorldModel& world, int n, std::uint64_t seed);

// (1/(n-1)) sum (x_i - mean_x)(c_i - mean_c)^T.
Mat cross_covariance(const Mat& x, const Mat& c);

// A Cov(z) B^T + G D^T with Cov(z) = Cov(class means under uniform labels)
// + jitter^2 I. The noise terms contribute nothing across views.
Mat analytic_cross_covariance(const WorldModel& world);

enum class CaptionScenario { faithful, taxonomy_only, noisy };

const char* scenario_name(CaptionScenario s);

struct WorldSpec {
    int d_z = 4;
    int d_eps = 4;
    int d_x = 32;
    int d_c = 32;
    int n_classes = 20;
    double sigma_x = 0.1;
    double sigma_c = 0.1;
    double latent_jitter = 0.3;
    double nuisance_scale = 1.5;   // column scale of G relative to A
    double class_mean_scale = 1.0;
};

// Default toy world. A, B, G get random orthonormal columns (G's are
// orthogonalized against A's so trait and nuisance subspaces are separable);
// D is zero for the faithful scenario and, for the noisy one, a random
// loading rescaled so that ||G D^T||_F equals ||A B^T||_F.
WorldModel make_world(const WorldSpec& spec, CaptionScenario scenario, std::uint64_t seed);

}  // namespace taxocap::world
