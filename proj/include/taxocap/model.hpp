#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace taxocap::model {

// Row-major throughout: rows are samples, the embedding binary format is
// row-major, and numpy interop keeps the same layout.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

// Dual-projector model. A single shared linear encoder feeds two visual
// projectors; the text side has a learnable label table for the taxonomy view
// and a projector for the caption view. Evaluation embeddings always come out
// of the taxonomy pathway.
struct ModelParams {
    Mat encoder;  // d_h x d_x, shared by both visual pathways
    Mat p_tax;    // d_e x d_h, taxonomy visual projector
    Mat p_cap;    // d_e x d_h, caption visual projector
    Mat q_cap;    // d_e x d_c, caption text projector
    Mat labels;   // n_classes x d_e, label embedding table

    // Composite taxonomy map from image space, d_e x d_x. Rows live in image
    // space, which is what trait_energy_ratio expects.
    Mat taxonomy_map() const { return p_tax * encoder; }
    Mat caption_map() const { return p_cap * encoder; }
};

struct Gradients {
    Mat encoder;
    Mat p_tax;
    Mat p_cap;
    Mat q_cap;
    Mat labels;
};

struct LossConfig {
    double tau = 0.07;
    bool symmetric = true;
    double w_tax = 1.0;
    double w_cap = 1.0;
    bool allow_label_collisions = false;
};

struct Batch {
    Mat x;                        // n x d_x image embeddings
    Mat c;                        // n x d_c caption embeddings
    std::vector<int> label_ids;   // n class indices into ModelParams::labels
};

// Rows scaled to unit Euclidean norm. Throws on an all-zero row.
Mat unit_normalize(const Mat& m);

// InfoNCE over unit-normalized U, V with positives on the diagonal of
// S = U V^T / tau. One-directional loss is mean_i[-S_ii + logsumexp_j S_ij];
// the symmetric variant averages with the transpose direction. Logsumexp is
// stabilized by subtracting the row max.
double infonce(const Mat& u, const Mat& v, double tau, bool symmetric);

double dual_loss(const Batch& batch, const ModelParams& params, const LossConfig& config);

// Exact analytic gradients of dual_loss for every parameter matrix.
Gradients gradients(const Batch& batch, const ModelParams& params, const LossConfig& config);

struct OptimizerConfig {
    double learning_rate = 1e-3;  // desk-scale default; full-scale runs used 1e-4
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.2;  // decoupled
};

struct AdamState {
    Gradients m;
    Gradients v;
    std::int64_t step = 0;
};

AdamState make_adam_state(const ModelParams& params);

// Adam with decoupled weight decay; params updated in place.
void optimizer_step(ModelParams& params, const Gradients& grads, AdamState& state,
                    const OptimizerConfig& config);

// Fraction of P's energy inside the column space of A:
// ||P Pi_A||_F^2 / ||P||_F^2 with Pi_A the orthogonal projector onto col(A).
double trait_energy_ratio(const Mat& p, const Mat& a);

// Mean squared distance between matched rows of unit-normalized U, V.
double alignment_metric(const Mat& u, const Mat& v);

// log mean over ordered pairs i != j of exp(-2 ||u_i - u_j||^2).
double uniformity_metric(const Mat& u);

// Taxonomy-pathway embedding used for all evaluation.
Mat embed_for_eval(const ModelParams& params, const Mat& x);

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;
    double trait_energy = std::numeric_limits<double>::quiet_NaN();  // NaN when A unknown
    double alignment = 0.0;
    double uniformity = 0.0;
};

struct TrainConfig {
    int epochs = 100;
    int batch_size = 16;
    std::uint64_t seed = 0;
    LossConfig loss;
    OptimizerConfig optimizer;
    // Cap on rows used for the per-epoch alignment/uniformity diagnostics.
    int metric_rows = 512;
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochRecord> history;
    bool diverged = false;
};

struct TrainData {
    Mat x;
    Mat c;
    std::vector<int> label_ids;
};

// Mini-batch training with seeded shuffling. Batches never repeat a label
// (samples carrying an already-used label spill into later batches), so the
// taxonomy InfoNCE target stays well-posed. Deterministic given the seed.
// `trait_loadings` enables the per-epoch trait_energy_ratio diagnostic.
TrainResult train(const TrainData& data, const ModelParams& params_init,
                  const TrainConfig& config,
                  const std::optional<Mat>& trait_loadings = std::nullopt);

// Random initialization, i.i.d. N(0, 1/sqrt(fan_in)) per matrix.
ModelParams make_params(int d_x, int d_c, int d_h, int d_e, int n_classes,
                        std::uint64_t seed);

void write_history_csv(const std::vector<EpochRecord>& history, const std::string& path);

}  // namespace taxocap::model
