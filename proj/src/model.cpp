#include "taxocap/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

#include "taxocap/rng.hpp"

namespace taxocap::model {

namespace {

void require_finite(const Mat& m, const char* name) {
    if (!m.allFinite()) {
        throw std::invalid_argument(std::string(name) + " contains non-finite values");
    }
}

// Pair mask for same-label negatives: mask(i,j) is true when the logit S_ij
// must be excluded from the softmax (i != j, labels equal).
Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> collision_mask(
    const std::vector<int>& labels) {
    const auto n = static_cast<Eigen::Index>(labels.size());
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask(n, n);
    mask.setConstant(false);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i != j && labels[i] == labels[j]) mask(i, j) = true;
        }
    }
    return mask;
}

double row_logsumexp(const Mat& s, Eigen::Index i) {
    const double m = s.row(i).maxCoeff();
    double acc = 0.0;
    for (Eigen::Index j = 0; j < s.cols(); ++j) acc += std::exp(s(i, j) - m);
    return m + std::log(acc);
}

// One-directional InfoNCE on a logit matrix whose diagonal holds positives.
double nce_from_logits(const Mat& s) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        total += -s(i, i) + row_logsumexp(s, i);
    }
    return total / static_cast<double>(s.rows());
}

// dL/dS for the row direction: (softmax_row_i(S)_j - delta_ij) / n.
Mat nce_logit_grad(const Mat& s) {
    const auto n = s.rows();
    Mat grad(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double m = s.row(i).maxCoeff();
        double denom = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) denom += std::exp(s(i, j) - m);
        for (Eigen::Index j = 0; j < n; ++j) {
            grad(i, j) = std::exp(s(i, j) - m) / denom;
        }
        grad(i, i) -= 1.0;
    }
    return grad / static_cast<double>(n);
}

constexpr double kMaskedLogit = -std::numeric_limits<double>::infinity();

struct TermForward {
    Mat pre_u;  // rows before normalization
    Mat pre_v;
    Mat u;
    Mat v;
    Mat s;  // logits, masked entries at -inf
    double loss = 0.0;
};

TermForward nce_term(const Mat& pre_u, const Mat& pre_v, double tau, bool symmetric,
                     const Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>* mask) {
    TermForward fwd;
    fwd.pre_u = pre_u;
    fwd.pre_v = pre_v;
    fwd.u = unit_normalize(pre_u);
    fwd.v = unit_normalize(pre_v);
    fwd.s = (fwd.u * fwd.v.transpose()) / tau;
    if (mask != nullptr) {
        for (Eigen::Index i = 0; i < fwd.s.rows(); ++i) {
            for (Eigen::Index j = 0; j < fwd.s.cols(); ++j) {
                if ((*mask)(i, j)) fwd.s(i, j) = kMaskedLogit;
            }
        }
    }
    fwd.loss = nce_from_logits(fwd.s);
    if (symmetric) {
        fwd.loss = 0.5 * (fwd.loss + nce_from_logits(fwd.s.transpose()));
    }
    return fwd;
}

// dL/dS for the (possibly symmetric) loss; masked entries get zero gradient
// because exp(-inf) vanishes in both softmax directions.
Mat nce_term_logit_grad(const TermForward& fwd, bool symmetric) {
    Mat ds = nce_logit_grad(fwd.s);
    if (symmetric) {
        ds = 0.5 * (ds + nce_logit_grad(fwd.s.transpose()).transpose());
    }
    return ds;
}

// Backprop through row normalization: given d(loss)/d(normalized rows),
// return d(loss)/d(pre-normalization rows).
Mat normalize_backward(const Mat& pre, const Mat& normalized, const Mat& d_norm) {
    Mat d_pre(pre.rows(), pre.cols());
    for (Eigen::Index i = 0; i < pre.rows(); ++i) {
        const double norm = pre.row(i).norm();
        const double dot = normalized.row(i).dot(d_norm.row(i));
        d_pre.row(i) = (d_norm.row(i) - dot * normalized.row(i)) / norm;
    }
    return d_pre;
}

void check_batch(const Batch& batch, const ModelParams& params, const LossConfig& config) {
    if (batch.x.rows() == 0) throw std::invalid_argument("empty batch");
    if (batch.x.rows() != static_cast<Eigen::Index>(batch.label_ids.size())) {
        throw std::invalid_argument("label count does not match batch rows");
    }
    if (config.w_cap > 0.0 && batch.c.rows() != batch.x.rows()) {
        throw std::invalid_argument("caption rows do not match image rows");
    }
    if (batch.x.cols() != params.encoder.cols()) {
        throw std::invalid_argument("image dimension does not match encoder");
    }
    if (config.w_cap > 0.0 && batch.c.cols() != params.q_cap.cols()) {
        throw std::invalid_argument("caption dimension does not match caption projector");
    }
    if (config.tau <= 0.0) throw std::invalid_argument("tau must be positive");
    if (config.w_tax < 0.0 || config.w_cap < 0.0 || config.w_tax + config.w_cap <= 0.0) {
        throw std::invalid_argument("loss weights must be non-negative with positive sum");
    }
    for (int id : batch.label_ids) {
        if (id < 0 || id >= params.labels.rows()) {
            throw std::invalid_argument("label id out of range");
        }
    }
    if (config.w_tax > 0.0 && !config.allow_label_collisions) {
        std::unordered_set<int> seen;
        for (int id : batch.label_ids) {
            if (!seen.insert(id).second) {
                throw std::invalid_argument(
                    "duplicate label in batch makes the taxonomy term ill-posed; "
                    "set allow_label_collisions to mask same-label negatives");
            }
        }
    }
}

Mat gather_label_rows(const Mat& table, const std::vector<int>& ids) {
    Mat rows(static_cast<Eigen::Index>(ids.size()), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        rows.row(static_cast<Eigen::Index>(i)) = table.row(ids[i]);
    }
    return rows;
}

}  // namespace

Mat unit_normalize(const Mat& m) {
    require_finite(m, "matrix");
    Mat out(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double norm = m.row(i).norm();
        if (norm == 0.0) {
            throw std::invalid_argument("cannot normalize all-zero row " + std::to_string(i));
        }
        out.row(i) = m.row(i) / norm;
    }
    return out;
}

double infonce(const Mat& u, const Mat& v, double tau, bool symmetric) {
    if (u.rows() != v.rows() || u.cols() != v.cols()) {
        throw std::invalid_argument("infonce inputs must have matching shapes");
    }
    if (u.rows() < 1) throw std::invalid_argument("infonce needs at least one row");
    if (tau <= 0.0) throw std::invalid_argument("tau must be positive");
    require_finite(u, "U");
    require_finite(v, "V");
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
        if (std::abs(u.row(i).norm() - 1.0) > 1e-6 || std::abs(v.row(i).norm() - 1.0) > 1e-6) {
            throw std::invalid_argument("infonce expects unit-normalized rows");
        }
    }
    const Mat s = (u * v.transpose()) / tau;
    double loss = nce_from_logits(s);
    if (symmetric) loss = 0.5 * (loss + nce_from_logits(s.transpose()));
    return loss;
}

double dual_loss(const Batch& batch, const ModelParams& params, const LossConfig& config) {
    check_batch(batch, params, config);
    const Mat hidden = batch.x * params.encoder.transpose();

    double loss = 0.0;
    if (config.w_tax > 0.0) {
        const auto mask = collision_mask(batch.label_ids);
        const bool use_mask = config.allow_label_collisions && mask.any();
        const auto term =
            nce_term(hidden * params.p_tax.transpose(),
                     gather_label_rows(params.labels, batch.label_ids), config.tau,
                     config.symmetric, use_mask ? &mask : nullptr);
        loss += config.w_tax * term.loss;
    }
    if (config.w_cap > 0.0) {
        const auto term = nce_term(hidden * params.p_cap.transpose(),
                                   batch.c * params.q_cap.transpose(), config.tau,
                                   config.symmetric, nullptr);
        loss += config.w_cap * term.loss;
    }
    return loss;
}

Gradients gradients(const Batch& batch, const ModelParams& params, const LossConfig& config) {
    check_batch(batch, params, config);
    const Mat hidden = batch.x * params.encoder.transpose();

    Gradients g;
    g.encoder = Mat::Zero(params.encoder.rows(), params.encoder.cols());
    g.p_tax = Mat::Zero(params.p_tax.rows(), params.p_tax.cols());
    g.p_cap = Mat::Zero(params.p_cap.rows(), params.p_cap.cols());
    g.q_cap = Mat::Zero(params.q_cap.rows(), params.q_cap.cols());
    g.labels = Mat::Zero(params.labels.rows(), params.labels.cols());
    Mat d_hidden = Mat::Zero(hidden.rows(), hidden.cols());

    if (config.w_tax > 0.0) {
        const auto mask = collision_mask(batch.label_ids);
        const bool use_mask = config.allow_label_collisions && mask.any();
        const Mat label_rows = gather_label_rows(params.labels, batch.label_ids);
        const auto fwd = nce_term(hidden * params.p_tax.transpose(), label_rows, config.tau,
                                  config.symmetric, use_mask ? &mask : nullptr);
        const Mat ds = config.w_tax * nce_term_logit_grad(fwd, config.symmetric);
        const Mat du = (ds * fwd.v) / config.tau;
        const Mat dv = (ds.transpose() * fwd.u) / config.tau;
        const Mat d_pre_u = normalize_backward(fwd.pre_u, fwd.u, du);
        const Mat d_pre_v = normalize_backward(fwd.pre_v, fwd.v, dv);
        g.p_tax += d_pre_u.transpose() * hidden;
        d_hidden += d_pre_u * params.p_tax;
        for (std::size_t i = 0; i < batch.label_ids.size(); ++i) {
            g.labels.row(batch.label_ids[i]) += d_pre_v.row(static_cast<Eigen::Index>(i));
        }
    }
    if (config.w_cap > 0.0) {
        const Mat caption_proj = batch.c * params.q_cap.transpose();
        const auto fwd = nce_term(hidden * params.p_cap.transpose(), caption_proj, config.tau,
                                  config.symmetric, nullptr);
        const Mat ds = config.w_cap * nce_term_logit_grad(fwd, config.symmetric);
        const Mat du = (ds * fwd.v) / config.tau;
        const Mat dv = (ds.transpose() * fwd.u) / config.tau;
        const Mat d_pre_u = normalize_backward(fwd.pre_u, fwd.u, du);
        const Mat d_pre_v = normalize_backward(fwd.pre_v, fwd.v, dv);
        g.p_cap += d_pre_u.transpose() * hidden;
        d_hidden += d_pre_u * params.p_cap;
        g.q_cap += d_pre_v.transpose() * batch.c;
    }
    g.encoder = d_hidden.transpose() * batch.x;
    return g;
}

AdamState make_adam_state(const ModelParams& params) {
    AdamState state;
    auto zeros = [](const Mat& m) { return Mat::Zero(m.rows(), m.cols()).eval(); };
    state.m = {zeros(params.encoder), zeros(params.p_tax), zeros(params.p_cap),
               zeros(params.q_cap), zeros(params.labels)};
    state.v = state.m;
    return state;
}

namespace {

void adam_update(Mat& param, const Mat& grad, Mat& m, Mat& v, std::int64_t step,
                 const OptimizerConfig& cfg) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
    const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    const Mat m_hat = m / bias1;
    const Mat v_hat = v / bias2;
    param -= cfg.learning_rate *
             (m_hat.array() / (v_hat.array().sqrt() + cfg.epsilon)).matrix();
    if (cfg.weight_decay != 0.0) {
        param -= cfg.learning_rate * cfg.weight_decay * param;
    }
}

}  // namespace

void optimizer_step(ModelParams& params, const Gradients& grads, AdamState& state,
                    const OptimizerConfig& config) {
    state.step += 1;
    adam_update(params.encoder, grads.encoder, state.m.encoder, state.v.encoder, state.step,
                config);
    adam_update(params.p_tax, grads.p_tax, state.m.p_tax, state.v.p_tax, state.step, config);
    adam_update(params.p_cap, grads.p_cap, state.m.p_cap, state.v.p_cap, state.step, config);
    adam_update(params.q_cap, grads.q_cap, state.m.q_cap, state.v.q_cap, state.step, config);
    adam_update(params.labels, grads.labels, state.m.labels, state.v.labels, state.step,
                config);
}

double trait_energy_ratio(const Mat& p, const Mat& a) {
    const double p_energy = p.squaredNorm();
    if (p_energy == 0.0) throw std::invalid_argument("projector is zero");
    if (p.cols() != a.rows()) {
        throw std::invalid_argument("projector columns must match trait-loading rows");
    }
    // Orthonormal basis of col(A) via rank-revealing QR.
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    const auto rank = qr.rank();
    if (rank == 0) throw std::invalid_argument("trait-loading matrix has trivial column space");
    const Eigen::MatrixXd q_full =
        qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), rank);
    // ||P Pi_A||_F^2 = ||P Q||_F^2 for orthonormal Q spanning col(A).
    const double projected = (p * q_full).squaredNorm();
    return projected / p_energy;
}

double alignment_metric(const Mat& u, const Mat& v) {
    if (u.rows() != v.rows() || u.cols() != v.cols()) {
        throw std::invalid_argument("alignment inputs must have matching shapes");
    }
    if (u.rows() == 0) throw std::invalid_argument("alignment needs at least one row");
    double total = 0.0;
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
        total += (u.row(i) - v.row(i)).squaredNorm();
    }
    return total / static_cast<double>(u.rows());
}

double uniformity_metric(const Mat& u) {
    const auto n = u.rows();
    if (n < 2) throw std::invalid_argument("uniformity needs at least two rows");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            acc += std::exp(-2.0 * (u.row(i) - u.row(j)).squaredNorm());
        }
    }
    return std::log(acc / static_cast<double>(n * (n - 1)));
}

Mat embed_for_eval(const ModelParams& params, const Mat& x) {
    if (x.cols() != params.encoder.cols()) {
        throw std::invalid_argument("input dimension does not match encoder");
    }
    return unit_normalize(x * params.encoder.transpose() * params.p_tax.transpose());
}

ModelParams make_params(int d_x, int d_c, int d_h, int d_e, int n_classes,
                        std::uint64_t seed) {
    Rng rng(seed);
    auto random_matrix = [&rng](int rows, int cols) {
        Mat m(rows, cols);
        const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = scale * rng.normal();
        }
        return m;
    };
    ModelParams params;
    params.encoder = random_matrix(d_h, d_x);
    params.p_tax = random_matrix(d_e, d_h);
    params.p_cap = random_matrix(d_e, d_h);
    params.q_cap = random_matrix(d_e, d_c);
    params.labels = random_matrix(n_classes, d_e);
    return params;
}

namespace {

// Greedy label-disjoint batching: walk the shuffled order, defer any sample
// whose label is already in the current batch, and start the next batch from
// the deferred queue.
std::vector<std::vector<int>> build_batches(const std::vector<int>& label_ids, int batch_size,
                                            Rng& rng) {
    std::vector<int> order(label_ids.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[rng.uniform_index(i)]);
    }
    std::vector<std::vector<int>> batches;
    std::vector<int> pending(order.begin(), order.end());
    while (!pending.empty()) {
        std::vector<int> batch;
        std::vector<int> deferred;
        std::unordered_set<int> used;
        for (int idx : pending) {
            if (static_cast<int>(batch.size()) < batch_size &&
                used.insert(label_ids[idx]).second) {
                batch.push_back(idx);
            } else {
                deferred.push_back(idx);
            }
        }
        batches.push_back(std::move(batch));
        pending = std::move(deferred);
    }
    return batches;
}

}  // namespace

TrainResult train(const TrainData& data, const ModelParams& params_init,
                  const TrainConfig& config, const std::optional<Mat>& trait_loadings) {
    if (data.x.rows() == 0) throw std::invalid_argument("empty training data");
    TrainResult result;
    result.params = params_init;
    AdamState state = make_adam_state(params_init);
    Rng rng(config.seed);

    // Epoch diagnostics run on a fixed label-distinct slice (first occurrence
    // of each label, like a training batch), so curves depend only on the
    // parameters (flat when nothing learns), not on how the epoch happened to
    // be batched, and the InfoNCE targets stay well-posed.
    Batch eval_batch;
    {
        std::vector<int> slice;
        std::unordered_set<int> used;
        for (std::size_t i = 0; i < data.label_ids.size() &&
                                slice.size() < static_cast<std::size_t>(config.metric_rows);
             ++i) {
            if (used.insert(data.label_ids[i]).second) slice.push_back(static_cast<int>(i));
        }
        eval_batch.x.resize(static_cast<Eigen::Index>(slice.size()), data.x.cols());
        eval_batch.c.resize(static_cast<Eigen::Index>(slice.size()), data.c.cols());
        for (std::size_t i = 0; i < slice.size(); ++i) {
            eval_batch.x.row(static_cast<Eigen::Index>(i)) = data.x.row(slice[i]);
            eval_batch.c.row(static_cast<Eigen::Index>(i)) = data.c.row(slice[i]);
            eval_batch.label_ids.push_back(data.label_ids[slice[i]]);
        }
    }
    const LossConfig eval_config = config.loss;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        ModelParams before_epoch = result.params;
        const auto batches = build_batches(data.label_ids, config.batch_size, rng);
        for (const auto& indices : batches) {
            Batch batch;
            batch.x.resize(static_cast<Eigen::Index>(indices.size()), data.x.cols());
            batch.c.resize(static_cast<Eigen::Index>(indices.size()), data.c.cols());
            batch.label_ids.reserve(indices.size());
            for (std::size_t i = 0; i < indices.size(); ++i) {
                batch.x.row(static_cast<Eigen::Index>(i)) = data.x.row(indices[i]);
                batch.c.row(static_cast<Eigen::Index>(i)) = data.c.row(indices[i]);
                batch.label_ids.push_back(data.label_ids[indices[i]]);
            }
            try {
                const double loss = dual_loss(batch, result.params, config.loss);
                if (!std::isfinite(loss)) throw std::invalid_argument("non-finite loss");
                const Gradients grads = gradients(batch, result.params, config.loss);
                optimizer_step(result.params, grads, state, config.optimizer);
            } catch (const std::invalid_argument&) {
                // Numeric blow-ups surface as non-finite losses or zero rows
                // hitting the normalizer. A failure before any step completed
                // is a caller contract error instead.
                if (state.step == 0) throw;
                result.params = before_epoch;
                result.diverged = true;
                return result;
            }
        }

        EpochRecord record;
        record.epoch = epoch;
        record.loss = dual_loss(eval_batch, result.params, eval_config);
        if (trait_loadings) {
            record.trait_energy =
                trait_energy_ratio(result.params.taxonomy_map(), *trait_loadings);
        }
        const Mat u = embed_for_eval(result.params, eval_batch.x);
        Mat label_rows(eval_batch.x.rows(), result.params.labels.cols());
        for (Eigen::Index i = 0; i < label_rows.rows(); ++i) {
            label_rows.row(i) =
                result.params.labels.row(eval_batch.label_ids[static_cast<std::size_t>(i)]);
        }
        record.alignment = alignment_metric(u, unit_normalize(label_rows));
        record.uniformity = label_rows.rows() >= 2 ? uniformity_metric(u) : 0.0;
        result.history.push_back(record);
    }
    return result;
}

void write_history_csv(const std::vector<EpochRecord>& history, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open history file: " + path);
    out << "epoch,loss,trait_energy_ratio,alignment,uniformity\n";
    out.precision(12);
    for (const auto& rec : history) {
        out << rec.epoch << "," << rec.loss << ",";
        if (std::isfinite(rec.trait_energy)) out << rec.trait_energy;
        out << "," << rec.alignment << "," << rec.uniformity << "\n";
    }
}

}  // namespace taxocap::model
