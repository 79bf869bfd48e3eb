#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "taxocap/model.hpp"

namespace taxocap::metrics {

using model::Mat;

// Per-query sets of relevant candidate indices. Queries with empty sets are
// skipped by the metrics and counted separately.
using RelevanceSet = std::vector<std::vector<std::uint32_t>>;

RelevanceSet identity_relevance(std::size_t n);

// S_ij = q_i . d_j after unit-normalizing both sides.
Mat cosine_scores(const Mat& queries, const Mat& candidates);

// Predicted class = argmax cosine score, ties broken by lowest index.
double top1_accuracy(const Mat& image_embs, const Mat& class_embs,
                     const std::vector<int>& label_ids);

struct RecallResult {
    double value = 0.0;
    std::size_t n_queries = 0;  // queries with nonempty relevance
    std::size_t n_skipped = 0;
};

RecallResult recall_at_k(const Mat& scores, const RelevanceSet& relevance, int k);

// Truncated average precision: candidates ranked by score descending
// (lowest-index tie-break), AP@k = sum over ranks r<=k of P(r)*rel(r),
// normalized by min(|rel|, k).
double ap_at_k(const Eigen::Ref<const Eigen::RowVectorXd>& scores,
               const std::vector<std::uint32_t>& relevant, int k);

struct MeanApResult {
    double value = 0.0;
    std::size_t n_queries = 0;
    std::size_t n_skipped = 0;
};

MeanApResult mean_ap_at_k(const Mat& scores, const RelevanceSet& relevance, int k);

struct EmbeddingIoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Binary embedding file: magic "BCEM", u16 LE version (=1), u64 LE rows,
// u32 LE dims, then rows*dims float32 LE row-major. Ids go to a sidecar at
// path + ".ids", one UTF-8 id per line.
void write_embeddings(const Mat& m, const std::vector<std::string>& ids,
                      const std::string& path);

struct EmbeddingFile {
    Mat values;
    std::vector<std::string> ids;
};

EmbeddingFile read_embeddings(const std::string& path);

}  // namespace taxocap::metrics
