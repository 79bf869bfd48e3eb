#include "taxocap/metrics.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>

namespace taxocap::metrics {

RelevanceSet identity_relevance(std::size_t n) {
    RelevanceSet rel(n);
    for (std::size_t i = 0; i < n; ++i) rel[i] = {static_cast<std::uint32_t>(i)};
    return rel;
}

Mat cosine_scores(const Mat& queries, const Mat& candidates) {
    if (queries.cols() != candidates.cols()) {
        throw std::invalid_argument("query and candidate dimensions differ");
    }
    if (queries.rows() < 1 || candidates.rows() < 1) {
        throw std::invalid_argument("need at least one query and one candidate");
    }
    return model::unit_normalize(queries) * model::unit_normalize(candidates).transpose();
}

namespace {

// Candidate order by score descending, index ascending on ties.
std::vector<std::uint32_t> ranked_indices(const Eigen::Ref<const Eigen::RowVectorXd>& scores) {
    std::vector<std::uint32_t> order(static_cast<std::size_t>(scores.size()));
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&scores](std::uint32_t a, std::uint32_t b) {
        return scores(a) > scores(b);
    });
    return order;
}

void check_k(int k, Eigen::Index candidates) {
    if (k < 1 || k > candidates) {
        throw std::invalid_argument("k must be in [1, candidates]");
    }
}

void check_relevance(const RelevanceSet& relevance, Eigen::Index rows, Eigen::Index cols) {
    if (static_cast<Eigen::Index>(relevance.size()) != rows) {
        throw std::invalid_argument("relevance size does not match query count");
    }
    for (const auto& set : relevance) {
        for (auto idx : set) {
            if (idx >= static_cast<std::uint32_t>(cols)) {
                throw std::invalid_argument("relevant index out of candidate range");
            }
        }
    }
}

}  // namespace

double top1_accuracy(const Mat& image_embs, const Mat& class_embs,
                     const std::vector<int>& label_ids) {
    if (image_embs.rows() == 0 || class_embs.rows() == 0) {
        throw std::invalid_argument("empty inputs");
    }
    if (static_cast<Eigen::Index>(label_ids.size()) != image_embs.rows()) {
        throw std::invalid_argument("label count does not match images");
    }
    const Mat scores = cosine_scores(image_embs, class_embs);
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < scores.cols(); ++j) {
            if (scores(i, j) > scores(i, best)) best = j;
        }
        if (label_ids[static_cast<std::size_t>(i)] < 0 ||
            label_ids[static_cast<std::size_t>(i)] >= scores.cols()) {
            throw std::invalid_argument("label id out of class range");
        }
        if (best == label_ids[static_cast<std::size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(scores.rows());
}

RecallResult recall_at_k(const Mat& scores, const RelevanceSet& relevance, int k) {
    check_k(k, scores.cols());
    check_relevance(relevance, scores.rows(), scores.cols());
    RecallResult result;
    std::size_t hits = 0;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const auto& rel = relevance[static_cast<std::size_t>(i)];
        if (rel.empty()) {
            ++result.n_skipped;
            continue;
        }
        ++result.n_queries;
        const auto order = ranked_indices(scores.row(i));
        for (int r = 0; r < k; ++r) {
            if (std::find(rel.begin(), rel.end(), order[static_cast<std::size_t>(r)]) !=
                rel.end()) {
                ++hits;
                break;
            }
        }
    }
    result.value = result.n_queries == 0
                       ? 0.0
                       : static_cast<double>(hits) / static_cast<double>(result.n_queries);
    return result;
}

double ap_at_k(const Eigen::Ref<const Eigen::RowVectorXd>& scores,
               const std::vector<std::uint32_t>& relevant, int k) {
    check_k(k, scores.size());
    if (relevant.empty()) throw std::invalid_argument("relevance set must be non-empty");
    const auto order = ranked_indices(scores);
    double sum = 0.0;
    int hits = 0;
    for (int r = 1; r <= k; ++r) {
        const bool is_relevant =
            std::find(relevant.begin(), relevant.end(), order[static_cast<std::size_t>(r - 1)]) !=
            relevant.end();
        if (is_relevant) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(r);
        }
    }
    const double denom = std::min<std::size_t>(relevant.size(), static_cast<std::size_t>(k));
    return sum / denom;
}

MeanApResult mean_ap_at_k(const Mat& scores, const RelevanceSet& relevance, int k) {
    check_k(k, scores.cols());
    check_relevance(relevance, scores.rows(), scores.cols());
    MeanApResult result;
    double total = 0.0;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const auto& rel = relevance[static_cast<std::size_t>(i)];
        if (rel.empty()) {
            ++result.n_skipped;
            continue;
        }
        ++result.n_queries;
        total += ap_at_k(scores.row(i), rel, k);
    }
    if (result.n_queries == 0) {
        throw std::invalid_argument("every query has empty relevance");
    }
    result.value = total / static_cast<double>(result.n_queries);
    return result;
}

namespace {

constexpr char kMagic[4] = {'B', 'C', 'E', 'M'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void write_le(std::ofstream& out, T value) {
    unsigned char bytes[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        bytes[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) &
                                              0xff);
    }
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in, std::uint64_t offset, const std::string& what) {
    unsigned char bytes[sizeof(T)];
    in.read(reinterpret_cast<char*>(bytes), sizeof(T));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) {
        throw EmbeddingIoError("truncated file: " + what + " at byte offset " +
                               std::to_string(offset));
    }
    std::uint64_t value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        value |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    }
    return static_cast<T>(value);
}

std::uint32_t float_to_bits(float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    return bits;
}

float bits_to_float(std::uint32_t bits) {
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

}  // namespace

void write_embeddings(const Mat& m, const std::vector<std::string>& ids,
                      const std::string& path) {
    if (static_cast<Eigen::Index>(ids.size()) != m.rows()) {
        throw EmbeddingIoError("id count does not match rows");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw EmbeddingIoError("cannot open for writing: " + path);
    out.write(kMagic, 4);
    write_le<std::uint16_t>(out, kVersion);
    write_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            write_le<std::uint32_t>(out, float_to_bits(static_cast<float>(m(i, j))));
        }
    }
    if (!out) throw EmbeddingIoError("write failed: " + path);
    out.close();

    std::ofstream ids_out(path + ".ids", std::ios::binary);
    if (!ids_out) throw EmbeddingIoError("cannot open for writing: " + path + ".ids");
    for (const auto& id : ids) ids_out << id << "\n";
}

EmbeddingFile read_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw EmbeddingIoError("cannot open: " + path);
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4) throw EmbeddingIoError("truncated file: magic at byte offset 0");
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw EmbeddingIoError("bad magic, not an embedding file: " + path);
    }
    const auto version = read_le<std::uint16_t>(in, 4, "version");
    if (version != kVersion) {
        throw EmbeddingIoError("unsupported version " + std::to_string(version));
    }
    const auto rows = read_le<std::uint64_t>(in, 6, "row count");
    const auto dims = read_le<std::uint32_t>(in, 14, "dim count");

    EmbeddingFile file;
    file.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dims));
    std::uint64_t offset = 18;
    for (std::uint64_t i = 0; i < rows; ++i) {
        for (std::uint32_t j = 0; j < dims; ++j) {
            const auto bits = read_le<std::uint32_t>(in, offset, "payload");
            file.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                static_cast<double>(bits_to_float(bits));
            offset += 4;
        }
    }

    std::ifstream ids_in(path + ".ids", std::ios::binary);
    if (!ids_in) throw EmbeddingIoError("missing ids sidecar: " + path + ".ids");
    std::string line;
    while (std::getline(ids_in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        file.ids.push_back(line);
    }
    if (file.ids.size() != rows) {
        throw EmbeddingIoError("id count " + std::to_string(file.ids.size()) +
                               " does not match row count " + std::to_string(rows));
    }
    return file;
}

}  // namespace taxocap::metrics
