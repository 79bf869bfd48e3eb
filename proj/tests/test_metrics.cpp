#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "taxocap/metrics.hpp"
#include "taxocap/rng.hpp"

using namespace taxocap;
using metrics::RelevanceSet;
using model::Mat;

namespace {

Mat random_matrix(Rng& rng, int rows, int cols) {
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
    }
    return m;
}

// Oracle rank list: score descending, index ascending, by exhaustive selection.
std::vector<int> oracle_ranking(const std::vector<double>& scores) {
    std::vector<int> remaining(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) remaining[i] = static_cast<int>(i);
    std::vector<int> order;
    while (!remaining.empty()) {
        int best_pos = 0;
        for (std::size_t p = 1; p < remaining.size(); ++p) {
            const int cand = remaining[p];
            const int best = remaining[static_cast<std::size_t>(best_pos)];
            if (scores[static_cast<std::size_t>(cand)] >
                    scores[static_cast<std::size_t>(best)] ||
                (scores[static_cast<std::size_t>(cand)] ==
                     scores[static_cast<std::size_t>(best)] &&
                 cand < best)) {
                best_pos = static_cast<int>(p);
            }
        }
        order.push_back(remaining[static_cast<std::size_t>(best_pos)]);
        remaining.erase(remaining.begin() + best_pos);
    }
    return order;
}

std::vector<double> row_of(const Mat& m, int i) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (int j = 0; j < m.cols(); ++j) row[static_cast<std::size_t>(j)] = m(i, j);
    return row;
}

double oracle_recall(const Mat& s, const RelevanceSet& rel, int k, std::size_t* skipped) {
    std::size_t hits = 0, counted = 0;
    *skipped = 0;
    for (int i = 0; i < s.rows(); ++i) {
        if (rel[static_cast<std::size_t>(i)].empty()) {
            ++*skipped;
            continue;
        }
        ++counted;
        const auto order = oracle_ranking(row_of(s, i));
        for (int r = 0; r < k; ++r) {
            const auto idx = static_cast<std::uint32_t>(order[static_cast<std::size_t>(r)]);
            const auto& v = rel[static_cast<std::size_t>(i)];
            bool found = false;
            for (auto x : v) {
                if (x == idx) found = true;
            }
            if (found) {
                ++hits;
                break;
            }
        }
    }
    return counted ? static_cast<double>(hits) / static_cast<double>(counted) : 0.0;
}

double oracle_ap(const std::vector<double>& scores, const std::vector<std::uint32_t>& rel,
                 int k) {
    const auto order = oracle_ranking(scores);
    double sum = 0.0;
    int hits = 0;
    for (int r = 1; r <= k; ++r) {
        const auto idx = static_cast<std::uint32_t>(order[static_cast<std::size_t>(r - 1)]);
        bool relevant = false;
        for (auto x : rel) {
            if (x == idx) relevant = true;
        }
        if (relevant) {
            ++hits;
            sum += static_cast<double>(hits) / r;
        }
    }
    return sum / std::min<std::size_t>(rel.size(), static_cast<std::size_t>(k));
}

double oracle_top1(const Mat& images, const Mat& classes, const std::vector<int>& labels) {
    // Unnormalized cosine by explicit loops.
    std::size_t correct = 0;
    for (int i = 0; i < images.rows(); ++i) {
        double best = -2.0;
        int best_j = -1;
        for (int j = 0; j < classes.rows(); ++j) {
            double dot = 0.0, ni = 0.0, nj = 0.0;
            for (int d = 0; d < images.cols(); ++d) {
                dot += images(i, d) * classes(j, d);
                ni += images(i, d) * images(i, d);
                nj += classes(j, d) * classes(j, d);
            }
            const double cosine = dot / (std::sqrt(ni) * std::sqrt(nj));
            if (cosine > best) {
                best = cosine;
                best_j = j;
            }
        }
        if (best_j == labels[static_cast<std::size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / images.rows();
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("cosine_scores: orthonormal identity, antiparallel pair, loop oracle") {
    Mat eye = Mat::Identity(3, 3);
    CHECK((metrics::cosine_scores(eye, eye) - eye).norm() < 1e-12);

    Mat q(1, 2), d(1, 2);
    q << 1.0, 0.0;
    d << -2.0, 0.0;
    CHECK(metrics::cosine_scores(q, d)(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));

    Rng rng(3);
    const Mat a = random_matrix(rng, 5, 4);
    const Mat b = random_matrix(rng, 7, 4);
    const Mat s = metrics::cosine_scores(a, b);
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 7; ++j) {
            double dot = 0.0, na = 0.0, nb = 0.0;
            for (int k = 0; k < 4; ++k) {
                dot += a(i, k) * b(j, k);
                na += a(i, k) * a(i, k);
                nb += b(j, k) * b(j, k);
            }
            CHECK(s(i, j) == doctest::Approx(dot / std::sqrt(na * nb)).epsilon(1e-12));
        }
    }
}

TEST_CASE("top1_accuracy: one-hot alignment and tie-breaks") {
    Mat eye = Mat::Identity(4, 4);
    CHECK(metrics::top1_accuracy(eye, eye, {0, 1, 2, 3}) == 1.0);

    // All-equal class embeddings: prediction is always class 0.
    Mat classes = Mat::Ones(3, 4);
    Rng rng(5);
    const Mat images = random_matrix(rng, 10, 4);
    std::vector<int> labels = {0, 1, 2, 0, 0, 1, 2, 2, 0, 1};
    double freq0 = 0.0;
    for (int l : labels) {
        if (l == 0) freq0 += 1.0;
    }
    CHECK(metrics::top1_accuracy(images, classes, labels) ==
          doctest::Approx(freq0 / 10.0));

    CHECK_THROWS_AS(metrics::top1_accuracy(Mat(), Mat(), {}), std::invalid_argument);
}

TEST_CASE("top1_accuracy equals the exhaustive oracle on random instances") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 1 + static_cast<int>(rng.uniform_index(50));
        const int k = 2 + static_cast<int>(rng.uniform_index(9));
        const Mat images = random_matrix(rng, n, 6);
        const Mat classes = random_matrix(rng, k, 6);
        std::vector<int> labels;
        for (int i = 0; i < n; ++i) {
            labels.push_back(static_cast<int>(rng.uniform_index(k)));
        }
        CHECK(metrics::top1_accuracy(images, classes, labels) ==
              doctest::Approx(oracle_top1(images, classes, labels)).epsilon(1e-12));
    }
}

TEST_CASE("recall_at_k: spec examples") {
    Mat s(3, 3);
    s << 0.9, 0.1, 0.0, 0.2, 0.8, 0.1, 0.3, 0.4, 0.5;
    const auto identity = metrics::identity_relevance(3);
    CHECK(metrics::recall_at_k(s, identity, 1).value == 1.0);
    CHECK(metrics::recall_at_k(s, identity, 3).value == 1.0);

    RelevanceSet sparse(3);
    sparse[0] = {2};
    const auto r = metrics::recall_at_k(s, sparse, 1);
    CHECK(r.value == 0.0);
    CHECK(r.n_queries == 1);
    CHECK(r.n_skipped == 2);

    CHECK_THROWS_AS(metrics::recall_at_k(s, identity, 0), std::invalid_argument);
    CHECK_THROWS_AS(metrics::recall_at_k(s, identity, 4), std::invalid_argument);
}

TEST_CASE("recall_at_k is non-decreasing in k and matches the oracle") {
    Rng rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const int queries = 1 + static_cast<int>(rng.uniform_index(20));
        const int candidates = 2 + static_cast<int>(rng.uniform_index(30));
        Mat s = random_matrix(rng, queries, candidates);
        if (trial % 3 == 0) {
            // Inject ties to exercise the lowest-index rule.
            for (int i = 0; i < queries; ++i) {
                for (int j = 0; j < candidates; ++j) {
                    s(i, j) = std::round(s(i, j) * 2.0) / 2.0;
                }
            }
        }
        RelevanceSet rel(static_cast<std::size_t>(queries));
        for (auto& set : rel) {
            const auto count = rng.uniform_index(4);  // may be empty
            for (std::uint64_t c = 0; c < count; ++c) {
                set.push_back(static_cast<std::uint32_t>(rng.uniform_index(candidates)));
            }
        }
        double prev = 0.0;
        for (int k = 1; k <= candidates; ++k) {
            std::size_t skipped = 0;
            const auto got = metrics::recall_at_k(s, rel, k);
            const double want = oracle_recall(s, rel, k, &skipped);
            CHECK(got.value == doctest::Approx(want).epsilon(1e-12));
            CHECK(got.n_skipped == skipped);
            CHECK(got.value >= prev - 1e-12);
            prev = got.value;
        }
    }
}

TEST_CASE("ap_at_k: hand-worked example and edge behavior") {
    // Relevant at ranks 1 and 3, |rel| = 2, k = 3 -> (1/2)(1 + 2/3).
    Eigen::RowVectorXd scores(4);
    scores << 0.9, 0.5, 0.7, 0.1;  // ranking: 0, 2, 1, 3
    const std::vector<std::uint32_t> rel = {0, 1};
    CHECK(metrics::ap_at_k(scores, rel, 3) ==
          doctest::Approx(0.5 * (1.0 + 2.0 / 3.0)).epsilon(1e-9));

    // All relevant items in the top-|rel| ranks -> 1.0.
    CHECK(metrics::ap_at_k(scores, {0, 2}, 3) == doctest::Approx(1.0));

    // A relevant item ranked below k contributes nothing.
    CHECK(metrics::ap_at_k(scores, {3}, 2) == doctest::Approx(0.0));

    CHECK_THROWS_AS(metrics::ap_at_k(scores, {}, 2), std::invalid_argument);
}

TEST_CASE("mean_ap_at_k matches the oracle and stays in [0,1]") {
    Rng rng(13);
    for (int trial = 0; trial < 30; ++trial) {
        const int queries = 1 + static_cast<int>(rng.uniform_index(15));
        const int candidates = 3 + static_cast<int>(rng.uniform_index(25));
        const int k = 1 + static_cast<int>(rng.uniform_index(candidates));
        const Mat s = random_matrix(rng, queries, candidates);
        RelevanceSet rel(static_cast<std::size_t>(queries));
        bool any = false;
        for (auto& set : rel) {
            const auto count = rng.uniform_index(5);
            for (std::uint64_t c = 0; c < count; ++c) {
                const auto idx = static_cast<std::uint32_t>(rng.uniform_index(candidates));
                bool dup = false;
                for (auto x : set) {
                    if (x == idx) dup = true;
                }
                if (!dup) set.push_back(idx);
            }
            if (!set.empty()) any = true;
        }
        if (!any) {
            rel[0].push_back(0);
        }
        const auto got = metrics::mean_ap_at_k(s, rel, k);
        double total = 0.0;
        std::size_t counted = 0;
        for (int i = 0; i < queries; ++i) {
            if (rel[static_cast<std::size_t>(i)].empty()) continue;
            total += oracle_ap(row_of(s, i), rel[static_cast<std::size_t>(i)], k);
            ++counted;
        }
        CHECK(got.value == doctest::Approx(total / counted).epsilon(1e-12));
        CHECK(got.value >= 0.0);
        CHECK(got.value <= 1.0 + 1e-12);
    }
}

TEST_CASE("metrics are invariant to strictly increasing score transforms") {
    Rng rng(17);
    const Mat s = random_matrix(rng, 8, 12);
    Mat t = s;
    for (int i = 0; i < t.rows(); ++i) {
        for (int j = 0; j < t.cols(); ++j) t(i, j) = std::tanh(t(i, j)) * 3.0 + 1.0;
    }
    const auto rel = metrics::identity_relevance(8);
    for (int k = 1; k <= 12; k += 3) {
        CHECK(metrics::recall_at_k(s, rel, k).value ==
              metrics::recall_at_k(t, rel, k).value);
        CHECK(metrics::mean_ap_at_k(s, rel, k).value ==
              doctest::Approx(metrics::mean_ap_at_k(t, rel, k).value).epsilon(1e-12));
    }
}

TEST_CASE("embedding file round-trip is bit-identical") {
    Rng rng(19);
    Mat m(10, 4);
    for (int i = 0; i < 10; ++i) {
        for (int j = 0; j < 4; ++j) {
            m(i, j) = static_cast<double>(static_cast<float>(rng.normal()));
        }
    }
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) ids.push_back("sample-" + std::to_string(i));
    const std::string path = temp_path("taxocap_emb_test.bin");
    metrics::write_embeddings(m, ids, path);
    const auto file = metrics::read_embeddings(path);
    CHECK((file.values - m).norm() == 0.0);
    CHECK(file.ids == ids);

    // Zero-row matrix round-trips too.
    const std::string empty_path = temp_path("taxoc_emb_empty.bin");
    metrics::write_embeddings(Mat(0, 3), {}, empty_path);
    const auto empty = metrics::read_embeddings(empty_path);
    CHECK(empty.values.rows() == 0);
    CHECK(empty.ids.empty());
    std::remove(path.c_str());
    std::remove((path + ".ids").c_str());
    std::remove(empty_path.c_str());
    std::remove((empty_path + ".ids").c_str());
}

TEST_CASE("embedding file errors: bad magic, truncation, id mismatch") {
    const std::string path = temp_path("taxocap_emb_bad.bin");
    {
        std::ofstream out(path, std::ios::binary);
        out << "XXXX";
    }
    {
        std::ofstream ids(path + ".ids", std::ios::binary);
    }
    CHECK_THROWS_WITH_AS(metrics::read_embeddings(path),
                         doctest::Contains("bad magic"), metrics::EmbeddingIoError);

    Mat m = Mat::Ones(4, 3);
    metrics::write_embeddings(m, {"a", "b", "c", "d"}, path);
    // Truncate the payload mid-way.
    std::filesystem::resize_file(path, 18 + 5 * 4);
    try {
        metrics::read_embeddings(path);
        FAIL("expected truncation error");
    } catch (const metrics::EmbeddingIoError& e) {
        CHECK(std::string(e.what()).find("truncated") != std::string::npos);
        CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
    }

    metrics::write_embeddings(m, {"a", "b", "c", "d"}, path);
    {
        std::ofstream ids(path + ".ids", std::ios::binary);
        ids << "a\nb\n";
    }
    CHECK_THROWS_WITH_AS(metrics::read_embeddings(path),
                         doctest::Contains("does not match row count"),
                         metrics::EmbeddingIoError);
    std::remove(path.c_str());
    std::remove((path + ".ids").c_str());
}
