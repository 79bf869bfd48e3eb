// Python bindings for the core operations: taxonomy parsing and coverage,
// prompt rendering, caption validation, the contrastive model and world
// simulator, and the evaluation metrics with their embedding file format.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "taxocap/metrics.hpp"
#include "taxocap/model.hpp"
#include "taxocap/pipeline.hpp"
#include "taxocap/prompts.hpp"
#include "taxocap/store.hpp"
#include "taxocap/taxa.hpp"
#include "taxocap/world.hpp"

namespace py = pybind11;
using namespace taxocap;
using model::Mat;

namespace {

taxa::Rank rank_arg(const std::string& name) {
    const auto rank = taxa::rank_from_name(name);
    if (!rank) throw py::value_error("unknown rank: " + name);
    return *rank;
}

world::CaptionScenario scenario_arg(const std::string& name) {
    if (name == "faithful") return world::CaptionScenario::faithful;
    if (name == "taxonomy_only") return world::CaptionScenario::taxonomy_only;
    if (name == "noisy") return world::CaptionScenario::noisy;
    throw py::value_error("unknown scenario: " + name);
}

py::dict coverage_to_dict(const taxa::CoverageReport& report) {
    py::dict out;
    for (std::size_t i = 0; i < taxa::kCoverageRanks.size(); ++i) {
        const auto& rc = report.ranks[i];
        py::dict row;
        row["covered_taxa"] = rc.covered_taxa;
        row["total_taxa"] = rc.total_taxa;
        row["taxa_ratio"] = rc.taxa_ratio;
        row["covered_samples"] = rc.covered_samples;
        row["total_samples"] = rc.total_samples;
        row["sample_ratio"] = rc.sample_ratio;
        out[taxa::rank_name(taxa::kCoverageRanks[i])] = row;
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Caption-curation toolkit core: taxonomy coverage, prompts, the "
              "dual-projector contrastive model, and evaluation metrics.";

    // ------------------------------------------------------------------ taxa
    py::class_<taxa::TaxonRecord>(m, "TaxonRecord")
        .def_readonly("kingdom", &taxa::TaxonRecord::kingdom)
        .def_readonly("phylum", &taxa::TaxonRecord::phylum)
        .def_readonly("class_name", &taxa::TaxonRecord::class_name)
        .def_readonly("order", &taxa::TaxonRecord::order)
        .def_readonly("family", &taxa::TaxonRecord::family)
        .def_readonly("genus", &taxa::TaxonRecord::genus)
        .def_readonly("species", &taxa::TaxonRecord::species)
        .def_readonly("scientific_name", &taxa::TaxonRecord::scientific_name)
        .def_readonly("common_name", &taxa::TaxonRecord::common_name)
        .def("__repr__", [](const taxa::TaxonRecord& r) {
            return "<TaxonRecord " + r.scientific_name + ">";
        });

    m.def("parse_taxonomy", &taxa::parse_taxonomy, py::arg("line"),
          py::arg("delimiter") = '|');
    m.def(
        "rank_key",
        [](const taxa::TaxonRecord& record, const std::string& rank) {
            return taxa::rank_key(record, rank_arg(rank));
        },
        py::arg("record"), py::arg("rank"));
    m.def(
        "coverage_report",
        [](const std::vector<taxa::TaxonRecord>& manifest,
           const std::vector<std::string>& covered) {
            const std::unordered_set<std::string> covered_set(covered.begin(), covered.end());
            return coverage_to_dict(taxa::coverage_report(manifest, covered_set));
        },
        py::arg("manifest"), py::arg("covered"));
    m.def("format_ratio_percent", &taxa::format_ratio_percent, py::arg("covered"),
          py::arg("total"));

    // --------------------------------------------------------------- prompts
    m.def("render_verification_prompt", &prompts::render_verification, py::arg("content"));
    m.def("render_extraction_prompt", &prompts::render_extraction, py::arg("species"),
          py::arg("description"));
    m.def(
        "render_caption_prompt",
        [](const std::string& species_name, const std::vector<std::string>& format_examples,
           const std::optional<std::string>& wiki_excerpt, int word_limit) {
            prompts::CaptionPromptInputs inputs;
            inputs.species_name = species_name;
            inputs.format_examples = format_examples;
            inputs.wiki_excerpt = wiki_excerpt;
            inputs.word_limit = word_limit;
            return prompts::render_caption(inputs);
        },
        py::arg("species_name"), py::arg("format_examples"),
        py::arg("wiki_excerpt") = std::nullopt, py::arg("word_limit") = 40);
    m.def(
        "validate_caption",
        [](const std::string& text, const std::string& species_name, int word_limit,
           const std::optional<std::string>& genus,
           const std::optional<std::string>& common_name) {
            std::vector<std::string> names;
            for (const auto flag :
                 pipeline::validate_caption(text, species_name, word_limit, genus,
                                            common_name)) {
                names.emplace_back(pipeline::flag_name(flag));
            }
            return names;
        },
        py::arg("text"), py::arg("species_name"), py::arg("word_limit") = 40,
        py::arg("genus") = std::nullopt, py::arg("common_name") = std::nullopt);

    // ----------------------------------------------------------------- model
    py::class_<model::ModelParams>(m, "ModelParams")
        .def_readwrite("encoder", &model::ModelParams::encoder)
        .def_readwrite("p_tax", &model::ModelParams::p_tax)
        .def_readwrite("p_cap", &model::ModelParams::p_cap)
        .def_readwrite("q_cap", &model::ModelParams::q_cap)
        .def_readwrite("labels", &model::ModelParams::labels)
        .def("taxonomy_map", &model::ModelParams::taxonomy_map);

    m.def("make_params", &model::make_params, py::arg("d_x"), py::arg("d_c"), py::arg("d_h"),
          py::arg("d_e"), py::arg("n_classes"), py::arg("seed"));
    m.def("unit_normalize", &model::unit_normalize, py::arg("matrix"));
    m.def("infonce", &model::infonce, py::arg("u"), py::arg("v"), py::arg("tau"),
          py::arg("symmetric") = true);
    m.def(
        "dual_loss",
        [](const Mat& x, const Mat& c, const std::vector<int>& labels,
           const model::ModelParams& params, double tau, bool symmetric, double w_tax,
           double w_cap, bool allow_label_collisions) {
            model::LossConfig config{tau, symmetric, w_tax, w_cap, allow_label_collisions};
            return model::dual_loss({x, c, labels}, params, config);
        },
        py::arg("x"), py::arg("c"), py::arg("labels"), py::arg("params"),
        py::arg("tau") = 0.07, py::arg("symmetric") = true, py::arg("w_tax") = 1.0,
        py::arg("w_cap") = 1.0, py::arg("allow_label_collisions") = false);
    m.def(
        "gradients",
        [](const Mat& x, const Mat& c, const std::vector<int>& labels,
           const model::ModelParams& params, double tau, bool symmetric, double w_tax,
           double w_cap, bool allow_label_collisions) {
            model::LossConfig config{tau, symmetric, w_tax, w_cap, allow_label_collisions};
            const auto grads = model::gradients({x, c, labels}, params, config);
            py::dict out;
            out["encoder"] = grads.encoder;
            out["p_tax"] = grads.p_tax;
            out["p_cap"] = grads.p_cap;
            out["q_cap"] = grads.q_cap;
            out["labels"] = grads.labels;
            return out;
        },
        py::arg("x"), py::arg("c"), py::arg("labels"), py::arg("params"),
        py::arg("tau") = 0.07, py::arg("symmetric") = true, py::arg("w_tax") = 1.0,
        py::arg("w_cap") = 1.0, py::arg("allow_label_collisions") = false);
    m.def("embed_for_eval", &model::embed_for_eval, py::arg("params"), py::arg("x"));
    m.def("trait_energy_ratio", &model::trait_energy_ratio, py::arg("projector"),
          py::arg("trait_loadings"));
    m.def("alignment_metric", &model::alignment_metric, py::arg("u"), py::arg("v"));
    m.def("uniformity_metric", &model::uniformity_metric, py::arg("u"));

    // ----------------------------------------------------------------- world
    m.def(
        "make_world",
        [](const std::string& scenario, std::uint64_t seed, int d_z, int d_eps, int d_x,
           int d_c, int n_classes, double sigma_x, double sigma_c, double latent_jitter,
           double nuisance_scale, double class_mean_scale) {
            world::WorldSpec spec;
            spec.d_z = d_z;
            spec.d_eps = d_eps;
            spec.d_x = d_x;
            spec.d_c = d_c;
            spec.n_classes = n_classes;
            spec.sigma_x = sigma_x;
            spec.sigma_c = sigma_c;
            spec.latent_jitter = latent_jitter;
            spec.nuisance_scale = nuisance_scale;
            spec.class_mean_scale = class_mean_scale;
            return world::make_world(spec, scenario_arg(scenario), seed);
        },
        py::arg("scenario") = "faithful", py::arg("seed") = 0, py::arg("d_z") = 4,
        py::arg("d_eps") = 4, py::arg("d_x") = 32, py::arg("d_c") = 32,
        py::arg("n_classes") = 20, py::arg("sigma_x") = 0.1, py::arg("sigma_c") = 0.1,
        py::arg("latent_jitter") = 0.3, py::arg("nuisance_scale") = 1.5,
        py::arg("class_mean_scale") = 1.0);
    py::class_<world::WorldModel>(m, "WorldModel")
        .def_readwrite("a", &world::WorldModel::a)
        .def_readwrite("b", &world::WorldModel::b)
        .def_readwrite("g", &world::WorldModel::g)
        .def_readwrite("d", &world::WorldModel::d)
        .def_readwrite("sigma_x", &world::WorldModel::sigma_x)
        .def_readwrite("sigma_c", &world::WorldModel::sigma_c)
        .def_readwrite("n_classes", &world::WorldModel::n_classes)
        .def_readwrite("class_means", &world::WorldModel::class_means)
        .def_readwrite("latent_jitter", &world::WorldModel::latent_jitter);
    m.def(
        "sample_world",
        [](const world::WorldModel& w, int n, std::uint64_t seed) {
            const auto ds = world::sample_world(w, n, seed);
            py::dict out;
            out["x"] = ds.x;
            out["c"] = ds.c;
            out["labels"] = ds.label_ids;
            out["z"] = ds.z;
            out["e"] = ds.e;
            return out;
        },
        py::arg("world"), py::arg("n"), py::arg("seed"));
    m.def("cross_covariance", &world::cross_covariance, py::arg("x"), py::arg("c"));
    m.def("analytic_cross_covariance", &world::analytic_cross_covariance, py::arg("world"));

    // --------------------------------------------------------------- metrics
    m.def("cosine_scores", &metrics::cosine_scores, py::arg("queries"), py::arg("candidates"));
    m.def("top1_accuracy", &metrics::top1_accuracy, py::arg("image_embs"),
          py::arg("class_embs"), py::arg("labels"));
    m.def(
        "recall_at_k",
        [](const Mat& scores, const metrics::RelevanceSet& relevance, int k) {
            const auto r = metrics::recall_at_k(scores, relevance, k);
            return py::make_tuple(r.value, r.n_queries, r.n_skipped);
        },
        py::arg("scores"), py::arg("relevance"), py::arg("k"));
    m.def(
        "mean_ap_at_k",
        [](const Mat& scores, const metrics::RelevanceSet& relevance, int k) {
            const auto r = metrics::mean_ap_at_k(scores, relevance, k);
            return py::make_tuple(r.value, r.n_queries, r.n_skipped);
        },
        py::arg("scores"), py::arg("relevance"), py::arg("k"));
    m.def("write_embeddings", &metrics::write_embeddings, py::arg("matrix"), py::arg("ids"),
          py::arg("path"));
    m.def(
        "read_embeddings",
        [](const std::string& path) {
            const auto file = metrics::read_embeddings(path);
            return py::make_tuple(file.values, file.ids);
        },
        py::arg("path"));
}
