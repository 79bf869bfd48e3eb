#include "taxocap/config.hpp"

#include <map>
#include <set>

namespace taxocap::config {

namespace {

const std::map<std::string, std::set<std::string>>& schema() {
    static const std::map<std::string, std::set<std::string>> keys = {
        {"", {"seed"}},
        {"taxa", {"delimiter"}},
        {"wiki",
         {"backend", "fixture_dir", "api_url", "requests_per_second", "user_agent",
          "min_matching_ranks", "max_in_flight"}},
        {"gateway",
         {"backend", "endpoint_url", "model", "verify_model", "extract_model", "api_key_env",
          "temperature", "top_p", "max_tokens", "max_concurrency", "requests_per_minute",
          "retry_max_attempts", "retry_base_backoff_ms", "retry_jitter", "mock_script",
          "mock_dir", "max_prompt_chars"}},
        {"pipeline", {"word_limit", "concurrency", "resume"}},
        {"stores", {"descriptions", "examples"}},
        {"world",
         {"d_z", "d_eps", "d_x", "d_c", "n_classes", "sigma_x", "sigma_c", "latent_jitter",
          "nuisance_scale", "class_mean_scale"}},
        {"train",
         {"epochs", "batch_size", "learning_rate", "weight_decay", "tau", "symmetric",
          "w_tax", "w_cap", "allow_label_collisions", "d_h", "d_e", "train_samples",
          "test_samples", "metric_rows"}},
        {"sim", {"n_seeds"}},
    };
    return keys;
}

int require_positive(std::int64_t value, const std::string& what) {
    if (value < 1) throw ConfigError(what + " must be >= 1");
    return static_cast<int>(value);
}

}  // namespace

RunConfig::RunConfig(toml::Document doc) : doc_(std::move(doc)) {
    validate_schema(doc_);
}

void RunConfig::validate_schema(const toml::Document& doc) {
    for (const auto& table_name : doc.table_names()) {
        const auto it = schema().find(table_name);
        if (it == schema().end()) {
            throw ConfigError("unknown config table: [" + table_name + "]");
        }
        for (const auto& [key, _] : doc.table(table_name)) {
            if (!it->second.count(key)) {
                const std::string where =
                    table_name.empty() ? key : "[" + table_name + "] " + key;
                throw ConfigError("unknown config key: " + where);
            }
        }
    }
}

RunConfig RunConfig::from_file(const std::string& path) {
    try {
        return RunConfig(toml::Document::parse_file(path));
    } catch (const toml::TomlError& e) {
        throw ConfigError(e.what());
    }
}

RunConfig RunConfig::from_text(const std::string& text) {
    try {
        return RunConfig(toml::Document::parse(text));
    } catch (const toml::TomlError& e) {
        throw ConfigError(e.what());
    }
}

RunConfig RunConfig::defaults() { return RunConfig(toml::Document::parse("")); }

char RunConfig::manifest_delimiter() const {
    const auto d = doc_.get_string("taxa", "delimiter").value_or("|");
    if (d.size() != 1) throw ConfigError("[taxa] delimiter must be a single character");
    return d[0];
}

std::string RunConfig::wiki_backend() const {
    const auto backend = doc_.get_string("wiki", "backend").value_or("fixture");
    if (backend != "fixture" && backend != "live") {
        throw ConfigError("[wiki] backend must be \"fixture\" or \"live\"");
    }
    return backend;
}

std::string RunConfig::wiki_fixture_dir() const {
    const auto dir = doc_.get_string("wiki", "fixture_dir");
    if (!dir) throw ConfigError("[wiki] fixture_dir is required for the fixture backend");
    return *dir;
}

wiki::LiveBackendConfig RunConfig::wiki_live_config() const {
    wiki::LiveBackendConfig config;
    if (const auto url = doc_.get_string("wiki", "api_url")) config.api_url = *url;
    if (const auto rps = doc_.get_double("wiki", "requests_per_second")) {
        if (*rps <= 0.0) throw ConfigError("[wiki] requests_per_second must be positive");
        config.requests_per_second = *rps;
    }
    if (const auto ua = doc_.get_string("wiki", "user_agent")) config.user_agent = *ua;
    return config;
}

int RunConfig::wiki_min_matching_ranks() const {
    return require_positive(doc_.get_int("wiki", "min_matching_ranks").value_or(3),
                            "[wiki] min_matching_ranks");
}

int RunConfig::wiki_max_in_flight() const {
    return require_positive(doc_.get_int("wiki", "max_in_flight").value_or(8),
                            "[wiki] max_in_flight");
}

std::unique_ptr<wiki::PageBackend> RunConfig::make_wiki_backend() const {
    if (wiki_backend() == "fixture") {
        return std::make_unique<wiki::FixtureBackend>(wiki_fixture_dir());
    }
    return std::make_unique<wiki::LiveBackend>(wiki_live_config());
}

std::string RunConfig::gateway_backend() const {
    const auto backend = doc_.get_string("gateway", "backend").value_or("mock-script");
    if (backend != "http" && backend != "mock-script" && backend != "mock-dir") {
        throw ConfigError("[gateway] backend must be \"http\", \"mock-script\" or \"mock-dir\"");
    }
    return backend;
}

llm::BackendConfig RunConfig::gateway_config() const {
    llm::BackendConfig config;
    config.endpoint_url = doc_.get_string("gateway", "endpoint_url").value_or("");
    config.model = doc_.get_string("gateway", "model").value_or("default");
    config.verify_model = doc_.get_string("gateway", "verify_model").value_or("");
    config.extract_model = doc_.get_string("gateway", "extract_model").value_or("");
    config.api_key_env =
        doc_.get_string("gateway", "api_key_env").value_or("TAXOCAP_API_KEY");
    config.temperature = doc_.get_double("gateway", "temperature").value_or(0.6);
    config.top_p = doc_.get_double("gateway", "top_p").value_or(0.8);
    if (config.temperature < 0.0) throw ConfigError("[gateway] temperature must be >= 0");
    if (config.top_p <= 0.0 || config.top_p > 1.0) {
        throw ConfigError("[gateway] top_p must be in (0, 1]");
    }
    config.max_tokens = require_positive(
        doc_.get_int("gateway", "max_tokens").value_or(512), "[gateway] max_tokens");
    config.max_concurrency = require_positive(
        doc_.get_int("gateway", "max_concurrency").value_or(8), "[gateway] max_concurrency");
    config.requests_per_minute =
        require_positive(doc_.get_int("gateway", "requests_per_minute").value_or(600),
                         "[gateway] requests_per_minute");
    config.retry.max_attempts =
        require_positive(doc_.get_int("gateway", "retry_max_attempts").value_or(3),
                         "[gateway] retry_max_attempts");
    config.retry.base_backoff = std::chrono::milliseconds(require_positive(
        doc_.get_int("gateway", "retry_base_backoff_ms").value_or(250),
        "[gateway] retry_base_backoff_ms"));
    config.retry.jitter = doc_.get_double("gateway", "retry_jitter").value_or(0.1);
    if (config.retry.jitter < 0.0 || config.retry.jitter >= 1.0) {
        throw ConfigError("[gateway] retry_jitter must be in [0, 1)");
    }
    const auto max_chars = doc_.get_int("gateway", "max_prompt_chars").value_or(8000);
    config.max_prompt_chars = static_cast<std::size_t>(
        require_positive(max_chars, "[gateway] max_prompt_chars"));
    return config;
}

std::shared_ptr<llm::ChatBackend> RunConfig::make_chat_backend() const {
    const auto backend = gateway_backend();
    if (backend == "http") {
        const auto config = gateway_config();
        if (config.endpoint_url.empty()) {
            throw ConfigError("[gateway] endpoint_url is required for the http backend");
        }
        return std::make_shared<llm::HttpChatBackend>(config);
    }
    if (backend == "mock-script") {
        const auto path = doc_.get_string("gateway", "mock_script");
        if (!path) throw ConfigError("[gateway] mock_script is required for mock-script");
        return llm::ScriptedMockBackend::from_file(*path);
    }
    const auto dir = doc_.get_string("gateway", "mock_dir");
    if (!dir) throw ConfigError("[gateway] mock_dir is required for mock-dir");
    return std::make_shared<llm::DirectoryMockBackend>(*dir);
}

std::shared_ptr<llm::Gateway> RunConfig::make_gateway() const {
    return std::make_shared<llm::Gateway>(make_chat_backend(), gateway_config());
}

pipeline::PipelineConfig RunConfig::pipeline_config() const {
    pipeline::PipelineConfig config;
    config.word_limit = require_positive(doc_.get_int("pipeline", "word_limit").value_or(40),
                                         "[pipeline] word_limit");
    if (config.word_limit < 10) throw ConfigError("[pipeline] word_limit must be >= 10");
    config.concurrency = require_positive(
        doc_.get_int("pipeline", "concurrency").value_or(8), "[pipeline] concurrency");
    config.resume = doc_.get_bool("pipeline", "resume").value_or(false);
    config.manifest_delimiter = manifest_delimiter();
    return config;
}

std::string RunConfig::descriptions_path() const {
    const auto path = doc_.get_string("stores", "descriptions");
    if (!path) throw ConfigError("[stores] descriptions is required");
    return *path;
}

std::string RunConfig::examples_path() const {
    const auto path = doc_.get_string("stores", "examples");
    if (!path) throw ConfigError("[stores] examples is required");
    return *path;
}

world::WorldSpec RunConfig::world_spec() const {
    world::WorldSpec spec;
    spec.d_z = require_positive(doc_.get_int("world", "d_z").value_or(spec.d_z), "[world] d_z");
    spec.d_eps =
        require_positive(doc_.get_int("world", "d_eps").value_or(spec.d_eps), "[world] d_eps");
    spec.d_x = require_positive(doc_.get_int("world", "d_x").value_or(spec.d_x), "[world] d_x");
    spec.d_c = require_positive(doc_.get_int("world", "d_c").value_or(spec.d_c), "[world] d_c");
    spec.n_classes = require_positive(
        doc_.get_int("world", "n_classes").value_or(spec.n_classes), "[world] n_classes");
    spec.sigma_x = doc_.get_double("world", "sigma_x").value_or(spec.sigma_x);
    spec.sigma_c = doc_.get_double("world", "sigma_c").value_or(spec.sigma_c);
    spec.latent_jitter = doc_.get_double("world", "latent_jitter").value_or(spec.latent_jitter);
    spec.nuisance_scale =
        doc_.get_double("world", "nuisance_scale").value_or(spec.nuisance_scale);
    spec.class_mean_scale =
        doc_.get_double("world", "class_mean_scale").value_or(spec.class_mean_scale);
    if (spec.sigma_x < 0.0 || spec.sigma_c < 0.0 || spec.latent_jitter < 0.0) {
        throw ConfigError("[world] noise scales must be >= 0");
    }
    return spec;
}

model::TrainConfig RunConfig::train_config() const {
    model::TrainConfig config;
    config.epochs =
        require_positive(doc_.get_int("train", "epochs").value_or(100), "[train] epochs");
    config.batch_size = require_positive(doc_.get_int("train", "batch_size").value_or(16),
                                         "[train] batch_size");
    config.seed = seed();
    config.loss.tau = doc_.get_double("train", "tau").value_or(0.2);
    if (config.loss.tau <= 0.0) throw ConfigError("[train] tau must be positive");
    config.loss.symmetric = doc_.get_bool("train", "symmetric").value_or(true);
    config.loss.w_tax = doc_.get_double("train", "w_tax").value_or(1.0);
    config.loss.w_cap = doc_.get_double("train", "w_cap").value_or(1.0);
    config.loss.allow_label_collisions =
        doc_.get_bool("train", "allow_label_collisions").value_or(false);
    config.optimizer.learning_rate =
        doc_.get_double("train", "learning_rate").value_or(1e-3);
    config.optimizer.weight_decay = doc_.get_double("train", "weight_decay").value_or(0.2);
    config.metric_rows = require_positive(
        doc_.get_int("train", "metric_rows").value_or(512), "[train] metric_rows");
    return config;
}

int RunConfig::model_hidden_dim() const {
    return require_positive(doc_.get_int("train", "d_h").value_or(4), "[train] d_h");
}

int RunConfig::model_embed_dim() const {
    return require_positive(doc_.get_int("train", "d_e").value_or(16), "[train] d_e");
}

int RunConfig::train_samples() const {
    return require_positive(doc_.get_int("train", "train_samples").value_or(2000),
                            "[train] train_samples");
}

int RunConfig::test_samples() const {
    return require_positive(doc_.get_int("train", "test_samples").value_or(500),
                            "[train] test_samples");
}

int RunConfig::sim_seeds() const {
    return require_positive(doc_.get_int("sim", "n_seeds").value_or(5), "[sim] n_seeds");
}

std::uint64_t RunConfig::seed() const {
    const auto s = doc_.get_int("", "seed").value_or(0);
    if (s < 0) throw ConfigError("seed must be >= 0");
    return static_cast<std::uint64_t>(s);
}

void RunConfig::set_seed(std::uint64_t seed) {
    doc_.set("", "seed", static_cast<std::int64_t>(seed));
}

void RunConfig::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("override must look like table.key=value: " + assignment);
    }
    std::string path = assignment.substr(0, eq);
    std::string value = assignment.substr(eq + 1);
    std::string table, key;
    const auto dot = path.find('.');
    if (dot == std::string::npos) {
        key = path;
    } else {
        table = path.substr(0, dot);
        key = path.substr(dot + 1);
    }
    // Bare strings are accepted on the command line; everything else uses the
    // config-file syntax.
    const bool looks_quoted = !value.empty() && (value.front() == '"' || value.front() == '[');
    const bool looks_scalar =
        value == "true" || value == "false" ||
        (!value.empty() &&
         value.find_first_not_of("0123456789+-.eE") == std::string::npos);
    std::string literal = value;
    if (!looks_quoted && !looks_scalar) {
        literal = "\"" + value + "\"";
    }
    toml::Document snippet;
    try {
        snippet = toml::Document::parse((table.empty() ? "" : "[" + table + "]\n") + key +
                                        " = " + literal + "\n");
    } catch (const toml::TomlError& e) {
        throw ConfigError("bad override \"" + assignment + "\": " + e.what());
    }
    for (const auto& [k, v] : snippet.table(table)) doc_.set(table, k, v);
    validate_schema(doc_);
}

}  // namespace taxocap::config
