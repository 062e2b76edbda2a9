#include "fairsinkhorn/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fairsinkhorn/error.hpp"
#include "fairsinkhorn/hashing.hpp"

namespace fairsinkhorn {

namespace {

using json = nlohmann::json;

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

std::string key_label(const std::string& section, const std::string& key) {
    return "[" + section + "] " + key;
}

json parse_json_value(const ParsedConfig& cfg, const std::string& section,
                      const std::string& key) {
    try {
        return json::parse(cfg.get(section, key));
    } catch (const json::parse_error& e) {
        throw ConfigError(key_label(section, key) + " is not valid JSON: " + e.what());
    }
}

// The union of keys any command reads from each section; parsers check the
// sections they consume so misspelled keys fail instead of silently
// falling back to defaults.
const std::map<std::string, std::vector<std::string>>& allowed_keys() {
    static const std::map<std::string, std::vector<std::string>> keys = {
        {"data",
         {"dir", "schema", "train", "val", "test", "out_dir", "n_samples", "image_dim",
          "text_dim", "latent_dim", "attributes", "group_proportions", "group_shift",
          "group_noise_scale", "label_signal_strength", "cross_modal_correlation", "seed",
          "split"}},
        {"model", {"encoder", "embed_dim", "hidden_dim", "temperature"}},
        {"train",
         {"mode", "epochs", "batch_size", "learning_rate", "beta1", "beta2", "weight_decay",
          "adam_epsilon", "adam_preset", "eval_every", "checkpoint_every", "seed", "out_dir"}},
        {"fair",
         {"attribute", "lambda", "group_batch_size", "epsilon", "relative_epsilon", "max_iters",
          "tolerance", "cost", "debias"}},
        {"probe", {"kind", "learning_rate", "epochs", "l2", "seed", "threshold"}},
        {"report",
         {"checkpoint", "out_dir", "model", "prompts", "baseline_dir", "treatment_dir"}},
    };
    return keys;
}

} // namespace

bool ParsedConfig::has(const std::string& section, const std::string& key) const {
    const auto sec = sections.find(section);
    return sec != sections.end() && sec->second.find(key) != sec->second.end();
}

const std::string& ParsedConfig::get(const std::string& section, const std::string& key) const {
    const auto sec = sections.find(section);
    if (sec != sections.end()) {
        const auto it = sec->second.find(key);
        if (it != sec->second.end()) return it->second;
    }
    throw ConfigError("missing required config key " + key_label(section, key));
}

std::string ParsedConfig::get_string(const std::string& section, const std::string& key,
                                     const std::string& fallback) const {
    return has(section, key) ? get(section, key) : fallback;
}

double ParsedConfig::require_double(const std::string& section, const std::string& key) const {
    const std::string& text = get(section, key);
    errno = 0;
    char* end = nullptr;
    const double value = std::strtod(text.c_str(), &end);
    if (end == text.c_str() || *end != '\0' || errno == ERANGE) {
        throw ConfigError(key_label(section, key) + " is not a number: '" + text + "'");
    }
    return value;
}

double ParsedConfig::get_double(const std::string& section, const std::string& key,
                                double fallback) const {
    return has(section, key) ? require_double(section, key) : fallback;
}

std::int64_t ParsedConfig::get_int(const std::string& section, const std::string& key,
                                   std::int64_t fallback) const {
    if (!has(section, key)) return fallback;
    const std::string& text = get(section, key);
    errno = 0;
    char* end = nullptr;
    const long long value = std::strtoll(text.c_str(), &end, 10);
    if (end == text.c_str() || *end != '\0' || errno == ERANGE) {
        throw ConfigError(key_label(section, key) + " is not an integer: '" + text + "'");
    }
    return value;
}

bool ParsedConfig::get_bool(const std::string& section, const std::string& key,
                            bool fallback) const {
    if (!has(section, key)) return fallback;
    const std::string& text = get(section, key);
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw ConfigError(key_label(section, key) + " is not a boolean: '" + text + "'");
}

std::filesystem::path ParsedConfig::get_path(const std::string& section, const std::string& key,
                                             const std::filesystem::path& fallback) const {
    if (!has(section, key)) return fallback;
    std::filesystem::path p = get(section, key);
    if (!p.empty() && p.is_relative()) p = (base_dir / p).lexically_normal();
    return p;
}

std::filesystem::path ParsedConfig::require_path(const std::string& section,
                                                 const std::string& key) const {
    get(section, key); // throws when absent
    return get_path(section, key, {});
}

void ParsedConfig::ensure_known_keys(const std::string& section,
                                     const std::vector<std::string>& allowed) const {
    const auto sec = sections.find(section);
    if (sec == sections.end()) return;
    for (const auto& [key, value] : sec->second) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ConfigError("unknown config key " + key_label(section, key));
        }
    }
}

ParsedConfig parse_config_text(std::string text, const std::filesystem::path& base_dir) {
    ParsedConfig cfg;
    cfg.raw = std::move(text);
    cfg.hash = fnv1a64(cfg.raw.data(), cfg.raw.size());
    cfg.base_dir = base_dir;

    std::istringstream in(cfg.raw);
    std::string line;
    std::string section;
    long line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#' || stripped[0] == ';') continue;
        if (stripped.front() == '[') {
            if (stripped.back() != ']' || stripped.size() < 3) {
                throw ConfigError("config line " + std::to_string(line_number) +
                                  ": malformed section header '" + stripped + "'");
            }
            section = trim(stripped.substr(1, stripped.size() - 2));
            cfg.sections[section]; // section may legitimately stay empty
            continue;
        }
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_number) +
                              ": expected 'key = value', got '" + stripped + "'");
        }
        if (section.empty()) {
            throw ConfigError("config line " + std::to_string(line_number) +
                              ": key outside any [section]");
        }
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(line_number) + ": empty key");
        }
        if (!cfg.sections[section].emplace(key, value).second) {
            throw ConfigError("config line " + std::to_string(line_number) + ": duplicate key " +
                              key_label(section, key));
        }
    }
    return cfg;
}

ParsedConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::filesystem::path base = path.parent_path();
    if (base.empty()) base = ".";
    return parse_config_text(std::move(text), base);
}

GeneratorConfig parse_generator_config(const ParsedConfig& cfg) {
    cfg.ensure_known_keys("data", allowed_keys().at("data"));
    GeneratorConfig gen;
    const std::int64_t n = cfg.get_int("data", "n_samples", -1);
    if (n < 0) throw ConfigError("missing required config key [data] n_samples");
    gen.n_samples = static_cast<std::size_t>(n);
    gen.image_dim = static_cast<int>(cfg.get_int("data", "image_dim", 16));
    gen.text_dim = static_cast<int>(cfg.get_int("data", "text_dim", 16));
    gen.latent_dim = static_cast<int>(cfg.get_int("data", "latent_dim", 8));
    gen.label_signal_strength = cfg.get_double("data", "label_signal_strength", 1.0);
    gen.cross_modal_correlation = cfg.get_double("data", "cross_modal_correlation", 1.0);
    gen.seed = static_cast<std::uint64_t>(cfg.get_int("data", "seed", 0));

    const json attrs = parse_json_value(cfg, "data", "attributes");
    if (!attrs.is_array() || attrs.empty()) {
        throw ConfigError("[data] attributes must be a non-empty JSON array");
    }
    for (const json& a : attrs) {
        if (!a.is_object() || !a.contains("name") || !a.contains("levels")) {
            throw ConfigError("[data] attributes entries need 'name' and 'levels'");
        }
        AttributeSchema::Attribute attr;
        attr.name = a["name"].get<std::string>();
        for (const json& level : a["levels"]) attr.levels.push_back(level.get<std::string>());
        gen.schema.attributes.push_back(std::move(attr));
    }

    const json props = parse_json_value(cfg, "data", "group_proportions");
    if (!props.is_array()) throw ConfigError("[data] group_proportions must be a JSON array");
    for (const json& p : props) gen.group_proportions.push_back(p.get<double>());

    const std::size_t levels = gen.schema.attributes.front().levels.size();
    if (cfg.has("data", "group_shift")) {
        const json shifts = parse_json_value(cfg, "data", "group_shift");
        if (!shifts.is_array()) throw ConfigError("[data] group_shift must be a JSON array");
        for (const json& row : shifts) {
            Eigen::VectorXd v(static_cast<Eigen::Index>(row.size()));
            Eigen::Index i = 0;
            for (const json& x : row) v[i++] = x.get<double>();
            gen.group_shift.push_back(std::move(v));
        }
    } else {
        gen.group_shift.assign(levels, Eigen::VectorXd::Zero(gen.latent_dim));
    }
    if (cfg.has("data", "group_noise_scale")) {
        const json scales = parse_json_value(cfg, "data", "group_noise_scale");
        for (const json& s : scales) gen.group_noise_scale.push_back(s.get<double>());
    } else {
        gen.group_noise_scale.assign(levels, 1.0);
    }

    gen.validate();
    return gen;
}

std::vector<double> parse_split_fractions(const ParsedConfig& cfg) {
    std::vector<double> split = {0.7, 0.1, 0.2};
    if (cfg.has("data", "split")) {
        const json arr = parse_json_value(cfg, "data", "split");
        if (!arr.is_array() || arr.size() != 3) {
            throw ConfigError("[data] split must be a JSON array of three fractions");
        }
        for (std::size_t i = 0; i < 3; ++i) split[i] = arr[i].get<double>();
    }
    double total = 0.0;
    for (double f : split) {
        if (f < 0.0) throw ConfigError("[data] split fractions must be non-negative");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("[data] split fractions must sum to 1");
    return split;
}

namespace {

std::filesystem::path dataset_file(const ParsedConfig& cfg, const std::string& key,
                                   const char* standard_name) {
    if (cfg.has("data", key)) return cfg.require_path("data", key);
    if (cfg.has("data", "dir")) {
        return cfg.require_path("data", "dir") / standard_name;
    }
    return {};
}

} // namespace

RunConfig parse_run_config(const ParsedConfig& cfg) {
    cfg.ensure_known_keys("data", allowed_keys().at("data"));
    cfg.ensure_known_keys("model", allowed_keys().at("model"));
    cfg.ensure_known_keys("train", allowed_keys().at("train"));
    cfg.ensure_known_keys("fair", allowed_keys().at("fair"));

    RunConfig run;
    run.mode = cfg.get_string("train", "mode", "clip");
    run.schema_path = dataset_file(cfg, "schema", "schema.json");
    run.train_path = dataset_file(cfg, "train", "train.jsonl");
    run.val_path = dataset_file(cfg, "val", "val.jsonl");
    run.test_path = dataset_file(cfg, "test", "test.jsonl");

    run.encoder_kind =
        encoder_kind_from_string(cfg.get_string("model", "encoder", "linear"));
    run.embed_dim = static_cast<int>(cfg.get_int("model", "embed_dim", 16));
    run.hidden_dim = static_cast<int>(cfg.get_int("model", "hidden_dim", 32));
    run.temperature = cfg.get_double("model", "temperature", 0.07);

    run.epochs = static_cast<int>(cfg.get_int("train", "epochs", 10));
    run.eval_every = static_cast<int>(cfg.get_int("train", "eval_every", 1));
    run.checkpoint_every = static_cast<int>(cfg.get_int("train", "checkpoint_every", 0));
    run.seed = static_cast<std::uint64_t>(cfg.get_int("train", "seed", 0));
    run.out_dir = cfg.get_path("train", "out_dir", "run");

    const std::string preset = cfg.get_string("train", "adam_preset", "default");
    if (preset == "fairclip") {
        run.adam = fairclip_preset();
    } else if (preset != "default") {
        throw ConfigError("[train] adam_preset must be 'default' or 'fairclip'");
    }
    run.adam.learning_rate = cfg.get_double("train", "learning_rate", run.adam.learning_rate);
    run.adam.beta1 = cfg.get_double("train", "beta1", run.adam.beta1);
    run.adam.beta2 = cfg.get_double("train", "beta2", run.adam.beta2);
    run.adam.weight_decay = cfg.get_double("train", "weight_decay", run.adam.weight_decay);
    run.adam.epsilon = cfg.get_double("train", "adam_epsilon", run.adam.epsilon);

    run.batch.batch_size = static_cast<std::size_t>(cfg.get_int("train", "batch_size", 32));
    run.batch.group_batch_size =
        static_cast<std::size_t>(cfg.get_int("fair", "group_batch_size", 32));
    run.batch.seed = run.seed;

    run.attribute_name = cfg.get_string("fair", "attribute", "");
    run.fair.attribute_name = run.attribute_name;
    run.fair.group_batch_size = static_cast<int>(run.batch.group_batch_size);
    run.fair.lambda_fair = cfg.get_double("fair", "lambda", 1e-7);
    run.fair.sinkhorn.epsilon = cfg.get_double("fair", "epsilon", 0.1);
    run.fair.sinkhorn.relative_epsilon = cfg.get_bool("fair", "relative_epsilon", true);
    run.fair.sinkhorn.max_iters = static_cast<int>(cfg.get_int("fair", "max_iters", 1000));
    run.fair.sinkhorn.tolerance = cfg.get_double("fair", "tolerance", 1e-6);
    run.fair.sinkhorn.cost_kind =
        cost_kind_from_string(cfg.get_string("fair", "cost", "squared"));
    run.fair.sinkhorn.debias = cfg.get_bool("fair", "debias", false);

    if (run.mode == "clip") run.fair.lambda_fair = 0.0;

    run.validate();
    return run;
}

void RunConfig::validate() const {
    if (mode != "clip" && mode != "fairclip") {
        throw ConfigError("[train] mode must be 'clip' or 'fairclip'");
    }
    if (mode == "clip" && fair.lambda_fair != 0.0) {
        throw ConfigError("mode 'clip' requires lambda_fair == 0");
    }
    if (mode == "fairclip" && attribute_name.empty()) {
        throw ConfigError("mode 'fairclip' requires [fair] attribute");
    }
    if (embed_dim <= 0) throw ConfigError("[model] embed_dim must be positive");
    if (encoder_kind == EncoderKind::mlp1 && hidden_dim <= 0) {
        throw ConfigError("[model] hidden_dim must be positive for mlp1");
    }
    if (!(temperature > 0.0)) throw ConfigError("[model] temperature must be positive");
    if (epochs < 0) throw ConfigError("[train] epochs must be non-negative");
    if (eval_every < 0 || checkpoint_every < 0) {
        throw ConfigError("[train] eval_every/checkpoint_every must be non-negative");
    }
    batch.validate();
    fair.validate();
    adam.validate();
}

ProbeConfig parse_probe_config(const ParsedConfig& cfg) {
    cfg.ensure_known_keys("probe", allowed_keys().at("probe"));
    ProbeConfig probe;
    probe.kind = cfg.get_string("probe", "kind", "logistic");
    probe.learning_rate = cfg.get_double("probe", "learning_rate", 0.1);
    probe.epochs = static_cast<int>(cfg.get_int("probe", "epochs", 500));
    probe.l2 = cfg.get_double("probe", "l2", 1e-4);
    probe.seed = static_cast<std::uint64_t>(cfg.get_int("probe", "seed", 0));
    probe.threshold = cfg.get_double("probe", "threshold", 0.5);
    probe.validate();
    return probe;
}

void ProbeConfig::validate() const {
    if (kind != "logistic") throw ConfigError("[probe] kind must be 'logistic'");
    if (!(learning_rate > 0.0)) throw ConfigError("[probe] learning_rate must be positive");
    if (epochs < 0) throw ConfigError("[probe] epochs must be non-negative");
    if (l2 < 0.0) throw ConfigError("[probe] l2 must be non-negative");
}

ReportConfig parse_report_config(const ParsedConfig& cfg) {
    cfg.ensure_known_keys("report", allowed_keys().at("report"));
    ReportConfig report;
    report.checkpoint = cfg.get_path("report", "checkpoint", {});
    report.out_dir = cfg.get_path("report", "out_dir", "report");
    report.model_name = cfg.get_string("report", "model", "model");
    report.prompts_path = cfg.get_path("report", "prompts", {});
    report.baseline_dir = cfg.get_path("report", "baseline_dir", {});
    report.treatment_dir = cfg.get_path("report", "treatment_dir", {});
    return report;
}

namespace {

std::string render_double(double v) {
    char buffer[40];
    std::snprintf(buffer, sizeof buffer, "%.17g", v);
    return buffer;
}

} // namespace

std::string render_run_config(const RunConfig& cfg) {
    std::ostringstream out;
    out << "[data]\n";
    const auto path_line = [&out](const char* key, const std::filesystem::path& p) {
        if (!p.empty()) out << key << " = " << p.string() << "\n";
    };
    path_line("schema", cfg.schema_path);
    path_line("train", cfg.train_path);
    path_line("val", cfg.val_path);
    path_line("test", cfg.test_path);
    out << "\n[model]\n";
    out << "encoder = " << to_string(cfg.encoder_kind) << "\n";
    out << "embed_dim = " << cfg.embed_dim << "\n";
    out << "hidden_dim = " << cfg.hidden_dim << "\n";
    out << "temperature = " << render_double(cfg.temperature) << "\n";
    out << "\n[train]\n";
    out << "mode = " << cfg.mode << "\n";
    out << "epochs = " << cfg.epochs << "\n";
    out << "batch_size = " << cfg.batch.batch_size << "\n";
    out << "learning_rate = " << render_double(cfg.adam.learning_rate) << "\n";
    out << "beta1 = " << render_double(cfg.adam.beta1) << "\n";
    out << "beta2 = " << render_double(cfg.adam.beta2) << "\n";
    out << "weight_decay = " << render_double(cfg.adam.weight_decay) << "\n";
    out << "adam_epsilon = " << render_double(cfg.adam.epsilon) << "\n";
    out << "eval_every = " << cfg.eval_every << "\n";
    out << "checkpoint_every = " << cfg.checkpoint_every << "\n";
    out << "seed = " << cfg.seed << "\n";
    out << "out_dir = " << cfg.out_dir.string() << "\n";
    out << "\n[fair]\n";
    if (!cfg.attribute_name.empty()) out << "attribute = " << cfg.attribute_name << "\n";
    out << "lambda = " << render_double(cfg.fair.lambda_fair) << "\n";
    out << "group_batch_size = " << cfg.batch.group_batch_size << "\n";
    out << "epsilon = " << render_double(cfg.fair.sinkhorn.epsilon) << "\n";
    out << "relative_epsilon = " << (cfg.fair.sinkhorn.relative_epsilon ? "true" : "false")
        << "\n";
    out << "max_iters = " << cfg.fair.sinkhorn.max_iters << "\n";
    out << "tolerance = " << render_double(cfg.fair.sinkhorn.tolerance) << "\n";
    out << "cost = " << to_string(cfg.fair.sinkhorn.cost_kind) << "\n";
    out << "debias = " << (cfg.fair.sinkhorn.debias ? "true" : "false") << "\n";
    return out.str();
}

} // namespace fairsinkhorn
