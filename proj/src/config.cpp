#include "hyperfscil/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <system_error>

#include "hyperfscil/errors.hpp"

namespace hyperfscil {

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError(key + ": expected a natural number, got '" + v + "'");
    return out;
}

std::size_t to_size(const std::string& key, const std::string& v) { return static_cast<std::size_t>(to_u64(key, v)); }

double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const char* first = v.data();
    if (!v.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, v.data() + v.size(), out);
    if (v.empty() || ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out))
        throw ConfigError(key + ": expected a finite number, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    if (trim(v).empty()) return out;
    std::size_t start = 0;
    while (true) {
        const auto pos = v.find(',', start);
        out.push_back(trim(std::string_view(v).substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

std::vector<std::size_t> to_dims(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(v)) out.push_back(to_size(key, item));
    return out;
}

std::string from_dims(const std::vector<std::size_t>& dims) {
    std::string out;
    for (std::size_t i = 0; i < dims.size(); ++i) out += (i ? "," : "") + std::to_string(dims[i]);
    return out;
}

// "epoch:multiplier,epoch:multiplier".
std::vector<LrMilestone> to_milestones(const std::string& key, const std::string& v) {
    std::vector<LrMilestone> out;
    for (const auto& item : split_list(v)) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw ConfigError(key + ": milestone '" + item + "' must be epoch:multiplier");
        const auto epoch = to_u64(key, trim(std::string_view(item).substr(0, colon)));
        out.push_back({static_cast<int>(epoch), to_double(key, trim(std::string_view(item).substr(colon + 1)))});
    }
    return out;
}

std::string from_milestones(const std::vector<LrMilestone>& ms) {
    std::string out;
    for (std::size_t i = 0; i < ms.size(); ++i)
        out += (i ? "," : "") + std::to_string(ms[i].epoch) + ":" + format_double(ms[i].multiplier);
    return out;
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

struct Field {
    const char* key;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define HF_SIZE(KEY, MEMBER)                                                                          \
    Field{KEY, [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); },                     \
          [](ExperimentConfig& c, const std::string& v) { c.MEMBER = to_size(KEY, v); }}
#define HF_DOUBLE(KEY, MEMBER)                                                                        \
    Field{KEY, [](const ExperimentConfig& c) { return format_double(c.MEMBER); },                      \
          [](ExperimentConfig& c, const std::string& v) { c.MEMBER = to_double(KEY, v); }}
#define HF_BOOL(KEY, MEMBER)                                                                          \
    Field{KEY, [](const ExperimentConfig& c) { return from_bool(c.MEMBER); },                          \
          [](ExperimentConfig& c, const std::string& v) { c.MEMBER = to_bool(KEY, v); }}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        Field{"seed", [](const ExperimentConfig& c) { return std::to_string(c.seed); },
              [](ExperimentConfig& c, const std::string& v) { c.seed = to_u64("seed", v); }},
        Field{"data.path", [](const ExperimentConfig& c) { return c.data_path; },
              [](ExperimentConfig& c, const std::string& v) { c.data_path = v; }},
        HF_SIZE("data.classes", synthetic.classes),
        HF_SIZE("data.train_per_class", synthetic.train_per_class),
        HF_SIZE("data.test_per_class", synthetic.test_per_class),
        HF_SIZE("data.dim", synthetic.dim),
        HF_DOUBLE("data.separation", synthetic.separation),
        Field{"data.seed", [](const ExperimentConfig& c) { return std::to_string(c.synthetic.seed); },
              [](ExperimentConfig& c, const std::string& v) { c.synthetic.seed = to_u64("data.seed", v); }},
        HF_BOOL("data.standardize", standardize),
        HF_SIZE("protocol.base_classes", base_classes),
        HF_SIZE("protocol.ways", ways),
        HF_SIZE("protocol.shots", shots),
        HF_SIZE("protocol.sessions", sessions),
        Field{"backbone.hidden_dims", [](const ExperimentConfig& c) { return from_dims(c.model.backbone.hidden_dims); },
              [](ExperimentConfig& c, const std::string& v) {
                  c.model.backbone.hidden_dims = to_dims("backbone.hidden_dims", v);
              }},
        HF_SIZE("backbone.embed_dim", model.backbone.embed_dim),
        Field{"backbone.activation", [](const ExperimentConfig&) { return std::string("relu"); },
              [](ExperimentConfig& c, const std::string& v) {
                  if (v != "relu") throw ConfigError("backbone.activation: only 'relu' is supported, got '" + v + "'");
                  c.model.backbone.activation = Activation::relu;
              }},
        HF_BOOL("backbone.activate_output", model.backbone.activate_output),
        HF_SIZE("backbone.frozen_prefix_layers", model.backbone.frozen_prefix_layers),
        HF_DOUBLE("curvature", model.ball.curvature),
        HF_DOUBLE("boundary_eps", model.ball.boundary_eps),
        HF_DOUBLE("beta", model.rpl.beta),
        HF_DOUBLE("lambda_open", model.rpl.lambda_open),
        HF_DOUBLE("threshold", model.rpl.threshold),
        HF_SIZE("points_per_class", model.base_train.points_per_class),
        Field{"rpl.geometry",
              [](const ExperimentConfig& c) {
                  return std::string(c.model.base_train.geometry == RplGeometry::integrated ? "integrated"
                                                                                              : "euclidean_only");
              },
              [](ExperimentConfig& c, const std::string& v) {
                  if (v == "integrated") c.model.base_train.geometry = RplGeometry::integrated;
                  else if (v == "euclidean_only") c.model.base_train.geometry = RplGeometry::euclidean_only;
                  else throw ConfigError("rpl.geometry: expected integrated or euclidean_only, got '" + v + "'");
              }},
        HF_SIZE("base.epochs", model.base_train.epochs),
        HF_SIZE("base.batch_size", model.base_train.batch_size),
        HF_DOUBLE("base.lr", model.base_train.sgd.base_lr),
        HF_DOUBLE("base.weight_decay", model.base_train.sgd.weight_decay),
        HF_DOUBLE("base.momentum", model.base_train.sgd.momentum),
        Field{"base.milestones", [](const ExperimentConfig& c) { return from_milestones(c.model.base_train.sgd.milestones); },
              [](ExperimentConfig& c, const std::string& v) {
                  c.model.base_train.sgd.milestones = to_milestones("base.milestones", v);
              }},
        HF_DOUBLE("base.clip_norm", model.base_train.sgd.clip_norm),
        HF_DOUBLE("tau", model.incremental_loss.tau),
        HF_DOUBLE("eta", model.incremental_loss.eta),
        HF_DOUBLE("zeta_base", model.incremental_loss.zeta_base),
        HF_SIZE("metric.pairs_per_epoch", model.incremental_loss.pairs_per_epoch),
        HF_SIZE("metric_start_session", model.incremental_train.metric_start_session),
        HF_SIZE("metric_start_epoch", model.incremental_train.metric_start_epoch),
        HF_SIZE("exemplar_budget", model.incremental_train.exemplar_budget),
        HF_BOOL("replay", model.incremental_train.replay),
        HF_BOOL("hyperbolic_nme", model.incremental_train.hyperbolic_nme),
        HF_SIZE("inc.epochs", model.incremental_train.epochs),
        HF_SIZE("inc.batch_size", model.incremental_train.batch_size),
        HF_DOUBLE("inc.lr", model.incremental_train.sgd.base_lr),
        HF_DOUBLE("inc.weight_decay", model.incremental_train.sgd.weight_decay),
        HF_DOUBLE("inc.momentum", model.incremental_train.sgd.momentum),
        Field{"inc.milestones",
              [](const ExperimentConfig& c) { return from_milestones(c.model.incremental_train.sgd.milestones); },
              [](ExperimentConfig& c, const std::string& v) {
                  c.model.incremental_train.sgd.milestones = to_milestones("inc.milestones", v);
              }},
        HF_DOUBLE("inc.clip_norm", model.incremental_train.sgd.clip_norm),
        Field{"out_dir", [](const ExperimentConfig& c) { return c.out_dir; },
              [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; }},
    };
    return table;
}

#undef HF_SIZE
#undef HF_DOUBLE
#undef HF_BOOL

template <class F>
void checked(const std::string& scope, F&& f) {
    try {
        f();
    } catch (const ConfigError& e) {
        throw ConfigError(scope + ": " + e.what());
    }
}

} // namespace

void ExperimentConfig::validate() const {
    if (data_path.empty()) {
        if (synthetic.classes == 0) throw ConfigError("data.classes must be >= 1");
        if (synthetic.train_per_class == 0) throw ConfigError("data.train_per_class must be >= 1");
        if (synthetic.test_per_class == 0) throw ConfigError("data.test_per_class must be >= 1");
        if (synthetic.dim == 0) throw ConfigError("data.dim must be >= 1");
        if (!(synthetic.separation >= 0.0)) throw ConfigError("data.separation must be >= 0");
    }
    if (base_classes == 0) throw ConfigError("protocol.base_classes must be >= 1");
    if (sessions > 0 && ways == 0) throw ConfigError("protocol.ways must be >= 1 when protocol.sessions > 0");
    if (sessions > 0 && shots == 0) throw ConfigError("protocol.shots must be >= 1 when protocol.sessions > 0");
    if (data_path.empty()) {
        const std::size_t needed = base_classes + ways * sessions;
        if (synthetic.classes < needed)
            throw ConfigError("data.classes must be >= protocol.base_classes + protocol.ways * protocol.sessions (" +
                              std::to_string(needed) + ")");
        if (sessions > 0 && synthetic.train_per_class < shots)
            throw ConfigError("data.train_per_class must be >= protocol.shots");
    }
    checked("backbone", [&] { model.backbone.validate(); });
    checked("ball", [&] { model.ball.validate(); });
    checked("rpl", [&] { model.rpl.validate(); });
    checked("metric", [&] { model.incremental_loss.validate(); });
    checked("base", [&] { model.base_train.sgd.validate(); });
    checked("inc", [&] { model.incremental_train.sgd.validate(); });
    if (model.base_train.epochs == 0) throw ConfigError("base.epochs must be >= 1");
    if (model.base_train.batch_size == 0) throw ConfigError("base.batch_size must be >= 1");
    if (model.base_train.points_per_class == 0) throw ConfigError("points_per_class must be >= 1");
    if (model.incremental_train.exemplar_budget == 0) throw ConfigError("exemplar_budget must be >= 1");
    if (model.incremental_train.metric_start_session == 0) throw ConfigError("metric_start_session must be >= 1");
}

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.emplace_back(f.key);
    return out;
}

ConfigEntries config_entries(const ExperimentConfig& cfg) {
    ConfigEntries out;
    for (const auto& f : fields()) out.emplace_back(f.key, f.get(cfg));
    return out;
}

ExperimentConfig config_from_entries(const ConfigEntries& entries) {
    ExperimentConfig cfg;
    std::set<std::string> seen;
    for (const auto& [key, value] : entries) {
        const Field* field = nullptr;
        for (const auto& f : fields())
            if (key == f.key) field = &f;
        if (!field) throw ConfigError("unknown key '" + key + "'");
        if (!seen.insert(key).second) throw ConfigError("key '" + key + "' given more than once");
        field->set(cfg, value);
    }
    cfg.model.backbone.input_dim = cfg.synthetic.dim;
    cfg.validate();
    return cfg;
}

ExperimentConfig parse_config_text(const std::string& text) {
    ConfigEntries entries;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        const std::string body = trim(std::string_view(line).substr(0, hash));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = trim(std::string_view(body).substr(0, eq));
        if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": missing key");
        entries.emplace_back(key, trim(std::string_view(body).substr(eq + 1)));
    }
    return config_from_entries(entries);
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::string format_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& [key, value] : config_entries(cfg)) out += key + " = " + value + "\n";
    return out;
}

} // namespace hyperfscil
