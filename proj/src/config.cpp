#include "tvgcn/config.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace tvgcn {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

#define TVGCN_CONFIG_FIELDS(X)                                                                          \
    X(seed) X(views) X(normalize_views) X(backbone) X(aggregator) X(feature_dim) X(selector_hidden) X(n_neighbors) X(levels) \
    X(slope) X(view_loss_weight) X(batch_size) X(backbone_epochs) X(backbone_lr) X(lr_step_epochs)       \
    X(epochs) X(finetune_backbone_lr) X(gcn_lr) X(momentum) X(weight_decay) X(sets_per_class)             \
    X(dataset) X(out) X(backbone_checkpoint) X(checkpoint) X(resume) X(classes) X(frames_per_class)       \
    X(test_frames_per_class) X(trials) X(confusion)

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
#define X(name) keys.push_back(#name);
    TVGCN_CONFIG_FIELDS(X)
#undef X
    return keys;
}

namespace {

ojson to_ojson(const RunConfig& c) {
    ojson j;
#define X(name) j[#name] = c.name;
    TVGCN_CONFIG_FIELDS(X)
#undef X
    return j;
}

template <typename V>
void read_field(const ojson& j, const char* key, V& field) {
    if (!j.contains(key)) return;
    try {
        field = j.at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
        throw config_error(std::string("config: field '") + key + "' has the wrong type");
    }
}

RunConfig from_ojson(const ojson& j) {
    if (!j.is_object()) throw config_error("config: expected a JSON object");
    const auto keys = config_keys();
    for (const auto& [key, value] : j.items())
        if (std::find(keys.begin(), keys.end(), key) == keys.end())
            throw config_error("config: unknown field '" + key + "'");
    RunConfig c;
#define X(name) read_field(j, #name, c.name);
    TVGCN_CONFIG_FIELDS(X)
#undef X
    c.validate();
    return c;
}

template <typename V>
V parse_as(const std::string& key, const std::string& text) {
    V v{};
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end)
        throw config_error("config: cannot parse '" + text + "' for --" + key);
    return v;
}

template <typename V>
void set_from_text(V& field, const std::string& key, const std::string& text) {
    if constexpr (std::is_same_v<V, std::string>) {
        field = text;
    } else if constexpr (std::is_same_v<V, bool>) {
        if (text == "true" || text == "1") field = true;
        else if (text == "false" || text == "0") field = false;
        else throw config_error("config: cannot parse '" + text + "' for --" + key);
    } else if constexpr (std::is_floating_point_v<V>) {
        std::istringstream in(text);
        V v{};
        if (!(in >> v) || !in.eof()) throw config_error("config: cannot parse '" + text + "' for --" + key);
        field = v;
    } else {
        if (!text.empty() && text[0] == '-') throw config_error("config: --" + key + " must be non-negative");
        field = parse_as<V>(key, text);
    }
}

} // namespace

void RunConfig::validate() const {
    if (views != "cube8" && views != "circular12")
        throw config_error("config: field 'views' must be cube8 or circular12, got '" + views + "'");
    try {
        parse_backbone_preset(backbone);
    } catch (const std::exception&) {
        throw config_error("config: field 'backbone' must be resnet18 or tiny, got '" + backbone + "'");
    }
    if (aggregator != "gcn" && aggregator != "maxpool")
        throw config_error("config: field 'aggregator' must be gcn or maxpool, got '" + aggregator + "'");
    if (batch_size < 2) throw config_error("config: field 'batch_size' must be at least 2");
    if (n_neighbors != 0 && n_neighbors > view_count() - 1)
        throw config_error("config: field 'n_neighbors' must be at most " + std::to_string(view_count() - 1));
    if (levels < 1) throw config_error("config: field 'levels' must be positive");
    if (lr_step_epochs < 1) throw config_error("config: field 'lr_step_epochs' must be positive");
    for (auto [name, v] : {std::pair{"backbone_lr", backbone_lr}, std::pair{"finetune_backbone_lr", finetune_backbone_lr},
                           std::pair{"gcn_lr", gcn_lr}, std::pair{"weight_decay", weight_decay}})
        if (!(v >= 0.0)) throw config_error(std::string("config: field '") + name + "' must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw config_error("config: field 'momentum' must lie in [0, 1)");
    if (trials < 1) throw config_error("config: field 'trials' must be positive");
    if (classes < 2) throw config_error("config: field 'classes' must be at least 2");
}

std::vector<Vec3> RunConfig::viewpoints() const {
    auto v = views == "cube8" ? cube_viewpoints() : circular_viewpoints(12);
    return normalize_views ? normalize_viewpoints(v) : v;
}

std::size_t RunConfig::view_count() const { return views == "cube8" ? 8 : 12; }

std::size_t RunConfig::effective_neighbors() const {
    if (n_neighbors != 0) return n_neighbors;
    return views == "cube8" ? 3 : 2;
}

BackboneConfig RunConfig::backbone_config(std::size_t num_classes) const {
    auto b = BackboneConfig::for_preset(parse_backbone_preset(backbone), num_classes);
    if (feature_dim != 0) b.feature_dim = feature_dim;
    b.validate();
    return b;
}

GcnConfig RunConfig::gcn_config(std::size_t num_classes) const {
    GcnConfig g;
    g.feature_dim = backbone_config(num_classes).feature_dim;
    g.selector_hidden = selector_hidden;
    g.num_classes = num_classes;
    g.num_views = view_count();
    g.levels = levels;
    g.n_neighbors = effective_neighbors();
    g.slope = slope;
    g.view_loss_weight = view_loss_weight;
    g.validate();
    return g;
}

fs::path RunConfig::backbone_checkpoint_path() const {
    return backbone_checkpoint.empty() ? fs::path(out) / "backbone.tvgc" : fs::path(backbone_checkpoint);
}

fs::path RunConfig::checkpoint_path() const {
    return checkpoint.empty() ? fs::path(out) / "model.tvgc" : fs::path(checkpoint);
}

fs::path RunConfig::confusion_path() const {
    return confusion.empty() ? fs::path(out) / "confusion.csv" : fs::path(confusion);
}

std::string config_to_json(const RunConfig& config) { return to_ojson(config).dump(2); }

RunConfig config_from_json(const std::string& text) {
    ojson j;
    try {
        j = ojson::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("config: malformed JSON: ") + e.what());
    }
    return from_ojson(j);
}

RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw config_error("config: cannot open " + path.string());
    std::stringstream text;
    text << in.rdbuf();
    return config_from_json(text.str());
}

void apply_override(RunConfig& config, const std::string& key, const std::string& value) {
    bool found = false;
#define X(name)                                          \
    if (key == #name) {                                  \
        set_from_text(config.name, key, value);          \
        found = true;                                    \
    }
    TVGCN_CONFIG_FIELDS(X)
#undef X
    if (!found) throw config_error("config: unknown field '" + key + "'");
}

} // namespace tvgcn
