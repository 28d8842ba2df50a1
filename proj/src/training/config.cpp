#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "unmask/error.hpp"
#include "unmask/training.hpp"

namespace unmask::training {

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_number(const std::string& text, const std::string& key, const std::string& origin) {
    T value{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError(origin + ": value '" + text + "' of '" + key + "' is not a valid number");
    }
    return value;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
    KeyValueConfig kv;
    kv.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto body = trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(number) + ": expected 'key = value'");
        }
        const auto key = trim(std::string_view(body).substr(0, eq));
        const auto value = trim(std::string_view(body).substr(eq + 1));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(number) + ": empty key");
        if (kv.values_.count(key)) throw ConfigError(origin + ":" + std::to_string(number) + ": duplicate key '" + key + "'");
        kv.values_[key] = value;
    }
    return kv;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str(), path.string());
}

const std::string* KeyValueConfig::lookup(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return nullptr;
    consumed_.insert(key);
    return &it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
    const auto* v = lookup(key);
    return v ? parse_number<double>(*v, key, origin_) : fallback;
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
    const auto* v = lookup(key);
    return v ? parse_number<int>(*v, key, origin_) : fallback;
}

std::int64_t KeyValueConfig::get_int64(const std::string& key, std::int64_t fallback) const {
    const auto* v = lookup(key);
    return v ? parse_number<std::int64_t>(*v, key, origin_) : fallback;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
    const auto* v = lookup(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
    if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
    throw ConfigError(origin_ + ": value '" + *v + "' of '" + key + "' is not a boolean");
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
    const auto* v = lookup(key);
    return v ? *v : fallback;
}

std::vector<int> KeyValueConfig::get_int_list(const std::string& key, const std::vector<int>& fallback) const {
    const auto* v = lookup(key);
    if (!v) return fallback;
    std::vector<int> out;
    std::istringstream in(*v);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(parse_number<int>(trim(item), key, origin_));
    return out;
}

void KeyValueConfig::ensure_consumed() const {
    std::string unknown;
    for (const auto& [key, value] : values_) {
        if (!consumed_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
    }
    if (!unknown.empty()) throw ConfigError(origin_ + ": unknown keys: " + unknown);
}

void OptimizerConfig::validate() const {
    if (!(lr_generator >= 0) || !(lr_discriminator >= 0)) throw ConfigError("learning rates must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (iterations < 0) throw ConfigError("iterations must be non-negative");
    if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be non-negative");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("Adam betas must lie in [0,1)");
}

nlohmann::json OptimizerConfig::to_json() const {
    return {{"beta1", beta1},
            {"beta2", beta2},
            {"lr_generator", lr_generator},
            {"lr_discriminator", lr_discriminator},
            {"batch_size", batch_size},
            {"iterations", iterations},
            {"checkpoint_interval", checkpoint_interval}};
}

OptimizerConfig OptimizerConfig::from_json(const nlohmann::json& j) {
    OptimizerConfig c;
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.lr_generator = j.at("lr_generator").get<double>();
    c.lr_discriminator = j.at("lr_discriminator").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.iterations = j.at("iterations").get<std::int64_t>();
    c.checkpoint_interval = j.value("checkpoint_interval", std::int64_t{0});
    c.validate();
    return c;
}

void InpaintTrainingConfig::validate() const {
    optimizer.validate();
    weights.validate();
    generator.validate();
    discriminator.validate();
}

nlohmann::json InpaintTrainingConfig::to_json() const {
    return {{"optimizer", optimizer.to_json()},
            {"weights", weights.to_json()},
            {"generator", generator.to_json()},
            {"discriminator", discriminator.to_json()},
            {"extractor_seed", extractor_seed}};
}

InpaintTrainingConfig InpaintTrainingConfig::from_json(const nlohmann::json& j) {
    InpaintTrainingConfig c;
    c.optimizer = OptimizerConfig::from_json(j.at("optimizer"));
    c.weights = inpaint::LossWeights::from_json(j.at("weights"));
    c.generator = inpaint::GeneratorConfig::from_json(j.at("generator"));
    c.discriminator = inpaint::DiscriminatorConfig::from_json(j.at("discriminator"));
    c.extractor_seed = j.value("extractor_seed", std::uint64_t{19});
    return c;
}

void apply(const KeyValueConfig& kv, InpaintTrainingConfig& c) {
    auto& o = c.optimizer;
    o.beta1 = kv.get_double("beta1", o.beta1);
    o.beta2 = kv.get_double("beta2", o.beta2);
    o.lr_generator = kv.get_double("lr_generator", o.lr_generator);
    o.lr_discriminator = kv.get_double("lr_discriminator", o.lr_discriminator);
    o.batch_size = kv.get_int("batch_size", o.batch_size);
    o.iterations = kv.get_int64("iterations", o.iterations);
    o.checkpoint_interval = kv.get_int64("checkpoint_interval", o.checkpoint_interval);

    auto& w = c.weights;
    w.perceptual = kv.get_double("lambda_perc", w.perceptual);
    w.style = kv.get_double("lambda_style", w.style);
    w.tv = kv.get_double("lambda_tv", w.tv);
    w.adversarial = kv.get_double("lambda_adv", w.adversarial);

    auto& g = c.generator;
    g.input_size = kv.get_int("image_size", g.input_size);
    g.down_blocks = kv.get_int("down_blocks", g.down_blocks);
    g.dilation_rates = kv.get_int_list("dilation_rates", g.dilation_rates);
    g.dilated_blocks = static_cast<int>(g.dilation_rates.size());
    g.base_channels = kv.get_int("base_channels", g.base_channels);
    g.max_channels = kv.get_int("max_channels", g.max_channels);
    g.attention = kv.get_bool("attention", g.attention);
    g.landmark_sigma = kv.get_double("landmark_sigma", g.landmark_sigma);

    c.discriminator.layers = kv.get_int_list("discriminator_layers", c.discriminator.layers);
    c.discriminator.spectral_norm = kv.get_bool("spectral_norm", c.discriminator.spectral_norm);
    c.extractor_seed = static_cast<std::uint64_t>(kv.get_int64("extractor_seed", static_cast<std::int64_t>(c.extractor_seed)));
    c.validate();
}

void SegmenterTrainConfig::validate() const {
    model.validate();
    if (!(learning_rate > 0)) throw ConfigError("segmenter learning rate must be positive");
    if (batch_size < 1) throw ConfigError("segmenter batch_size must be at least 1");
    if (iterations < 0) throw ConfigError("segmenter iterations must be non-negative");
}

void apply(const KeyValueConfig& kv, SegmenterTrainConfig& c) {
    c.model.input_size = kv.get_int("image_size", c.model.input_size);
    c.model.base_channels = kv.get_int("base_channels", c.model.base_channels);
    c.model.depth = kv.get_int("depth", c.model.depth);
    c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
    c.batch_size = kv.get_int("batch_size", c.batch_size);
    c.iterations = kv.get_int64("iterations", c.iterations);
    c.validate();
}

void LandmarkTrainConfig::validate() const {
    model.validate();
    loss.validate();
    if (!(learning_rate > 0)) throw ConfigError("landmark learning rate must be positive");
    if (batch_size < 1) throw ConfigError("landmark batch_size must be at least 1");
    if (iterations < 0) throw ConfigError("landmark iterations must be non-negative");
    if (!(heatmap_sigma > 0)) throw ConfigError("heatmap_sigma must be positive");
}

void apply(const KeyValueConfig& kv, LandmarkTrainConfig& c) {
    c.model.input_size = kv.get_int("image_size", c.model.input_size);
    c.model.heatmap_size = kv.get_int("heatmap_size", c.model.heatmap_size);
    c.model.num_stacks = kv.get_int("num_stacks", c.model.num_stacks);
    c.model.base_channels = kv.get_int("base_channels", c.model.base_channels);
    c.model.hourglass_depth = kv.get_int("hourglass_depth", c.model.hourglass_depth);
    c.loss.omega = kv.get_double("wing_omega", c.loss.omega);
    c.loss.theta = kv.get_double("wing_theta", c.loss.theta);
    c.loss.epsilon = kv.get_double("wing_epsilon", c.loss.epsilon);
    c.loss.alpha = kv.get_double("wing_alpha", c.loss.alpha);
    c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
    c.batch_size = kv.get_int("batch_size", c.batch_size);
    c.iterations = kv.get_int64("iterations", c.iterations);
    c.heatmap_sigma = kv.get_double("heatmap_sigma", c.heatmap_sigma);
    c.validate();
}

void apply(const KeyValueConfig& kv, gender::GenderClassifierConfig& model, gender::ClassifierTrainOptions& options) {
    model.input_size = kv.get_int("image_size", model.input_size);
    model.backbone = kv.get_string("backbone", model.backbone);
    model.backbone_widths = kv.get_int_list("backbone_widths", model.backbone_widths);
    model.freeze_backbone = kv.get_bool("freeze_backbone", model.freeze_backbone);
    model.head_layers = kv.get_int_list("head_layers", model.head_layers);
    model.threshold = kv.get_double("threshold", model.threshold);
    options.epochs = kv.get_int("epochs", options.epochs);
    options.batch_size = kv.get_int("batch_size", options.batch_size);
    options.learning_rate = kv.get_double("learning_rate", options.learning_rate);
    model.validate();
}

}  // namespace unmask::training
