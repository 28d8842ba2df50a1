#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <ATen/CPUGeneratorImpl.h>

#include "unmask/error.hpp"
#include "unmask/training.hpp"

namespace unmask::training {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'U', 'N', 'M', 'A', 'S', 'K', 'C', 'K'};
constexpr std::size_t kPreambleSize = sizeof(kMagic) + 4 + 8;

template <typename T>
void put_le(std::string& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const char* p) {
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(static_cast<unsigned char>(p[i])) << (8 * i);
    return value;
}

void append_floats(std::string& out, const torch::Tensor& t) {
    const auto data = t.detach().to(torch::kCPU).to(torch::kFloat).contiguous();
    const auto* p = data.data_ptr<float>();
    for (std::int64_t i = 0; i < data.numel(); ++i) put_le(out, std::bit_cast<std::uint32_t>(p[i]));
}

class SeedGuard {
public:
    SeedGuard() : state_(at::detail::getDefaultCPUGenerator().get_state()) {}
    ~SeedGuard() {
        auto gen = at::detail::getDefaultCPUGenerator();
        gen.set_state(state_);
    }

private:
    torch::Tensor state_;
};

std::vector<NamedTensor> module_tensors(const std::string& prefix, const torch::nn::Module& module) {
    std::vector<NamedTensor> out;
    for (const auto& p : module.named_parameters()) out.push_back({prefix + "param." + p.key(), p.value()});
    for (const auto& b : module.named_buffers()) out.push_back({prefix + "buffer." + b.key(), b.value()});
    return out;
}

// Checks every tensor before touching the module so a bad file leaves it intact.
void load_module(const Container& c, const std::string& prefix, torch::nn::Module& module) {
    auto targets = module_tensors(prefix, module);
    for (const auto& t : targets) {
        const auto& src = c.at(t.name);
        if (src.sizes() != t.tensor.sizes()) {
            throw CheckpointError("tensor '" + t.name + "' has shape " + c10::str(src.sizes()) + ", model expects " +
                                  c10::str(t.tensor.sizes()));
        }
    }
    torch::NoGradGuard guard;
    for (auto& t : targets) t.tensor.copy_(c.at(t.name).to(t.tensor.dtype()));
}

void require_kind(const Container& c, const std::string& kind) {
    const auto actual = c.header.value("kind", std::string{});
    if (actual != kind) throw CheckpointError("checkpoint holds a '" + actual + "' model, expected '" + kind + "'");
}

template <typename Config>
Config config_from(const Container& c) {
    try {
        return Config::from_json(c.header.at("config"));
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint config is invalid: ") + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint config is malformed: ") + e.what());
    }
}

nlohmann::json adam_steps(const torch::optim::Adam& optimizer, const std::vector<torch::Tensor>& params,
                          const std::string& prefix, std::vector<NamedTensor>& tensors) {
    nlohmann::json steps = nlohmann::json::array();
    auto& state = const_cast<torch::optim::Adam&>(optimizer).state();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto it = state.find(params[i].unsafeGetTensorImpl());
        if (it == state.end()) {
            steps.push_back(0);
            continue;
        }
        const auto& s = static_cast<const torch::optim::AdamParamState&>(*it->second);
        steps.push_back(s.step());
        tensors.push_back({prefix + std::to_string(i) + ".exp_avg", s.exp_avg()});
        tensors.push_back({prefix + std::to_string(i) + ".exp_avg_sq", s.exp_avg_sq()});
    }
    return steps;
}

void check_adam(const Container& c, const nlohmann::json& steps, const std::vector<torch::Tensor>& params,
                const std::string& prefix) {
    if (!steps.is_array() || steps.size() != params.size()) {
        throw CheckpointError("optimizer state for '" + prefix + "' does not match the parameter count");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (steps[i].get<std::int64_t>() == 0) continue;
        for (const char* slot : {".exp_avg", ".exp_avg_sq"}) {
            if (c.at(prefix + std::to_string(i) + slot).sizes() != params[i].sizes()) {
                throw CheckpointError("optimizer moment " + prefix + std::to_string(i) + slot + " has the wrong shape");
            }
        }
    }
}

void restore_adam(const Container& c, const nlohmann::json& steps, torch::optim::Adam& optimizer,
                  const std::vector<torch::Tensor>& params, const std::string& prefix) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto step = steps[i].get<std::int64_t>();
        if (step == 0) continue;
        auto s = std::make_unique<torch::optim::AdamParamState>();
        s->step(step);
        s->exp_avg(c.at(prefix + std::to_string(i) + ".exp_avg").to(params[i].dtype()).clone());
        s->exp_avg_sq(c.at(prefix + std::to_string(i) + ".exp_avg_sq").to(params[i].dtype()).clone());
        optimizer.state()[params[i].unsafeGetTensorImpl()] = std::move(s);
    }
}

void save_model(const std::string& kind, const nlohmann::json& config, const torch::nn::Module& module,
                const fs::path& path) {
    write_container(path, {{"kind", kind}, {"config", config}}, module_tensors("", module));
}

}  // namespace

const torch::Tensor& Container::at(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return t.tensor;
    throw CheckpointError("checkpoint is missing tensor '" + name + "'");
}

void write_container(const fs::path& path, const nlohmann::json& header, const std::vector<NamedTensor>& tensors) {
    nlohmann::json full = header;
    full["tensors"] = nlohmann::json::array();
    std::string data;
    for (const auto& t : tensors) {
        full["tensors"].push_back({{"name", t.name}, {"shape", t.tensor.sizes().vec()}, {"offset", data.size()}});
        append_floats(data, t.tensor);
    }
    const auto header_text = full.dump();

    std::string out(kMagic, sizeof(kMagic));
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint64_t>(out, header_text.size());
    out += header_text;
    out += data;

    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write " + tmp.string());
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw IoError("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

Container read_container(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read checkpoint " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const auto where = path.string() + ": ";

    if (bytes.size() < kPreambleSize || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError(where + "not a checkpoint file");
    }
    const auto version = get_le<std::uint32_t>(bytes.data() + sizeof(kMagic));
    if (version != kCheckpointVersion) {
        throw CheckpointError(where + "version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    const auto header_len = get_le<std::uint64_t>(bytes.data() + sizeof(kMagic) + 4);
    if (header_len > bytes.size() - kPreambleSize) throw CheckpointError(where + "truncated header");

    Container c;
    try {
        c.header = nlohmann::json::parse(bytes.begin() + kPreambleSize, bytes.begin() + kPreambleSize + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(where + "corrupt header: " + e.what());
    }
    const char* data = bytes.data() + kPreambleSize + header_len;
    const std::size_t data_size = bytes.size() - kPreambleSize - header_len;

    try {
        for (const auto& entry : c.header.at("tensors")) {
            auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
            const auto offset = entry.at("offset").get<std::uint64_t>();
            std::uint64_t count = 1;
            for (auto d : shape) {
                if (d < 0) throw CheckpointError(where + "negative dimension");
                count *= static_cast<std::uint64_t>(d);
            }
            if (offset > data_size || count > (data_size - offset) / 4) {
                throw CheckpointError(where + "tensor '" + entry.at("name").get<std::string>() +
                                      "' extends past the end of the file");
            }
            auto t = torch::empty(shape, torch::kFloat);
            auto* out = t.data_ptr<float>();
            for (std::uint64_t i = 0; i < count; ++i) out[i] = std::bit_cast<float>(get_le<std::uint32_t>(data + offset + 4 * i));
            c.tensors.push_back({entry.at("name").get<std::string>(), t});
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(where + "corrupt tensor table: " + e.what());
    }
    return c;
}

void save_checkpoint(const TrainState& state, const fs::path& path) {
    std::vector<NamedTensor> tensors = module_tensors("generator.", *state.generator);
    auto d = module_tensors("discriminator.", *state.discriminator);
    tensors.insert(tensors.end(), d.begin(), d.end());

    std::ostringstream rng;
    rng << state.rng;
    nlohmann::json header{{"kind", "inpainting"},
                          {"gender", state.gender ? nlohmann::json(std::string(to_string(*state.gender))) : nlohmann::json()},
                          {"config", state.config.to_json()},
                          {"iteration", state.iteration},
                          {"seed", state.seed},
                          {"rng", rng.str()}};
    header["adam"] = {
        {"generator", adam_steps(*state.generator_optimizer, state.generator->parameters(), "adam.generator.", tensors)},
        {"discriminator",
         adam_steps(*state.discriminator_optimizer, state.discriminator->parameters(), "adam.discriminator.", tensors)}};
    write_container(path, header, tensors);
}

TrainState load_checkpoint(const fs::path& path) {
    const auto c = read_container(path);
    require_kind(c, "inpainting");
    const auto config = config_from<InpaintTrainingConfig>(c);

    std::optional<Gender> gender;
    std::mt19937_64 rng;
    std::int64_t iteration = 0;
    std::uint64_t seed = 0;
    nlohmann::json adam;
    try {
        if (!c.header.at("gender").is_null()) {
            gender = parse_gender(c.header.at("gender").get<std::string>());
            if (!gender) throw CheckpointError("checkpoint carries an unknown gender tag");
        }
        iteration = c.header.at("iteration").get<std::int64_t>();
        seed = c.header.at("seed").get<std::uint64_t>();
        std::istringstream in(c.header.at("rng").get<std::string>());
        in >> rng;
        if (!in) throw CheckpointError("checkpoint rng state is corrupt");
        adam = c.header.at("adam");
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint header is malformed: ") + e.what());
    }

    TrainState state;
    {
        SeedGuard guard;
        state = make_train_state(config, seed, gender);
    }
    const auto g_params = state.generator->parameters();
    const auto d_params = state.discriminator->parameters();
    check_adam(c, adam.at("generator"), g_params, "adam.generator.");
    check_adam(c, adam.at("discriminator"), d_params, "adam.discriminator.");
    load_module(c, "generator.", *state.generator);
    load_module(c, "discriminator.", *state.discriminator);
    restore_adam(c, adam.at("generator"), *state.generator_optimizer, g_params, "adam.generator.");
    restore_adam(c, adam.at("discriminator"), *state.discriminator_optimizer, d_params, "adam.discriminator.");
    state.iteration = iteration;
    state.rng = rng;
    return state;
}

inpaint::Generator load_generator(const fs::path& path, Gender expected) {
    const auto c = read_container(path);
    require_kind(c, "inpainting");
    const auto tag = c.header.value("gender", nlohmann::json());
    const std::string actual = tag.is_string() ? tag.get<std::string>() : "untagged";
    if (actual != to_string(expected)) {
        throw CheckpointError(path.string() + ": generator is tagged '" + actual + "', slot expects '" +
                              std::string(to_string(expected)) + "'");
    }
    const auto config = config_from<InpaintTrainingConfig>(c);
    SeedGuard guard;
    auto generator = inpaint::build_generator(config.generator);
    load_module(c, "generator.", *generator);
    generator->eval();
    return generator;
}

void save_segmenter(const segmentation::Segmenter& model, const fs::path& path) {
    save_model("segmenter", model->config().to_json(), *model, path);
}

segmentation::Segmenter load_segmenter(const fs::path& path) {
    const auto c = read_container(path);
    require_kind(c, "segmenter");
    SeedGuard guard;
    segmentation::Segmenter model(config_from<segmentation::SegmenterConfig>(c));
    load_module(c, "", *model);
    model->eval();
    return model;
}

void save_landmark_predictor(const landmarks::LandmarkPredictor& model, const fs::path& path) {
    save_model("landmarks", model->config().to_json(), *model, path);
}

landmarks::LandmarkPredictor load_landmark_predictor(const fs::path& path) {
    const auto c = read_container(path);
    require_kind(c, "landmarks");
    SeedGuard guard;
    landmarks::LandmarkPredictor model(config_from<landmarks::LandmarkPredictorConfig>(c));
    load_module(c, "", *model);
    model->eval();
    return model;
}

void save_gender_classifier(const gender::GenderClassifier& model, const fs::path& path) {
    save_model("gender", model->config().to_json(), *model, path);
}

gender::GenderClassifier load_gender_classifier(const fs::path& path) {
    const auto c = read_container(path);
    require_kind(c, "gender");
    SeedGuard guard;
    auto model = gender::build_classifier(config_from<gender::GenderClassifierConfig>(c));
    load_module(c, "", *model);
    model->eval();
    return model;
}

}  // namespace unmask::training
