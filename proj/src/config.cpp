#include "efe/config.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "efe/rng.hpp"

namespace efe {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

using Setter = std::function<void(const json&, const std::string&)>;

void apply(const json& j, const std::string& path, const std::map<std::string, Setter>& setters) {
    if (!j.is_object()) throw std::invalid_argument("config: '" + path + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        const std::string full = path.empty() ? key : path + "." + key;
        const auto it = setters.find(key);
        if (it == setters.end()) throw std::invalid_argument("config: unknown key '" + full + "'");
        try {
            it->second(value, full);
        } catch (const json::exception& e) {
            throw std::invalid_argument("config: bad value for '" + full + "': " + e.what());
        }
    }
}

template <class T>
Setter field(T& dst) {
    return [&dst](const json& v, const std::string&) { dst = v.get<T>(); };
}

template <int N>
Setter vec_field(Eigen::Matrix<double, N, 1>& dst) {
    return [&dst](const json& v, const std::string& path) {
        const auto a = v.get<std::vector<double>>();
        if (a.size() != static_cast<std::size_t>(N)) {
            throw std::invalid_argument("config: '" + path + "' needs " + std::to_string(N) + " values");
        }
        for (int i = 0; i < N; ++i) dst[i] = a[static_cast<std::size_t>(i)];
    };
}

template <int N>
json vec_json(const Eigen::Matrix<double, N, 1>& v) {
    return std::vector<double>(v.data(), v.data() + N);
}

}  // namespace

void RunConfig::validate() const {
    parse_variant(variant);
    resolved_camera().validate();
    screen.validate();
    model.validate();
    train.validate();
    data.scene.validate();
    if (model.height != camera.height || model.width != camera.width) {
        throw std::invalid_argument("config: model input " + std::to_string(model.width) + "x" +
                                    std::to_string(model.height) + " differs from camera " +
                                    std::to_string(camera.width) + "x" + std::to_string(camera.height));
    }
    if (data.n == 0) throw std::invalid_argument("config: data.n must be positive");
    if (report.histogram_bins % 2 == 0) throw std::invalid_argument("config: report.histogram_bins must be odd");
    split_ranges(data.n, data.train_fraction, data.val_fraction);
}

CameraModel RunConfig::resolved_camera() const {
    for (const auto& c : rig_cameras(camera, screen)) {
        if (c.id == camera_id) return c;
    }
    throw std::invalid_argument("config: unknown camera id '" + camera_id + "' (expected MVC, W_C, W_L or W_R)");
}

ojson to_json(const RunConfig& c) {
    ojson j;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["variant"] = c.variant;
    j["camera"] = {{"id", c.camera_id}, {"fx", c.camera.fx},         {"fy", c.camera.fy},
                   {"cx", c.camera.cx}, {"cy", c.camera.cy},         {"width", c.camera.width},
                   {"height", c.camera.height}};
    j["screen"] = {{"width_mm", c.screen.width_mm},
                   {"height_mm", c.screen.height_mm},
                   {"width_px", c.screen.width_px},
                   {"height_px", c.screen.height_px}};
    const auto& m = c.model;
    j["model"] = {{"in_channels", m.in_channels},
                  {"input_mean", m.input_mean},
                  {"input_scale", m.input_scale},
                  {"stem_channels", m.stem_channels},
                  {"encoder_channels", m.encoder_channels},
                  {"convs_per_stage", m.convs_per_stage},
                  {"decoder_channels", m.decoder_channels},
                  {"head_channels", m.head_channels},
                  {"mlp_hidden", m.mlp_hidden},
                  {"softmax_temperature", m.softmax_temperature},
                  {"heatmap_sigma", m.heatmap_sigma},
                  {"param_cap", m.param_cap}};
    const auto& t = c.train;
    j["train"] = {
        {"weights", {{"g", t.weights.g}, {"h", t.weights.h}, {"d", t.weights.d}, {"r", t.weights.r}, {"pog", t.weights.pog}}},
        {"lr", t.lr},
        {"decay", t.decay},
        {"batch_size", t.batch_size},
        {"epochs", t.epochs},
        {"warmup_epochs_pog", t.warmup_epochs_pog},
        {"warmup_steps_pog", t.warmup_steps_pog ? ojson(*t.warmup_steps_pog) : ojson()},
        {"weight_decay", t.weight_decay},
        {"beta1", t.beta1},
        {"beta2", t.beta2},
        {"adam_eps", t.adam_eps},
        {"clip_norm", t.clip_norm}};
    const auto& s = c.data.scene;
    j["data"] = {{"n", c.data.n},
                 {"train_fraction", c.data.train_fraction},
                 {"val_fraction", c.data.val_fraction},
                 {"scene",
                  {{"head_min", vec_json<3>(s.head_min)},
                   {"head_max", vec_json<3>(s.head_max)},
                   {"head_radius_min", s.head_radius_min},
                   {"head_radius_max", s.head_radius_max},
                   {"target_min", vec_json<2>(s.target_min)},
                   {"target_max", vec_json<2>(s.target_max)},
                   {"eye_gain", s.eye_gain},
                   {"eye_spacing", s.eye_spacing},
                   {"eye_size", s.eye_size},
                   {"ambient", s.ambient},
                   {"noise_sigma", s.noise_sigma},
                   {"max_retries", s.max_retries}}}};
    j["eval"] = {{"clamp_pog", c.eval.clamp_pog}, {"batch_size", c.eval.batch_size}};
    j["report"] = {{"histogram_bins", c.report.histogram_bins},
                   {"histogram_extent_px", c.report.histogram_extent_px},
                   {"map_dumps", c.report.map_dumps}};
    return j;
}

void merge_json(RunConfig& c, const json& j) {
    auto section = [](std::map<std::string, Setter> setters) {
        return [setters = std::move(setters)](const json& v, const std::string& path) { apply(v, path, setters); };
    };
    auto& m = c.model;
    auto& t = c.train;
    auto& s = c.data.scene;
    std::map<std::string, Setter> top{
        {"seed", field(c.seed)},
        {"threads", field(c.threads)},
        {"variant", field(c.variant)},
        {"camera", section({{"id", field(c.camera_id)},
                            {"fx", field(c.camera.fx)},
                            {"fy", field(c.camera.fy)},
                            {"cx", field(c.camera.cx)},
                            {"cy", field(c.camera.cy)},
                            {"width", field(c.camera.width)},
                            {"height", field(c.camera.height)}})},
        {"screen", section({{"width_mm", field(c.screen.width_mm)},
                            {"height_mm", field(c.screen.height_mm)},
                            {"width_px", field(c.screen.width_px)},
                            {"height_px", field(c.screen.height_px)}})},
        {"model", section({{"in_channels", field(m.in_channels)},
                           {"input_mean", field(m.input_mean)},
                           {"input_scale", field(m.input_scale)},
                           {"stem_channels", field(m.stem_channels)},
                           {"encoder_channels", field(m.encoder_channels)},
                           {"convs_per_stage", field(m.convs_per_stage)},
                           {"decoder_channels", field(m.decoder_channels)},
                           {"head_channels", field(m.head_channels)},
                           {"mlp_hidden", field(m.mlp_hidden)},
                           {"softmax_temperature", field(m.softmax_temperature)},
                           {"heatmap_sigma", field(m.heatmap_sigma)},
                           {"param_cap", field(m.param_cap)}})},
        {"train", section({{"weights", section({{"g", field(t.weights.g)},
                                                 {"h", field(t.weights.h)},
                                                 {"d", field(t.weights.d)},
                                                 {"r", field(t.weights.r)},
                                                 {"pog", field(t.weights.pog)}})},
                           {"lr", field(t.lr)},
                           {"decay", field(t.decay)},
                           {"batch_size", field(t.batch_size)},
                           {"epochs", field(t.epochs)},
                           {"warmup_epochs_pog", field(t.warmup_epochs_pog)},
                           {"warmup_steps_pog",
                            [&t](const json& v, const std::string&) {
                                if (v.is_null()) {
                                    t.warmup_steps_pog.reset();
                                } else {
                                    t.warmup_steps_pog = v.get<std::size_t>();
                                }
                            }},
                           {"weight_decay", field(t.weight_decay)},
                           {"beta1", field(t.beta1)},
                           {"beta2", field(t.beta2)},
                           {"adam_eps", field(t.adam_eps)},
                           {"clip_norm", field(t.clip_norm)}})},
        {"data", section({{"n", field(c.data.n)},
                          {"train_fraction", field(c.data.train_fraction)},
                          {"val_fraction", field(c.data.val_fraction)},
                          {"scene", section({{"head_min", vec_field<3>(s.head_min)},
                                             {"head_max", vec_field<3>(s.head_max)},
                                             {"head_radius_min", field(s.head_radius_min)},
                                             {"head_radius_max", field(s.head_radius_max)},
                                             {"target_min", vec_field<2>(s.target_min)},
                                             {"target_max", vec_field<2>(s.target_max)},
                                             {"eye_gain", field(s.eye_gain)},
                                             {"eye_spacing", field(s.eye_spacing)},
                                             {"eye_size", field(s.eye_size)},
                                             {"ambient", field(s.ambient)},
                                             {"noise_sigma", field(s.noise_sigma)},
                                             {"max_retries", field(s.max_retries)}})}})},
        {"eval", section({{"clamp_pog", field(c.eval.clamp_pog)}, {"batch_size", field(c.eval.batch_size)}})},
        {"report", section({{"histogram_bins", field(c.report.histogram_bins)},
                            {"histogram_extent_px", field(c.report.histogram_extent_px)},
                            {"map_dumps", field(c.report.map_dumps)}})},
    };
    apply(j, "", top);
    // The model input always follows the camera resolution.
    c.model.height = c.camera.height;
    c.model.width = c.camera.width;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config '" + path.string() + "': " + e.what());
    }
    RunConfig cfg;
    merge_json(cfg, j);
    return cfg;
}

void write_config(const RunConfig& cfg, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << to_json(cfg).dump(2) << '\n';
}

std::string config_hash(const RunConfig& cfg) {
    const std::string s = to_json(cfg).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::uint64_t init_seed(const RunConfig& cfg) { return derive_seed(cfg.seed, 1); }
std::uint64_t shuffle_seed(const RunConfig& cfg) { return derive_seed(cfg.seed, 2); }

std::filesystem::path default_run_dir(const RunConfig& cfg) {
    const char* env = std::getenv(kRunDirEnv);
    const std::filesystem::path parent = env && *env ? env : "runs";
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y%m%dT%H%M%SZ", &tm);
    return parent / (std::string(stamp) + "_" + config_hash(cfg));
}

}  // namespace efe
