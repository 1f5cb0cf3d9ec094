#include "tsd/harness/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "tsd/numeric/errors.hpp"

namespace tsd {

RunConfig RunConfig::full() {
    RunConfig c;
    c.data.image_h = 256;
    c.data.image_w = 128;
    c.data.patch = 16;
    c.data.person_columns = 6;
    c.data.train_identities = 702;
    c.data.test_identities = 1110;
    c.model.encoder = EncoderConfig{};
    c.model.encoder.dim = 768;
    c.model.encoder.depth = 12;
    c.model.encoder.heads = 12;
    c.model.encoder.ffn_dim = 3072;
    c.sync();
    return c;
}

RunConfig RunConfig::toy() {
    RunConfig c;
    c.model.encoder.patch_size = c.model.encoder.stride = 4;
    c.model.encoder.dim = 32;
    c.model.encoder.depth = 2;
    c.model.encoder.heads = 4;
    c.model.encoder.ffn_dim = 64;
    // From-scratch training at this size needs position codes that are not
    // drowned out by patch content.
    c.model.encoder.position_init_std = 1.0;
    c.model.decoder.ffn_dim = 64;
    // The mask generator needs about half the run before its masks beat
    // ground truth as a teacher signal.
    c.model.mask_warmup_epochs = 25;
    c.train.epochs = 50;
    c.train.ids_per_batch = 8;
    c.train.sgd.lr = 0.01;
    c.sync();
    return c;
}

void RunConfig::sync() {
    data.validate();
    model.encoder.image_h = data.image_h;
    model.encoder.image_w = data.image_w;
    model.encoder.channels = data.channels;
    model.encoder.patch_size = data.patch;
    model.encoder.stride = data.patch;
    model.decoder.parts = data.parts;
    model.decoder.dim = model.encoder.dim;
    model.decoder.heads = model.encoder.heads;
    model.num_classes = data.train_identities;
    model.encoder.validate();
    model.decoder.validate();
    if (train.ids_per_batch < 2 || train.images_per_id < 2) {
        throw ValidationError("a batch needs at least two identities with two images each");
    }
    if (train.epochs == 0) throw ValidationError("epochs must be positive");
}

namespace {

struct Field {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, std::string_view)> set;
};

template <class T>
T parse_number(std::string_view key, std::string_view v) {
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size()) {
        throw ValidationError("bad value '" + std::string(v) + "' for " + std::string(key));
    }
    return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ValidationError("bad value '" + std::string(v) + "' for " + std::string(key) +
                          " (expected true or false)");
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    std::string s = os.str();
    if (s.find_first_of(".eE") == std::string::npos) s += ".0";
    return s;
}

template <class T, class Get>
Field number(std::string key, Get get) {
    return {key,
            [get](const RunConfig& c) {
                RunConfig copy = c;
                if constexpr (std::is_floating_point_v<T>) return format_double(get(copy));
                else return std::to_string(get(copy));
            },
            [get, key](RunConfig& c, std::string_view v) { get(c) = parse_number<T>(key, v); }};
}

template <class Get>
Field flag(std::string key, Get get) {
    return {key,
            [get](const RunConfig& c) {
                RunConfig copy = c;
                return std::string(get(copy) ? "true" : "false");
            },
            [get, key](RunConfig& c, std::string_view v) { get(c) = parse_bool(key, v); }};
}

#define TSD_SIZE(k, expr) number<std::size_t>(k, [](RunConfig& c) -> std::size_t& { return expr; })
#define TSD_U64(k, expr) number<std::uint64_t>(k, [](RunConfig& c) -> std::uint64_t& { return expr; })
#define TSD_REAL(k, expr) number<double>(k, [](RunConfig& c) -> double& { return expr; })
#define TSD_FLAG(k, expr) flag(k, [](RunConfig& c) -> bool& { return expr; })

const std::vector<Field>& fields() {
    static const std::vector<Field> all = {
        TSD_SIZE("data.train_identities", c.data.train_identities),
        TSD_SIZE("data.test_identities", c.data.test_identities),
        TSD_SIZE("data.images_per_identity", c.data.images_per_identity),
        TSD_SIZE("data.query_images_per_identity", c.data.query_images_per_identity),
        TSD_SIZE("data.image_h", c.data.image_h),
        TSD_SIZE("data.image_w", c.data.image_w),
        TSD_SIZE("data.channels", c.data.channels),
        TSD_SIZE("data.patch", c.data.patch),
        TSD_SIZE("data.parts", c.data.parts),
        TSD_SIZE("data.person_columns", c.data.person_columns),
        TSD_SIZE("data.palette", c.data.palette),
        TSD_SIZE("data.cameras", c.data.cameras),
        TSD_REAL("data.npo_rate", c.data.npo_rate),
        TSD_REAL("data.ntp_rate", c.data.ntp_rate),
        TSD_SIZE("data.min_occluded_bands", c.data.min_occluded_bands),
        TSD_SIZE("data.max_occluded_bands", c.data.max_occluded_bands),
        TSD_REAL("data.noise", c.data.noise),
        TSD_REAL("data.camera_shift", c.data.camera_shift),
        TSD_U64("data.seed", c.data.seed),

        {"model.variant", [](const RunConfig& c) { return std::string(to_string(c.model.variant)); },
         [](RunConfig& c, std::string_view v) { c.model.variant = parse_variant(v); }},
        TSD_SIZE("model.dim", c.model.encoder.dim),
        TSD_SIZE("model.depth", c.model.encoder.depth),
        TSD_SIZE("model.heads", c.model.encoder.heads),
        TSD_SIZE("model.ffn_dim", c.model.encoder.ffn_dim),
        TSD_REAL("model.position_init_std", c.model.encoder.position_init_std),
        TSD_SIZE("model.decoder_layers", c.model.decoder.layers),
        TSD_SIZE("model.decoder_ffn_dim", c.model.decoder.ffn_dim),
        TSD_FLAG("model.scale_teacher_logits", c.model.decoder.scale_teacher_logits),
        TSD_FLAG("model.empty_part_fallback", c.model.decoder.empty_part_fallback),
        TSD_FLAG("model.decoder_residual", c.model.decoder.residual),
        TSD_FLAG("model.distill_stop_gradient", c.model.distill_stop_gradient),
        TSD_REAL("model.triplet_margin", c.model.triplet_margin),
        TSD_REAL("model.parsing_smoothing", c.model.parsing_smoothing),
        TSD_REAL("model.focal_alpha", c.model.focal_alpha),
        TSD_REAL("model.focal_gamma", c.model.focal_gamma),
        TSD_REAL("model.visibility_min_fraction", c.model.visibility_min_fraction),
        TSD_SIZE("model.mask_warmup_epochs", c.model.mask_warmup_epochs),

        TSD_SIZE("train.epochs", c.train.epochs),
        TSD_SIZE("train.ids_per_batch", c.train.ids_per_batch),
        TSD_SIZE("train.images_per_id", c.train.images_per_id),
        TSD_REAL("train.lr", c.train.sgd.lr),
        TSD_REAL("train.momentum", c.train.sgd.momentum),
        TSD_REAL("train.weight_decay", c.train.sgd.weight_decay),
        TSD_U64("train.seed", c.train.seed),
        TSD_FLAG("train.check_leakage", c.train.check_leakage),
    };
    return all;
}

#undef TSD_SIZE
#undef TSD_U64
#undef TSD_REAL
#undef TSD_FLAG

const Field& field(std::string_view key) {
    for (const Field& f : fields()) {
        if (f.key == key) return f;
    }
    throw ValidationError("unknown config key '" + std::string(key) + "'");
}

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const Field& f : fields()) keys.push_back(f.key);
    return keys;
}

std::string config_value(const RunConfig& cfg, std::string_view key) { return field(key).get(cfg); }

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
    value = trim(value);
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
        value = value.substr(1, value.size() - 2);
    }
    field(key).set(cfg, value);
}

RunConfig parse_config(std::string_view text, RunConfig base) {
    std::string section;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line = raw;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ValidationError("config line " + std::to_string(line_no) + ": bad section header");
            }
            section = std::string(trim(line.substr(1, line.size() - 2)));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ValidationError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = (section.empty() ? "" : section + ".") + std::string(trim(line.substr(0, eq)));
        set_config_value(base, key, line.substr(eq + 1));
    }
    base.sync();
    return base;
}

std::string format_config(const RunConfig& cfg) {
    std::ostringstream os;
    std::string section;
    for (const Field& f : fields()) {
        const auto dot = f.key.find('.');
        const std::string s = f.key.substr(0, dot);
        if (s != section) {
            if (!section.empty()) os << '\n';
            os << '[' << s << "]\n";
            section = s;
        }
        std::string v = f.get(cfg);
        if (f.key == "model.variant") v = '"' + v + '"';
        os << f.key.substr(dot + 1) << " = " << v << '\n';
    }
    return os.str();
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::move(base));
}

void save_config(const std::filesystem::path& path, const RunConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write config " + path.string());
    out << format_config(cfg);
}

}  // namespace tsd
