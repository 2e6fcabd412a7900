#include "gsopt/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace gsopt {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

void check_parses(const ConfigEntry& entry, const std::string& value) {
    switch (entry.type) {
    case ConfigType::Int: {
        int out = 0;
        const auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
        require(ec == std::errc() && p == value.data() + value.size(),
                "config: key '" + entry.key + "' expects an integer, got '" + value + "'");
        break;
    }
    case ConfigType::Double: {
        std::size_t pos = 0;
        bool ok = true;
        try {
            (void)std::stod(value, &pos);
        } catch (const std::exception&) {
            ok = false;
        }
        require(ok && pos == value.size(),
                "config: key '" + entry.key + "' expects a number, got '" + value + "'");
        break;
    }
    case ConfigType::Bool:
        require(value == "true" || value == "false" || value == "0" || value == "1",
                "config: key '" + entry.key + "' expects true/false, got '" + value + "'");
        break;
    case ConfigType::String:
        break;
    }
}

} // namespace

const std::vector<ConfigEntry>& Config::registry() {
    static const std::vector<ConfigEntry> entries = {
        {"seed", ConfigType::Int, "0", "base seed for every derived random stream"},
        {"parallel", ConfigType::Bool, "true", "use the OpenMP kernels instead of the serial ones"},
        {"log.timing", ConfigType::Bool, "false", "include wall-clock timings in the run log"},

        {"init.count", ConfigType::Int, "1024", "number of Gaussians seeded on the init sphere"},
        {"init.radius", ConfigType::Double, "0.5", "radius of the init sphere"},
        {"init.scale", ConfigType::Double, "0.03", "initial Gaussian standard deviation"},
        {"init.opacity", ConfigType::Double, "0.1", "initial Gaussian opacity"},

        {"rig.distance", ConfigType::Double, "1.5", "orbit radius of the four-view camera rig"},
        {"rig.elevation_deg", ConfigType::Double, "15", "rig camera elevation above the horizon"},
        {"rig.azimuth0_deg", ConfigType::Double, "0", "azimuth of the rig's first view"},
        {"rig.fov_deg", ConfigType::Double, "50", "vertical field of view of the rig cameras"},

        {"render.width", ConfigType::Int, "64", "render width in pixels"},
        {"render.height", ConfigType::Int, "64", "render height in pixels"},
        {"render.background", ConfigType::Double, "1.0", "background gray level"},

        {"guidance.provider", ConfigType::String, "echo",
         "noise predictor: echo, pull, or conditioned"},
        {"guidance.scale", ConfigType::Double, "1.0", "distillation residual scale"},
        {"guidance.strength", ConfigType::Double, "1.0", "pull provider strength"},
        {"guidance.t_lo", ConfigType::Double, "0.02", "lower timestep fraction"},
        {"guidance.t_hi", ConfigType::Double, "0.98", "upper timestep fraction"},
        {"guidance.lambda_2d", ConfigType::Double, "0.1", "image-space guidance weight"},
        {"guidance.lambda_3d", ConfigType::Double, "0.01", "pose-conditioned guidance weight"},

        {"stage2.steps", ConfigType::Int, "3000", "coarse optimization steps"},
        {"stage2.lambda_tv_depth", ConfigType::Double, "0.1", "depth smoothness weight"},
        {"stage2.lambda_tv_normal", ConfigType::Double, "0.1", "normal smoothness weight"},
        {"stage2.lambda_mask", ConfigType::Double, "1.0", "silhouette weight"},
        {"stage2.normal_every", ConfigType::Int, "4",
         "distill a normal-map view every N steps; 0 disables"},
        {"stage2.densify_from", ConfigType::Int, "300", "first densification step"},
        {"stage2.densify_until", ConfigType::Int, "1500", "last densification step"},
        {"stage2.densify_every", ConfigType::Int, "100", "densification interval"},
        {"stage2.densify_grad_threshold", ConfigType::Double, "2e-4",
         "mean positional gradient norm that triggers a split"},
        {"stage2.prune_opacity", ConfigType::Double, "0.05",
         "opacity below which Gaussians are pruned during densification"},
        {"stage2.sugar_from", ConfigType::Int, "1500",
         "step at which the surface regularizers switch on"},
        {"stage2.lambda_flat", ConfigType::Double, "1.0", "flatness regularizer weight"},
        {"stage2.lambda_align", ConfigType::Double, "1.0", "normal consensus weight"},
        {"stage2.knn", ConfigType::Int, "8", "neighbours in the normal consensus"},
        {"stage2.knn_refresh", ConfigType::Int, "50",
         "steps between neighbour-table rebuilds"},
        {"stage2.final_prune_ratio", ConfigType::Double, "0.5",
         "end-of-stage prune of Gaussians below this fraction of the mean opacity"},

        {"mesh.resolution", ConfigType::Int, "128", "density grid samples per axis"},
        {"mesh.iso", ConfigType::Double, "0.3", "isosurface density level"},
        {"mesh.margin", ConfigType::Double, "0.1", "density grid bounding box margin"},
        {"mesh.cutoff_sigma", ConfigType::Double, "5.0", "Gaussian influence radius"},

        {"stage3.steps", ConfigType::Int, "5000", "bound refinement steps"},
        {"stage3.per_face", ConfigType::Int, "1", "Gaussians bound per mesh face: 1, 3, or 6"},
        {"stage3.lambda_tv_depth", ConfigType::Double, "0.1", "depth smoothness weight"},
        {"stage3.lambda_tv_normal", ConfigType::Double, "0.1", "normal smoothness weight"},
        {"stage3.lambda_mask", ConfigType::Double, "1.0", "silhouette weight"},

        {"opt.lr_position", ConfigType::Double, "1.6e-4", "learning rate: centers"},
        {"opt.lr_position_final_scale", ConfigType::Double, "0.01",
         "exponential center learning-rate decay target over a stage"},
        {"opt.lr_rotation", ConfigType::Double, "1e-3", "learning rate: rotations"},
        {"opt.lr_scale", ConfigType::Double, "5e-3", "learning rate: log-scales"},
        {"opt.lr_opacity", ConfigType::Double, "5e-2", "learning rate: opacity logits"},
        {"opt.lr_color", ConfigType::Double, "2.5e-3", "learning rate: colors"},
        {"opt.lr_vertices", ConfigType::Double, "1e-4", "learning rate: mesh vertices"},
        {"opt.lr_net", ConfigType::Double, "1e-3", "learning rate: conditioning module"},
        {"opt.beta1", ConfigType::Double, "0.9", "Adam first-moment decay"},
        {"opt.beta2", ConfigType::Double, "0.999", "Adam second-moment decay"},
        {"opt.eps", ConfigType::Double, "1e-8", "Adam denominator floor"},
    };
    return entries;
}

Config Config::defaults() {
    Config cfg;
    for (const ConfigEntry& e : registry()) cfg.values_[e.key] = e.default_value;
    return cfg;
}

Config Config::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot open '" + path + "'");
    Config cfg = defaults();
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        cfg.apply_line(line, path + ":" + std::to_string(line_no));
    }
    return cfg;
}

void Config::apply_line(const std::string& line, const std::string& where) {
    std::string body = line;
    const auto hash = body.find('#');
    if (hash != std::string::npos) body.erase(hash);
    body = trim(body);
    if (body.empty()) return;
    const auto eq = body.find('=');
    const std::string prefix = where.empty() ? "" : where + ": ";
    if (eq == std::string::npos)
        throw ContractError("config: " + prefix + "expected 'key = value', got '" + body + "'");
    try {
        set(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
    } catch (const ContractError& e) {
        if (where.empty()) throw;
        throw ContractError(prefix + e.what());
    }
}

void Config::set(const std::string& key, const std::string& value) {
    const auto& entries = registry();
    const auto it = std::find_if(entries.begin(), entries.end(),
                                 [&](const ConfigEntry& e) { return e.key == key; });
    if (it == entries.end()) {
        const std::string near = suggest(key);
        std::string msg = "config: unknown key '" + key + "'";
        if (!near.empty()) msg += "; did you mean '" + near + "'?";
        throw ContractError(msg);
    }
    check_parses(*it, value);
    values_[key] = value;
}

const ConfigEntry& Config::entry_checked(const std::string& key, ConfigType want) const {
    const auto& entries = registry();
    const auto it = std::find_if(entries.begin(), entries.end(),
                                 [&](const ConfigEntry& e) { return e.key == key; });
    require(it != entries.end(), "config: unknown key '" + key + "'");
    require(it->type == want, "config: key '" + key + "' accessed with the wrong type");
    return *it;
}

int Config::get_int(const std::string& key) const {
    entry_checked(key, ConfigType::Int);
    return std::stoi(values_.at(key));
}

double Config::get_double(const std::string& key) const {
    entry_checked(key, ConfigType::Double);
    return std::stod(values_.at(key));
}

bool Config::get_bool(const std::string& key) const {
    entry_checked(key, ConfigType::Bool);
    const std::string& v = values_.at(key);
    return v == "true" || v == "1";
}

const std::string& Config::get_string(const std::string& key) const {
    entry_checked(key, ConfigType::String);
    return values_.at(key);
}

std::string Config::suggest(const std::string& unknown) {
    std::string best;
    std::size_t best_dist = std::string::npos;
    for (const ConfigEntry& e : registry()) {
        const std::size_t d = edit_distance(unknown, e.key);
        if (d < best_dist) {
            best_dist = d;
            best = e.key;
        }
    }
    const std::size_t limit = std::max<std::size_t>(3, unknown.size() / 2);
    return best_dist <= limit ? best : "";
}

std::string Config::to_string() const {
    std::ostringstream out;
    for (const ConfigEntry& e : registry()) out << e.key << " = " << values_.at(e.key) << "\n";
    return out.str();
}

} // namespace gsopt
