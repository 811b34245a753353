#include "xproto/config.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>

#include "xproto/error.hpp"

namespace xproto {

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw ValidationError("config: " + what); };
    if (epochs == 0) fail("epochs must be positive");
    if (episode.n_way < 2) fail("n_way must be at least 2");
    if (episode.k_shot < 1) fail("k_shot must be at least 1");
    if (cls_on == ClsOn::query && episode.q_query == 0) fail("cls_on=query needs q_query >= 1");
    if (use_con && episode.n_way * episode.k_shot < 2) fail("contrastive loss needs >= 2 support samples");
    if (!(rho >= 0.0)) fail("rho must be non-negative");
    if (!(langevin.step_size > 0.0)) fail("langevin_step must be positive");
    if (langevin.steps > 16) fail("langevin_steps must be at most 16");
    if (!(prior_std > 0.0)) fail("prior_std must be positive");
    if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
    if (target_batch == 0) fail("target_batch must be positive");
    if (!(sinkhorn.regularization > 0.0)) fail("sinkhorn_reg must be positive");
    if (sinkhorn.max_iterations == 0) fail("sinkhorn_max_iter must be positive");
    if (!(sinkhorn.marginal_tolerance > 0.0)) fail("sinkhorn_tol must be positive");
    if (d_out < 2) fail("d_out must be at least 2");
    if (!(projection_ridge > 0.0)) fail("projection_ridge must be positive");
    if (means_refresh_every == 0) fail("means_refresh_every must be positive");
}

nlohmann::json TrainConfig::to_json() const {
    return {
        {"epochs", epochs},
        {"n_way", episode.n_way},
        {"k_shot", episode.k_shot},
        {"q_query", episode.q_query},
        {"rho", rho},
        {"langevin_step", langevin.step_size},
        {"langevin_steps", langevin.steps},
        {"langevin_noise", langevin.inject_noise},
        {"prior_std", prior_std},
        {"optimizer", to_string(optimizer)},
        {"learning_rate", learning_rate},
        {"target_batch", target_batch},
        {"sinkhorn_reg", sinkhorn.regularization},
        {"sinkhorn_relative", sinkhorn.relative},
        {"sinkhorn_max_iter", sinkhorn.max_iterations},
        {"sinkhorn_tol", sinkhorn.marginal_tolerance},
        {"d_out", d_out},
        {"activation", to_string(activation)},
        {"cls_on", to_string(cls_on)},
        {"s2s_form", to_string(s2s_form)},
        {"projection", projection == ProjectionInit::fit ? "fit" : "random"},
        {"projection_ridge", projection_ridge},
        {"means_refresh_every", means_refresh_every},
        {"means_max_per_relation", means_max_per_relation},
        {"reinit_prototypes", reinit_prototypes},
        {"valid_every", valid_every},
        {"valid_episodes", valid_episodes},
        {"seed", seed},
        {"use_con", use_con},
        {"use_wd", use_wd},
    };
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    char* end = nullptr;
    errno = 0;
    const double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0' || errno != 0 || !std::isfinite(x)) {
        throw ValidationError("config: " + key + ": expected a number, got '" + v + "'");
    }
    return x;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    char* end = nullptr;
    errno = 0;
    if (!v.empty() && v.front() == '-') throw ValidationError("config: " + key + ": must be non-negative");
    const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0' || errno != 0) {
        throw ValidationError("config: " + key + ": expected an integer, got '" + v + "'");
    }
    return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ValidationError("config: " + key + ": expected a boolean, got '" + v + "'");
}

template <typename F>
auto wrap(const std::string& key, F&& f) {
    try {
        return f();
    } catch (const ValidationError&) {
        throw;
    } catch (const std::exception& e) {
        throw ValidationError("config: " + key + ": " + e.what());
    }
}

}  // namespace

void apply_settings(TrainConfig& c, const std::map<std::string, std::string>& settings) {
    using Setter = std::function<void(const std::string&, const std::string&)>;
    const std::map<std::string, Setter> setters = {
        {"epochs", [&](auto& k, auto& v) { c.epochs = parse_uint(k, v); }},
        {"n_way", [&](auto& k, auto& v) { c.episode.n_way = parse_uint(k, v); }},
        {"k_shot", [&](auto& k, auto& v) { c.episode.k_shot = parse_uint(k, v); }},
        {"q_query", [&](auto& k, auto& v) { c.episode.q_query = parse_uint(k, v); }},
        {"rho", [&](auto& k, auto& v) { c.rho = parse_double(k, v); }},
        {"langevin_step", [&](auto& k, auto& v) { c.langevin.step_size = parse_double(k, v); }},
        {"langevin_steps", [&](auto& k, auto& v) { c.langevin.steps = parse_uint(k, v); }},
        {"langevin_noise", [&](auto& k, auto& v) { c.langevin.inject_noise = parse_bool(k, v); }},
        {"prior_std", [&](auto& k, auto& v) { c.prior_std = parse_double(k, v); }},
        {"optimizer", [&](auto& k, auto& v) { c.optimizer = wrap(k, [&] { return optimizer_from_string(v); }); }},
        {"learning_rate", [&](auto& k, auto& v) { c.learning_rate = parse_double(k, v); }},
        {"target_batch", [&](auto& k, auto& v) { c.target_batch = parse_uint(k, v); }},
        {"sinkhorn_reg", [&](auto& k, auto& v) { c.sinkhorn.regularization = parse_double(k, v); }},
        {"sinkhorn_relative", [&](auto& k, auto& v) { c.sinkhorn.relative = parse_bool(k, v); }},
        {"sinkhorn_max_iter", [&](auto& k, auto& v) { c.sinkhorn.max_iterations = parse_uint(k, v); }},
        {"sinkhorn_tol", [&](auto& k, auto& v) { c.sinkhorn.marginal_tolerance = parse_double(k, v); }},
        {"d_out", [&](auto& k, auto& v) { c.d_out = parse_uint(k, v); }},
        {"activation", [&](auto& k, auto& v) { c.activation = wrap(k, [&] { return activation_from_string(v); }); }},
        {"cls_on", [&](auto& k, auto& v) { c.cls_on = wrap(k, [&] { return cls_on_from_string(v); }); }},
        {"s2s_form", [&](auto& k, auto& v) { c.s2s_form = wrap(k, [&] { return s2s_form_from_string(v); }); }},
        {"projection",
         [&](auto& k, auto& v) {
             if (v == "fit") c.projection = ProjectionInit::fit;
             else if (v == "random") c.projection = ProjectionInit::random;
             else throw ValidationError("config: " + k + ": expected fit|random");
         }},
        {"projection_ridge", [&](auto& k, auto& v) { c.projection_ridge = parse_double(k, v); }},
        {"means_refresh_every", [&](auto& k, auto& v) { c.means_refresh_every = parse_uint(k, v); }},
        {"means_max_per_relation", [&](auto& k, auto& v) { c.means_max_per_relation = parse_uint(k, v); }},
        {"reinit_prototypes", [&](auto& k, auto& v) { c.reinit_prototypes = parse_bool(k, v); }},
        {"valid_every", [&](auto& k, auto& v) { c.valid_every = parse_uint(k, v); }},
        {"valid_episodes", [&](auto& k, auto& v) { c.valid_episodes = parse_uint(k, v); }},
        {"seed", [&](auto& k, auto& v) { c.seed = parse_uint(k, v); }},
        {"use_con", [&](auto& k, auto& v) { c.use_con = parse_bool(k, v); }},
        {"use_wd", [&](auto& k, auto& v) { c.use_wd = parse_bool(k, v); }},
    };
    for (const auto& [key, value] : settings) {
        const auto it = setters.find(key);
        if (it == setters.end()) throw ValidationError("config: unknown key '" + key + "'");
        it->second(key, value);
    }
}

std::map<std::string, std::string> read_settings_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("missing file: " + path.string());
    std::map<std::string, std::string> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
            value = value.substr(1, value.size() - 2);
        }
        out[key] = value;
    }
    return out;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    TrainConfig config;
    apply_settings(config, read_settings_file(path));
    config.validate();
    return config;
}

}  // namespace xproto
