#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "xproto/dataset.hpp"
#include "xproto/encoder.hpp"
#include "xproto/losses.hpp"
#include "xproto/prototypes.hpp"
#include "xproto/sinkhorn.hpp"

namespace xproto {

enum class ProjectionInit { fit, random };

struct TrainConfig {
    std::size_t epochs = 10000;
    EpisodeSpec episode{5, 1, 1};
    double rho = 0.6;
    LangevinConfig langevin{0.1, 1, true};
    double prior_std = 1.0;

    OptimizerKind optimizer = OptimizerKind::adam;
    double learning_rate = 1e-3;

    std::size_t target_batch = 4;
    SinkhornConfig sinkhorn{0.05, true, 1000, 1e-6, true, 0.02};

    std::size_t d_out = 64;
    Activation activation = Activation::identity;

    ClsOn cls_on = ClsOn::query;
    S2sForm s2s_form = S2sForm::masked;

    ProjectionInit projection = ProjectionInit::fit;
    double projection_ridge = 1e-3;

    std::size_t means_refresh_every = 1;
    std::size_t means_max_per_relation = 0;
    bool reinit_prototypes = false;

    std::size_t valid_every = 500;
    std::size_t valid_episodes = 200;

    std::uint64_t seed = 1;
    bool use_con = true;
    bool use_wd = true;

    // Throws ValidationError on any out-of-range setting.
    void validate() const;
    nlohmann::json to_json() const;
};

// Applies `key = value` pairs onto `config`. Unknown keys and unparsable values
// throw ValidationError.
void apply_settings(TrainConfig& config, const std::map<std::string, std::string>& settings);

// Reads a key=value file ('#' starts a comment, blank lines ignored).
std::map<std::string, std::string> read_settings_file(const std::filesystem::path& path);

TrainConfig load_train_config(const std::filesystem::path& path);

}  // namespace xproto
