#pragma once

#include <string>

#include <json.hpp>

#include "pvi/expfam.hpp"
#include "pvi/models.hpp"
#include "pvi/pvi.hpp"

namespace serialize {

using json = nlohmann::ordered_json;

// {"dim": D, "eta1": [...], "eta2": [...]}
json natural_to_json(const expfam::NaturalParams& n);
expfam::NaturalParams natural_from_json(const json& j);

json hyper_to_json(const models::Hyperparams& h);
models::Hyperparams hyper_from_json(const json& j);

// {"prior": ..., "sites": [{"shard_id", "natural", "log_scale"}], "hyper": ...}
json checkpoint_to_json(const pvi::PosteriorState& state,
                        const models::Hyperparams& hyper);
std::pair<pvi::PosteriorState, models::Hyperparams> checkpoint_from_json(
    const json& j);

void save_checkpoint(const pvi::PosteriorState& state,
                     const models::Hyperparams& hyper, const std::string& path);
std::pair<pvi::PosteriorState, models::Hyperparams> load_checkpoint(
    const std::string& path);

// Header: iter,shard,local_fe,global_fe,delta_norm,hyper_json
void write_trace_csv(const pvi::RunTrace& trace, const std::string& path);

}  // namespace serialize
