#pragma once

#include <stdexcept>
#include <string>

#include <json.hpp>

#include "flowscene/flow.hpp"
#include "flowscene/grids.hpp"
#include "flowscene/lift.hpp"
#include "flowscene/losses.hpp"

// ADL (de)serializers so configs holding these types round-trip through JSON.
namespace flowscene {

inline void to_json(nlohmann::json& j, const RigidTransform& t) {
    j = nlohmann::json{{"rotation", t.rotation}, {"translation", t.translation}};
}

inline void from_json(const nlohmann::json& j, RigidTransform& t) {
    j.at("rotation").get_to(t.rotation);
    j.at("translation").get_to(t.translation);
}

inline void to_json(nlohmann::json& j, const CameraModel& c) {
    j = nlohmann::json{
        {"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"cam_to_ego", c.cam_to_ego}};
}

inline void from_json(const nlohmann::json& j, CameraModel& c) {
    j.at("fx").get_to(c.fx);
    j.at("fy").get_to(c.fy);
    j.at("cx").get_to(c.cx);
    j.at("cy").get_to(c.cy);
    if (j.contains("cam_to_ego")) j.at("cam_to_ego").get_to(c.cam_to_ego);
}

inline void to_json(nlohmann::json& j, const GridSpec& g) {
    j = nlohmann::json{{"dims", g.dims}, {"voxel_size", g.voxel_size}, {"origin", g.origin}};
}

inline void from_json(const nlohmann::json& j, GridSpec& g) {
    j.at("dims").get_to(g.dims);
    j.at("voxel_size").get_to(g.voxel_size);
    j.at("origin").get_to(g.origin);
}

inline void to_json(nlohmann::json& j, const ConsistencyConfig& c) {
    j = nlohmann::json{
        {"tau", c.tau},
        {"border_policy", c.border_policy == BorderPolicy::zero_pad ? "zero_pad" : "mark_occluded"},
        {"use_relative", c.use_relative},
        {"relative_alpha", c.relative_alpha},
        {"relative_beta", c.relative_beta}};
}

inline void from_json(const nlohmann::json& j, ConsistencyConfig& c) {
    if (j.contains("tau")) j.at("tau").get_to(c.tau);
    if (j.contains("border_policy")) {
        std::string policy = j.at("border_policy").get<std::string>();
        if (policy == "zero_pad")
            c.border_policy = BorderPolicy::zero_pad;
        else if (policy == "mark_occluded")
            c.border_policy = BorderPolicy::mark_occluded;
        else
            throw std::invalid_argument("ConsistencyConfig: unknown border_policy '" + policy + "'");
    }
    if (j.contains("use_relative")) j.at("use_relative").get_to(c.use_relative);
    if (j.contains("relative_alpha")) j.at("relative_alpha").get_to(c.relative_alpha);
    if (j.contains("relative_beta")) j.at("relative_beta").get_to(c.relative_beta);
}

inline void to_json(nlohmann::json& j, const LossWeights& w) {
    j = nlohmann::json{{"lambda_sem", w.lambda_sem},
                       {"lambda_geo", w.lambda_geo},
                       {"lambda_ce", w.lambda_ce},
                       {"lambda_d", w.lambda_d}};
}

inline void from_json(const nlohmann::json& j, LossWeights& w) {
    if (j.contains("lambda_sem")) j.at("lambda_sem").get_to(w.lambda_sem);
    if (j.contains("lambda_geo")) j.at("lambda_geo").get_to(w.lambda_geo);
    if (j.contains("lambda_ce")) j.at("lambda_ce").get_to(w.lambda_ce);
    if (j.contains("lambda_d")) j.at("lambda_d").get_to(w.lambda_d);
}

}  // namespace flowscene
