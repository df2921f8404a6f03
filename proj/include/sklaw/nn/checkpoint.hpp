#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "nlohmann/json.hpp"

namespace sklaw {

// Versioned binary container: a JSON metadata block plus named f64 arrays.
// Values round-trip bit-exactly, so reloaded models reproduce outputs.
struct Checkpoint {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Eigen::MatrixXd>> arrays;

    void add(const std::string& name, const Eigen::MatrixXd& mat);
    bool has(const std::string& name) const;
    const Eigen::MatrixXd& get(const std::string& name) const;  // throws when missing
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace sklaw
