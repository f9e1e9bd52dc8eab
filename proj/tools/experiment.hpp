/*
   Copyright 2026 The dualexp Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dualexp/functionals.hpp"
#include "dualexp/models.hpp"
#include "json.hpp"

namespace dualexp::cli {

// One experiment, read from a JSON file:
//   { "name": "...", "kind": "price",
//     "model": {"name": "basis_risk_2d", "params": {"rho": 0.75}},
//     "claim": {"label": "put", "params": {"strike": 100}},
//     "settings": {"alpha": [0.1], "n_paths": 100000, ...} }
struct ExperimentConfig {
    std::string name;
    std::string kind;
    std::string model = "brownian";
    std::map<std::string, double> model_params;
    std::string claim;
    std::map<std::string, double> claim_params;
    std::vector<double> alpha, eps, rho;
    std::int64_t n_paths = 100000;
    int n_steps = 32;
    double horizon = 1.0;
    std::uint64_t seed = 1;
    int degree = 3;
    double phi = 1.0;  // constant direction of verify-lemma
    bool dp = false;   // entropy: also run the lattice DP
    nlohmann::json raw;
};

std::vector<std::string> experiment_kinds();
std::vector<std::string> model_names();

// Fills cfg and returns every violated constraint (empty when valid).
std::vector<std::string> parse_config(const nlohmann::json& j, ExperimentConfig& cfg);

// Model by name; null for "brownian". Throws ConfigError on bad parameters.
ModelPtr build_model(const std::string& name, const std::map<std::string, double>& params);
// Brownian dimension of the experiment.
int brownian_dim(const ExperimentConfig& cfg, const ModelPtr& model);

// Throws IncompatibleError when the claim, model and kind do not fit together.
void check_compatibility(const ExperimentConfig& cfg, const ModelPtr& model, const ClaimFunctional* claim);

// Parse, build and check without simulating.
std::vector<std::string> validate(const nlohmann::json& j);

struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<std::optional<double>>> rows;
    std::string to_csv() const;
};

// Runs a valid experiment. Errors propagate as ConfigError, IncompatibleError
// or NumericalFailure.
Table run_experiment(const ExperimentConfig& cfg);

}  // namespace dualexp::cli
