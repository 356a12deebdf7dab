#pragma once

// Partial JSON configs layered over the library defaults. Unknown keys are
// config errors so that typos do not silently fall back to defaults.

#include "json.hpp"
#include "salaud/auditor.hpp"
#include "salaud/synthgen.hpp"
#include "salaud/trainer.hpp"

namespace salaud {

/// Optional "preset" key picks the base (default "clean").
GenConfig parse_gen_config(const nlohmann::json& j);
TrainConfig parse_train_config(const nlohmann::json& j);
SearchSpace parse_search_space(const nlohmann::json& j);
/// `network` defaults to the toy spec sized for height x width.
SuiteConfig parse_suite_config(const nlohmann::json& j, int height, int width);
nlohmann::json suite_config_to_json(const SuiteConfig& c);
SsimConfig parse_ssim_config(const nlohmann::json& j);
/// Flat keys: method, target_class, grid_k, n_samples (integer or
/// "exhaustive"), paired, background, background_value, seed, output, ssim.
ExplainSettings parse_explain_settings(const nlohmann::json& j);

nlohmann::json parse_json_text(const char* text, const char* what);

}  // namespace salaud
