#pragma once

#include "abpm/dataio.hpp"
#include "abpm/design.hpp"
#include "abpm/estimation.hpp"

#include <filesystem>
#include <string>

namespace abpm {

inline constexpr int kSchemaVersion = 1;

/// Model specification JSON. Unknown keys and other schema versions are
/// rejected with a schema error.
ModelSpec parse_model_spec(const std::string& text);
ModelSpec load_model_spec(const std::filesystem::path& path);
std::string dump_model_spec(const ModelSpec& spec);

/// Fitted model JSON, including the basis state needed to evaluate the model
/// at new times without the training data.
std::string dump_fitted_model(const FittedModel& fitted);
FittedModel parse_fitted_model(const std::string& text);
FittedModel load_fitted_model(const std::filesystem::path& path);

SimulationConfig parse_simulation_config(const std::string& text);
SimulationConfig load_simulation_config(const std::filesystem::path& path);
std::string dump_simulation_config(const SimulationConfig& config);

Thresholds parse_thresholds(const std::string& text);
Thresholds load_thresholds(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
/// Writes bytes exactly as given.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace abpm
