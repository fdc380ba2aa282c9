#pragma once

#include "indeed/oracle_solver.hpp"
#include "indeed/training.hpp"

#include <filesystem>
#include <iosfwd>

namespace indeed {

/// Everything a CLI run needs. File values override defaults, flags override
/// file values, the INDEED_OUT_DIR environment variable sits between them for
/// out_dir only.
struct RunConfig {
    Hyperparams hyper;
    ModelConfig model;
    TrainConfig train;
    AdaptConfig adapt;

    // run-level
    Task task = Task::DEN;
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    int n = 16;
    int height = 32;
    int width = 32;
    double sigma = -1.0; // fixed noise level; < 0 means use [sigma_min, sigma_max]
    double sigma_min = 0.0;
    double sigma_max = 0.3;
    double threshold = -1.0; // rank-indicator threshold, no blessed default
    int true_rank = 3;       // synthetic low-rank instances
    double density = 0.05;
    double noise_sigma = 0.02;
    AnomalySpec anomaly;

    // paths
    std::string checkpoint;
    std::string checkpoint_out;
    std::string data_dir;
    std::string input;

    /// Copies shared fields (r0, task, seed) into the sub-configs and validates.
    void finalize();
};

/// Parse the sectioned key-value config file into `cfg`. Grammar (documented in
/// the README): '#' comments, blank lines, `[section]` headers from
/// {hyper, model, train, adapt, run}, and `key = value` lines. Keys are unique
/// across sections; unknown keys, sections, or bad values raise errors naming
/// the offender.
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

/// Set a single key; used by both the file parser and flag overrides.
/// Returns false for unknown keys.
bool apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value);

/// All known keys with their section, for flag registration and printing.
struct ConfigKey {
    const char* section;
    const char* key;
};
const std::vector<ConfigKey>& config_keys();

/// Echo the effective config in file grammar.
void print_config(const RunConfig& cfg, std::ostream& os);

} // namespace indeed
