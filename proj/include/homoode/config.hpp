#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "homoode/data.hpp"
#include "homoode/model.hpp"

namespace homoode {

// Flat `section.key = value` run configuration. Unknown keys are rejected;
// every run can echo the fully-resolved key set.
struct RunConfig {
    // model
    std::string model_kind = "homoode";
    std::string arch = "conv";
    int channels = 32;
    int augment_dim = 0;
    int groups = 8;
    double dropout_rate = 0.0;
    // solver
    std::string solver_method = "dopri5";
    double atol = 1e-3;
    double rtol = 1e-3;
    int max_steps = 1000;
    int deq_max_iter = 50;
    double deq_tol = 1e-4;
    int anderson_depth = 5;
    // data
    std::string dataset = "mnist";
    std::string data_dir = "data";
    int batch_size = 64;
    std::int64_t synth_n = 1024;
    double synth_noise = 0.05;
    int augment_pad = 0;
    bool augment_flip = false;
    // shared_init
    bool shared_init_on = false;
    double lr_init = 0.02;
    int update_every = 20;
    // experiment
    int epochs = 10;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    bool use_adjoint = false;
};

// Applies one key=value pair; throws ConfigError on unknown keys or
// unparsable values.
void config_apply(RunConfig& cfg, const std::string& key, const std::string& value);

// Parses a text file of `section.key = value` lines. `#` starts a comment;
// blank lines are skipped.
RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_text(const std::string& text);

// Canonical resolved form, one sorted `key = value` line per key.
std::string resolved_config_text(const RunConfig& cfg);
// FNV-1a hash of the resolved text, as fixed-width hex.
std::string config_hash(const RunConfig& cfg);

ModelConfig to_model_config(const RunConfig& cfg);
TrainOptions to_train_options(const RunConfig& cfg);

}  // namespace homoode
