#pragma once

#include "fairsmooth/smooth.hpp"
#include "fairsmooth/synthdata.hpp"
#include "fairsmooth/train.hpp"
#include "fairsmooth/types.hpp"

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace fairsmooth::cli {

/// Bad configuration input: unknown key, malformed value, invalid range.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Every tunable of a run, parsed from key = value lines (# comments)
/// with repeatable --set overrides. Unknown keys are rejected and the fully
/// resolved configuration is echoed next to the results of every command.
struct RunConfig {
    std::uint64_t seed = 1;
    int workers = 1;
    std::string out = "runs/out";

    // data.*
    int count_train = 2000;
    int count_test = 150;
    std::string factors =
        "hue:d2:-0.75:0.75;orient:c:-0.5:0.5;size:d4:-0.5:0.5;"
        "shade:c:-0.5:0.5;shape:d3:-0.5:0.5;tilt:c:-0.5:0.5";
    int target_factor = 0;
    int sensitive_factor = 1;
    int nuisance_dim = 26;
    double nuisance_sigma = 0.25;
    std::uint64_t mixing_seed = 7;
    std::string train_path;  // empty: <out>/train.ds
    std::string test_path;   // empty: <out>/test.ds
    bool write_csv = false;

    // flow.*
    std::string flow_kind = "ground_truth";  // or "coupling"
    int flow_layers = 6;
    int flow_hidden = 32;
    int flow_fit_steps = 200;
    double flow_lr = 0.05;
    std::string flow_checkpoint;

    // encoder.*
    int enc_hidden = 64;
    int enc_layers = 3;
    int enc_k = 16;
    double enc_momentum = 0.1;

    // similarity.*
    double epsilon = 1.0;
    std::string similarity_factors;  // comma list of factor indices; empty: sensitive_factor
    int attr_examples = 1024;

    // train.*
    std::string regime = "lassi";
    double lambda1 = 0.1;
    double lambda2 = 0.1;
    double delta = 50.0;
    int attack_s = 5;
    int batch = 32;
    double lr = 0.01;
    int epochs = 30;
    int cls_epochs = 20;
    double cls_lr = 0.05;

    // smooth.*
    double sigma_enc = 0.75;
    double sigma_cls = 10.0;
    double alpha_c = 0.01;
    double alpha_s = 0.001;
    int n0 = 128;
    int n = 8192;
    int m = 2048;
    double tau = 0.05;
    int chunk = 256;

    // certify.*
    int max_points = 0;
    double timeout_s = 10.0;
    int max_timeouts = 0;
    int audit_grid = 21;
    int audit_m = 512;
    int audit_votes = 501;
    bool record_timing = false;

    // transfer.*
    int transfer_grid = 15;
    std::string transfer_audit = "certified";  // or "all"

    // report.*
    int recon_points = 3;

    std::string resolved_train_path() const;
    std::string resolved_test_path() const;
    smooth::SmoothingConfig smoothing() const;
    train::TrainConfig training() const;  // regime applied
    synth::FactorSpec factor_spec() const;
    std::vector<int> similarity_factor_indices() const;
};

/// Applies one key = value pair; throws ConfigError for unknown keys or
/// unparseable values.
void apply_kv(RunConfig& cfg, const std::string& key, const std::string& value);

/// Reads a config file (UTF-8, # comments, key = value per line) and applies
/// overrides in order. An empty path skips the file.
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides);

/// Canonical sorted key = value rendering of every field.
std::string resolved_text(const RunConfig& cfg);

/// FNV-1a fingerprint of the resolved text (sweep cell identity).
std::uint64_t config_hash(const RunConfig& cfg);

/// Sweep grid: same syntax as a config file but every value may be a
/// comma-separated list; cells are the cartesian product in file order.
std::vector<std::map<std::string, std::string>> parse_grid(const std::string& path);

}  // namespace fairsmooth::cli
