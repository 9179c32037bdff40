#pragma once

#include "fairsmooth/config.hpp"
#include "fairsmooth/flow.hpp"

#include <string>
#include <vector>

namespace fairsmooth::cli {

// Exit codes shared by every subcommand.
inline constexpr int kOk = 0;
inline constexpr int kConfigError = 2;
inline constexpr int kDataError = 3;
inline constexpr int kNumericError = 4;
inline constexpr int kTimeoutBudget = 5;

int cmd_generate(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_certify(const RunConfig& cfg);
int cmd_transfer(const RunConfig& cfg);
int cmd_sweep(const RunConfig& base, const std::string& grid_path);
int cmd_report(const RunConfig& cfg, const std::vector<std::string>& inputs, bool recon);

/// Maps an exception escaping a command to its exit code.
int exit_code_for(const std::exception& e);

/// Attribute vectors from the train split (per-factor mean difference of
/// latents, midpoint split, capped at similarity.attr_examples per side)
/// plus the configured epsilon. Shared by the commands and external drivers
/// so both see the same similarity specification.
flow::SimilaritySpec build_similarity_spec(const RunConfig& cfg, const synth::FactorSpec& fspec,
                                           const flow::Bijection& gen,
                                           const synth::LabeledDataset& train);

}  // namespace fairsmooth::cli
