#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "longctx/calibration.hpp"
#include "longctx/channels.hpp"
#include "longctx/eval.hpp"
#include "longctx/model.hpp"

namespace longctx::cli {

// Everything a subcommand may read. Defaults mirror the library constants.
struct RunConfig {
  std::string command;

  std::string model_dir;
  std::string mode = "vanilla";
  std::string table_path;
  std::string tokens_path;
  std::string calibration_path;
  std::string out;
  std::string format = "csv";

  double theta = kDefaultTheta;
  double clamp_percent = kDefaultClampPercent;
  std::size_t interval = kDefaultInterval;
  std::optional<std::size_t> s_max;
  std::size_t calib_count = kDefaultCalibrationCount;
  bool sweep = false;

  std::vector<std::size_t> lengths;
  std::size_t layer = 0;
  std::vector<std::size_t> channels;
  double epsilon = 1e-3;
  bool svg = false;
  std::string scale = "log";

  std::uint64_t seed = 0;
  std::vector<TokenId> prompt;
  std::size_t n_new = 16;
  std::size_t key_length = 4;
  std::size_t instances = 10;
  bool clamp_a = false;

  // synth
  ModelConfig synth_config{256, 64, 128, 8, 2, 4, 0, 512, true};
  SynthOptions synth{};
};

// Parses argv and dispatches. Returns the process exit code: 0 on success,
// 2/3/4 for configuration, data and numeric errors, 1 for anything else.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Subcommands, callable directly from tests.
void cmd_analyze(const RunConfig& cfg, std::ostream& out, std::ostream& err);
void cmd_classify(const RunConfig& cfg, std::ostream& out, std::ostream& err);
void cmd_calibrate(const RunConfig& cfg, std::ostream& out, std::ostream& err);
void cmd_eval_ppl(const RunConfig& cfg, std::ostream& out, std::ostream& err);
void cmd_eval_passkey(const RunConfig& cfg, std::ostream& out, std::ostream& err);
void cmd_generate(const RunConfig& cfg, std::ostream& out, std::ostream& err);
void cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream& err);

// `count` windows of `length` tokens at seeded random offsets.
std::vector<std::vector<TokenId>> sample_sequences(std::span<const TokenId> stream,
                                                   std::size_t count,
                                                   std::size_t length,
                                                   std::uint64_t seed);

}  // namespace longctx::cli
