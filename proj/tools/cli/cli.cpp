#include "cli.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <ostream>

#include "config_json.hpp"

namespace longctx::cli {

namespace {

using Command = std::function<void(const RunConfig&, std::ostream&, std::ostream&)>;

const std::map<std::string, std::pair<Command, const char*>>& commands() {
  static const std::map<std::string, std::pair<Command, const char*>> table{
      {"analyze", {cmd_analyze, "Attention slices, receptive fields and decay curves for one layer"}},
      {"classify", {cmd_classify, "Global/local channel counts per layer"}},
      {"calibrate", {cmd_calibrate, "Build a threshold table from calibration sequences"}},
      {"eval-ppl", {cmd_eval_ppl, "Perplexity at each of --lengths"}},
      {"eval-passkey", {cmd_eval_passkey, "Passkey retrieval accuracy at each of --lengths"}},
      {"generate", {cmd_generate, "Greedy continuation of a prompt"}},
      {"synth", {cmd_synth, "Write a synthetic model with planted channels"}},
  };
  return table;
}

bool parse_range(const CLI::results_t& r, DecayRange& range) {
  return r.size() == 2 && CLI::detail::lexical_cast(r[0], range.lo) &&
         CLI::detail::lexical_cast(r[1], range.hi);
}

void add_options(CLI::App& app, RunConfig& c) {
  app.add_option("--model", c.model_dir, "Model directory (manifest.json + weights.bin)");
  app.add_option("--mode", c.mode, "Run mode")
      ->check(CLI::IsMember({"vanilla", "longmamba"}))
      ->capture_default_str();
  app.add_option("--table", c.table_path, "Threshold table JSON (longmamba mode)");
  app.add_option("--tokens", c.tokens_path, "Token stream file");
  app.add_option("--calibration", c.calibration_path,
                 "Token stream to sample calibration sequences from");
  app.add_option("--out", c.out, "Output file or directory");
  app.add_option("--format", c.format, "Report format")
      ->check(CLI::IsMember({"csv", "json"}))
      ->capture_default_str();

  app.add_option("--theta", c.theta, "Global channel threshold on decay at train length")
      ->capture_default_str();
  app.add_option("--clamp-percent", c.clamp_percent, "Top percent of step sizes clamped")
      ->capture_default_str();
  app.add_option("--interval", c.interval, "Threshold table row spacing in tokens")
      ->capture_default_str();
  app.add_option("--s-max", c.s_max, "Longest table row (default 16 x train length)");
  app.add_option("--calib-count", c.calib_count, "Number of calibration sequences")
      ->capture_default_str();
  app.add_flag("--sweep", c.sweep,
               "classify: counts over the theta grid; calibrate: pick theta by perplexity");

  app.add_option("--lengths", c.lengths, "Sequence lengths")->delimiter(',');
  app.add_option("--layer", c.layer, "Layer to analyze")->capture_default_str();
  app.add_option("--channels", c.channels, "Channels to analyze (default: all)")
      ->delimiter(',');
  app.add_option("--epsilon", c.epsilon, "Receptive field significance level")
      ->capture_default_str();
  app.add_flag("--svg", c.svg, "Also write SVG heatmaps");
  app.add_option("--scale", c.scale, "Heatmap color scale")
      ->check(CLI::IsMember({"linear", "log"}))
      ->capture_default_str();

  app.add_option("--seed", c.seed, "Random seed")->capture_default_str();
  app.add_option("--prompt", c.prompt, "Prompt token ids")->delimiter(',');
  app.add_option("--n-new", c.n_new, "Tokens to generate")->capture_default_str();
  app.add_option("--key-length", c.key_length, "Passkey length in tokens")
      ->capture_default_str();
  app.add_option("--instances", c.instances, "Passkey instances per length")
      ->capture_default_str();
  app.add_flag("--clamp-a", c.clamp_a,
               "Replace non-negative A entries with a small negative value instead of failing");

  auto& m = c.synth_config;
  app.add_option("--vocab-size", m.vocab_size, "synth: vocabulary size")->capture_default_str();
  app.add_option("--d-model", m.d_model, "synth: residual width")->capture_default_str();
  app.add_option("--d-inner", m.d_inner, "synth: hidden channels")->capture_default_str();
  app.add_option("--d-state", m.d_state, "synth: state size per channel")->capture_default_str();
  app.add_option("--n-layers", m.n_layers, "synth: layers")->capture_default_str();
  app.add_option("--conv-kernel", m.conv_kernel, "synth: conv taps")->capture_default_str();
  app.add_option("--train-length", m.train_length, "synth: training length L")
      ->capture_default_str();
  auto& s = c.synth;
  app.add_option("--global-fraction", s.global_fraction, "synth: share of global channels")
      ->capture_default_str();
  app.add_option("--delta-median", s.delta.median, "synth: median step size")
      ->capture_default_str();
  app.add_option("--delta-spread", s.delta.spread, "synth: step size log spread")
      ->capture_default_str();
  app.add_option("--global-decay", [&s](const CLI::results_t& r) {
        return parse_range(r, s.global_decay);
      }, "synth: decay range LO HI of global channels at L")
      ->expected(2)
      ->type_name("FLOAT FLOAT");
  app.add_option("--local-decay", [&s](const CLI::results_t& r) {
        return parse_range(r, s.local_decay);
      }, "synth: decay range LO HI of local channels at L")
      ->expected(2)
      ->type_name("FLOAT FLOAT");
  app.add_option("--bc-scale", s.bc_scale, "synth: mean B and C gate value")
      ->capture_default_str();
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  CLI::App app{"Long-context analysis and evaluation for selective state-space models",
               "longctx"};
  app.config_formatter(std::make_shared<ConfigJson>());
  app.set_config("--config", "", "JSON file of flag values; command-line flags win");
  app.allow_config_extras(false);
  app.require_subcommand(1);
  add_options(app, cfg);
  for (const auto& [name, entry] : commands()) {
    auto* sub = app.add_subcommand(name, entry.second);
    sub->fallthrough();
    sub->final_callback([&cfg, name = name] { cfg.command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(ErrorCategory::kConfig);
  }

  try {
    commands().at(cfg.command).first(cfg, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(e.category());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorCategory::kData);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace longctx::cli
