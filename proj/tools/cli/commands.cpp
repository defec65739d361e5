#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "longctx/attention.hpp"
#include "longctx/parallel.hpp"
#include "longctx/rng.hpp"
#include "longctx/token_stream.hpp"

namespace longctx::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

void require(const std::string& value, const char* flag, const std::string& command) {
  if (value.empty()) throw ConfigError(command + " needs " + flag);
}

ModelBundle load(const RunConfig& cfg, std::ostream& err) {
  require(cfg.model_dir, "--model", cfg.command);
  LoadOptions opts;
  opts.clamp_nonnegative_a = cfg.clamp_a;
  opts.warn = [&err](const std::string& msg) { err << "warning: " << msg << '\n'; };
  return load_model(cfg.model_dir, opts);
}

RunMode run_mode(const RunConfig& cfg, const ModelBundle& model) {
  if (cfg.mode == "vanilla") return RunMode::vanilla();
  if (cfg.mode != "longmamba") {
    throw ConfigError("unknown mode '" + cfg.mode + "' (expected vanilla or longmamba)");
  }
  if (cfg.table_path.empty()) {
    throw ConfigError("mode longmamba requires a threshold table (--table)");
  }
  auto mode = RunMode::longmamba(read_threshold_table(cfg.table_path), model.config);
  mode.validate(model.config);
  return mode;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

ojson provenance(const RunConfig& cfg) {
  ojson p;
  p["tool"] = "longctx";
  p["command"] = cfg.command;
  p["seed"] = cfg.seed;
  p["mode"] = cfg.mode;
  p["theta"] = cfg.theta;
  p["clamp_percent"] = cfg.clamp_percent;
  p["interval"] = cfg.interval;
  p["calib_count"] = cfg.calib_count;
  p["epsilon"] = cfg.epsilon;
  if (!cfg.model_dir.empty()) p["model"] = cfg.model_dir;
  if (!cfg.table_path.empty()) p["table"] = cfg.table_path;
  if (!cfg.tokens_path.empty()) p["tokens"] = cfg.tokens_path;
  if (!cfg.calibration_path.empty()) p["calibration"] = cfg.calibration_path;
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

// JSON carries its provenance inline; CSV gets a sidecar file (or stderr
// when printing to stdout) so the columns stay fixed.
void emit(const RunConfig& cfg, const std::string& text, const ojson& prov,
          bool is_json, std::ostream& out, std::ostream& err) {
  if (cfg.out.empty()) {
    out << text;
    if (!is_json) err << "provenance: " << prov.dump() << '\n';
    return;
  }
  write_text(cfg.out, text);
  if (!is_json) write_text(cfg.out + ".provenance.json", prov.dump(2) + "\n");
}

bool wants_json(const RunConfig& cfg) {
  return parse_report_format(cfg.format) == ReportFormat::kJson;
}

std::vector<TokenId> read_tokens(const std::string& path, const char* flag,
                                 const std::string& command) {
  require(path, flag, command);
  return read_token_stream(path);
}

}  // namespace

std::vector<std::vector<TokenId>> sample_sequences(std::span<const TokenId> stream,
                                                   std::size_t count,
                                                   std::size_t length,
                                                   std::uint64_t seed) {
  if (count == 0) throw ConfigError("calibration count must be positive");
  if (stream.size() < length) {
    throw DataError("calibration stream has " + std::to_string(stream.size()) +
                    " tokens, fewer than the training length " +
                    std::to_string(length));
  }
  Rng rng(seed);
  std::vector<std::vector<TokenId>> out;
  for (std::size_t n = 0; n < count; ++n) {
    const auto start = rng.below(stream.size() - length + 1);
    out.emplace_back(stream.begin() + static_cast<std::ptrdiff_t>(start),
                     stream.begin() + static_cast<std::ptrdiff_t>(start + length));
  }
  return out;
}

void cmd_analyze(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  require(cfg.out, "--out (output directory)", cfg.command);
  const auto model = load(cfg, err);
  const auto mode = run_mode(cfg, model);
  auto tokens = read_tokens(cfg.tokens_path, "--tokens", cfg.command);
  if (!cfg.lengths.empty()) {
    if (tokens.size() < cfg.lengths.front()) {
      throw DataError("token stream has " + std::to_string(tokens.size()) +
                      " tokens, fewer than --lengths " +
                      std::to_string(cfg.lengths.front()));
    }
    tokens.resize(cfg.lengths.front());
  }
  if (tokens.empty()) throw DataError("analyze needs a non-empty token stream");
  const auto& mc = model.config;
  if (cfg.layer >= mc.n_layers) {
    throw ConfigError("layer " + std::to_string(cfg.layer) + " out of range [0, " +
                      std::to_string(mc.n_layers) + ")");
  }
  std::vector<std::size_t> channels = cfg.channels;
  if (channels.empty()) {
    for (std::size_t c = 0; c < mc.d_inner; ++c) channels.push_back(c);
  }
  const HeatmapScale scale = cfg.scale == "linear" ? HeatmapScale::kLinear
                             : cfg.scale == "log"  ? HeatmapScale::kLog
                                                   : throw ConfigError("unknown --scale " + cfg.scale);

  ForwardTrace trace;
  forward(model, tokens, mode, &trace);
  const auto inputs = trace.layers[cfg.layer].cast<double>();
  const DecayMatrix<double> a(model.layers[cfg.layer].a.values().cast<double>());
  const auto policy = mode.policy(cfg.layer, tokens.size());
  const auto slices = attention_scores(inputs, a, channels, RowRange{}, cfg.layer,
                                       policy ? &*policy : nullptr);

  const fs::path dir(cfg.out);
  fs::create_directories(dir);
  const std::string tag = "l" + std::to_string(cfg.layer);
  std::ostringstream rf_csv, decay_csv;
  rf_csv << "channel,position,span\n";
  decay_csv << "channel,t,decay,log_decay\n";
  for (const auto& slice : slices) {
    export_heatmap(slice,
                   dir / ("attention_" + tag + "_c" + std::to_string(slice.channel) + ".csv"),
                   scale, cfg.svg);
    const auto rf = receptive_field(slice, cfg.epsilon);
    for (std::size_t r = 0; r < rf.positions.size(); ++r) {
      rf_csv << slice.channel << ',' << rf.positions[r] << ',' << rf.span[r] << '\n';
    }
    const auto curve = decay_curve(inputs.delta, a, slice.channel, cfg.layer);
    for (std::size_t t = 0; t < curve.values.size(); ++t) {
      char line[96];
      std::snprintf(line, sizeof(line), "%zu,%zu,%.17g,%.17g\n", slice.channel, t + 1,
                    curve.values[t], curve.log_values[t]);
      decay_csv << line;
    }
    out << "layer " << cfg.layer << " channel " << slice.channel << " span "
        << rf.span.back() << " at position " << rf.positions.back() << '\n';
  }
  write_text(dir / ("receptive_field_" + tag + ".csv"), rf_csv.str());
  write_text(dir / ("decay_" + tag + ".csv"), decay_csv.str());
  auto prov = provenance(cfg);
  prov["layer"] = cfg.layer;
  prov["channels"] = channels;
  prov["length"] = tokens.size();
  prov["scale"] = cfg.scale;
  write_text(dir / "provenance.json", prov.dump(2) + "\n");
}

void cmd_classify(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  if (!(cfg.theta > 0.0)) throw ConfigError("--theta must be positive");
  const auto model = load(cfg, err);
  const auto stream = read_tokens(cfg.calibration_path, "--calibration", cfg.command);
  const auto seqs = sample_sequences(stream, cfg.calib_count, model.config.train_length,
                                     cfg.seed);
  const auto pass = run_calibration(model, seqs);
  auto prov = provenance(cfg);
  const bool json = wants_json(cfg);

  if (!cfg.sweep) {
    const auto cls = classify_model(model, pass, cfg.theta);
    if (json) {
      auto doc = ojson::parse(classification_report_json(cls));
      doc["provenance"] = prov;
      emit(cfg, doc.dump(2) + "\n", prov, true, out, err);
    } else {
      emit(cfg, classification_report_csv(cls), prov, false, out, err);
    }
    return;
  }

  std::ostringstream csv;
  csv << "theta,layer,n_global,n_local\n";
  ojson sweep = ojson::array();
  for (double theta : kThetaGrid) {
    const auto cls = classify_model(model, pass, theta);
    ojson layers = ojson::array();
    for (const auto& c : cls) {
      char line[96];
      std::snprintf(line, sizeof(line), "%.17g,%zu,%zu,%zu\n", theta, c.layer,
                    c.n_global(), c.n_local());
      csv << line;
      layers.push_back({{"layer", c.layer}, {"n_global", c.n_global()},
                        {"n_local", c.n_local()}});
    }
    sweep.push_back({{"theta", theta}, {"layers", std::move(layers)}});
  }
  if (json) {
    ojson doc;
    doc["provenance"] = prov;
    doc["sweep"] = std::move(sweep);
    emit(cfg, doc.dump(2) + "\n", prov, true, out, err);
  } else {
    emit(cfg, csv.str(), prov, false, out, err);
  }
}

namespace {

ThresholdTable calibrate_table(const ModelBundle& model, const CalibrationPass& pass,
                               const RunConfig& cfg, double theta, std::size_t s_max) {
  const auto cls = classify_model(model, pass, theta);
  const auto dists = collect_delta_stats(pass, cfg.clamp_percent);
  auto table = build_threshold_table(select_global(dists, cls),
                                     model.config.train_length, s_max, cfg.interval);
  table.theta = theta;
  table.clamp_percent = cfg.clamp_percent;
  return table;
}

}  // namespace

void cmd_calibrate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  require(cfg.out, "--out (table path)", cfg.command);
  if (!(cfg.theta > 0.0)) throw ConfigError("--theta must be positive");
  const auto model = load(cfg, err);
  const std::size_t L = model.config.train_length;
  const std::size_t s_max = cfg.s_max.value_or(16 * L);
  const auto stream = read_tokens(cfg.calibration_path, "--calibration", cfg.command);
  const auto seqs = sample_sequences(stream, cfg.calib_count, L, cfg.seed);
  const auto pass = run_calibration(model, seqs);

  auto prov = provenance(cfg);
  prov["s_max"] = s_max;
  ojson hashes = ojson::array();
  for (const auto& s : seqs) hashes.push_back(hex64(token_hash(s)));
  prov["sequence_hashes"] = std::move(hashes);

  double theta = cfg.theta;
  if (cfg.sweep) {
    // Pick theta from the grid by mean perplexity over --lengths.
    const auto tokens = read_tokens(cfg.tokens_path, "--tokens", cfg.command);
    if (cfg.lengths.empty()) throw ConfigError("calibrate --sweep needs --lengths");
    std::ostringstream csv;
    csv << "theta,length,perplexity\n";
    double best = std::numeric_limits<double>::infinity();
    for (double t : kThetaGrid) {
      const auto table = calibrate_table(model, pass, cfg, t, s_max);
      const RunMode mode = RunMode::longmamba(table, model.config);
      const auto report = perplexity(ModelLogits(model, mode), tokens, cfg.lengths,
                                     "longmamba");
      double mean = 0.0;
      for (const auto& p : report.points) {
        char line[96];
        std::snprintf(line, sizeof(line), "%.17g,%zu,%.17g\n", t, p.length, p.perplexity);
        csv << line;
        mean += p.perplexity / static_cast<double>(report.points.size());
      }
      if (mean < best) {
        best = mean;
        theta = t;
      }
    }
    out << csv.str();
    prov["sweep_selected_theta"] = theta;
    prov["theta"] = theta;
  }

  auto table = calibrate_table(model, pass, cfg, theta, s_max);
  table.provenance = prov.dump();
  write_threshold_table(table, cfg.out);
  std::size_t n_global = 0;
  for (const auto& l : table.layers) n_global += l.channels.size();
  err << "wrote " << cfg.out << ": " << n_global << " global channels, rows "
      << table.interval << ".." << table.last_row() << '\n';
}

void cmd_eval_ppl(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto model = load(cfg, err);
  const auto mode = run_mode(cfg, model);
  if (cfg.lengths.empty()) throw ConfigError("eval-ppl needs --lengths");
  const auto tokens = read_tokens(cfg.tokens_path, "--tokens", cfg.command);
  const bool json = wants_json(cfg);
  auto report = to_report(perplexity(ModelLogits(model, mode), tokens, cfg.lengths, cfg.mode));
  const auto prov = provenance(cfg);
  report.provenance = prov.dump();
  emit(cfg, json ? report_to_json(report) : report_to_csv(report), prov, json, out, err);
}

void cmd_eval_passkey(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto model = load(cfg, err);
  const auto mode = run_mode(cfg, model);
  if (cfg.lengths.empty()) throw ConfigError("eval-passkey needs --lengths");
  if (cfg.instances == 0) throw ConfigError("--instances must be positive");
  const bool json = wants_json(cfg);

  Rng rng(cfg.seed);
  EvalReport report;
  for (std::size_t length : cfg.lengths) {
    const auto pc = PasskeyConfig::for_vocab(model.config.vocab_size, length, cfg.key_length);
    pc.validate();
    std::vector<std::uint64_t> seeds(cfg.instances);
    for (auto& s : seeds) s = rng.next_u64();
    std::vector<PasskeyScore> scores(cfg.instances);
    parallel_for(cfg.instances, [&](std::size_t n) {
      const auto inst = gen_passkey(pc, seeds[n]);
      const auto gen = generate_greedy(model, inst.tokens, cfg.key_length, mode);
      const std::span<const TokenId> continuation(gen.data() + inst.tokens.size(),
                                                  gen.size() - inst.tokens.size());
      scores[n] = score_passkey(continuation, inst);
    });
    double exact = 0.0, overlap = 0.0;
    for (const auto& s : scores) {
      exact += s.exact ? 1.0 : 0.0;
      overlap += s.token_overlap;
    }
    const double n = static_cast<double>(cfg.instances);
    report.rows.push_back({cfg.mode, length, "exact_rate", exact / n});
    report.rows.push_back({cfg.mode, length, "mean_overlap", overlap / n});
  }
  auto prov = provenance(cfg);
  prov["key_length"] = cfg.key_length;
  prov["instances"] = cfg.instances;
  report.provenance = prov.dump();
  emit(cfg, json ? report_to_json(report) : report_to_csv(report), prov, json, out, err);
}

void cmd_generate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto model = load(cfg, err);
  const auto mode = run_mode(cfg, model);
  if (!cfg.prompt.empty() && !cfg.tokens_path.empty()) {
    throw ConfigError("give the prompt either with --prompt or with --tokens, not both");
  }
  const auto prompt = cfg.prompt.empty() && !cfg.tokens_path.empty()
                          ? read_token_stream(cfg.tokens_path)
                          : cfg.prompt;
  const auto ids = generate_greedy(model, prompt, cfg.n_new, mode);
  std::string text;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) text += ' ';
    text += std::to_string(ids[i]);
  }
  text += '\n';
  if (cfg.out.empty()) {
    out << text;
  } else {
    write_text(cfg.out, text);
  }
}

void cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  require(cfg.out, "--out (model directory)", cfg.command);
  SynthOptions opts = cfg.synth;
  opts.seed = cfg.seed;
  const auto m = synth_model(cfg.synth_config, opts);
  save_model(m.bundle, cfg.out);

  ojson planted;
  planted["seed"] = cfg.seed;
  planted["global_fraction"] = opts.global_fraction;
  planted["global_decay"] = {opts.global_decay.lo, opts.global_decay.hi};
  planted["local_decay"] = {opts.local_decay.lo, opts.local_decay.hi};
  planted["delta_median"] = opts.delta.median;
  planted["delta_spread"] = opts.delta.spread;
  planted["bc_scale"] = opts.bc_scale;
  ojson layers = ojson::array();
  std::size_t n_global = 0;
  for (std::size_t l = 0; l < m.planted.size(); ++l) {
    std::vector<std::size_t> global;
    for (std::size_t c = 0; c < m.planted[l].size(); ++c) {
      if (m.planted[l][c] == ChannelKind::kGlobal) global.push_back(c);
    }
    n_global += global.size();
    layers.push_back({{"layer", l}, {"global", global}});
  }
  planted["layers"] = std::move(layers);
  planted["provenance"] = provenance(cfg);
  write_text(fs::path(cfg.out) / "planted.json", planted.dump(2) + "\n");
  out << "wrote " << cfg.out << ": " << m.bundle.config.n_layers << " layers, "
      << n_global << " planted global channels\n";
}

}  // namespace longctx::cli
