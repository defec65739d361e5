#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "longctx/channels.hpp"
#include "text_format.hpp"

namespace longctx {

using nlohmann::json;

std::string threshold_table_to_json(const ThresholdTable& table) {
  json doc;
  doc["format_version"] = table.format_version;
  doc["train_length"] = table.train_length;
  doc["interval"] = table.interval;
  doc["s_max"] = table.s_max;
  doc["theta"] = table.theta;
  doc["clamp_percent"] = table.clamp_percent;
  json layers = json::array();
  for (const auto& layer : table.layers) {
    json channels = json::array();
    for (const auto& ch : layer.channels) {
      json entries = json::array();
      for (const auto& e : ch.entries) entries.push_back({e.length, e.threshold});
      channels.push_back({{"channel", ch.channel}, {"entries", std::move(entries)}});
    }
    layers.push_back({{"layer", layer.layer}, {"channels", std::move(channels)}});
  }
  doc["layers"] = std::move(layers);
  doc["provenance"] = json::parse(table.provenance.empty() ? "{}" : table.provenance);
  return doc.dump(2) + "\n";
}

ThresholdTable threshold_table_from_json(const std::string& text) {
  ThresholdTable table;
  try {
    const json doc = json::parse(text);
    table.format_version = doc.at("format_version").get<int>();
    if (table.format_version != kThresholdTableFormat) {
      throw DataError("unsupported threshold table format_version " +
                      std::to_string(table.format_version));
    }
    table.train_length = doc.at("train_length").get<std::size_t>();
    table.interval = doc.at("interval").get<std::size_t>();
    table.theta = doc.at("theta").get<double>();
    table.clamp_percent = doc.at("clamp_percent").get<double>();
    if (table.interval == 0) throw DataError("threshold table interval is 0");
    std::size_t longest = table.interval;
    for (const auto& jl : doc.at("layers")) {
      LayerThresholds layer{jl.at("layer").get<std::size_t>(), {}};
      for (const auto& jc : jl.at("channels")) {
        ChannelThresholds ch{jc.at("channel").get<std::size_t>(), {}};
        std::size_t previous = 0;
        for (const auto& je : jc.at("entries")) {
          ThresholdEntry e{je.at(0).get<std::size_t>(), je.at(1).get<double>()};
          if (e.length % table.interval != 0 || e.length <= previous) {
            throw DataError("threshold table rows must be increasing multiples of " +
                            std::to_string(table.interval) + "; got " +
                            std::to_string(e.length));
          }
          if (!(e.threshold >= 0.0)) {
            throw DataError("threshold table holds a negative threshold");
          }
          previous = e.length;
          longest = std::max(longest, e.length);
          ch.entries.push_back(e);
        }
        layer.channels.push_back(std::move(ch));
      }
      table.layers.push_back(std::move(layer));
    }
    table.s_max = doc.contains("s_max") ? doc["s_max"].get<std::size_t>() : longest;
    table.provenance = doc.contains("provenance") ? doc["provenance"].dump() : "{}";
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed threshold table: ") + e.what());
  }
  return table;
}

void write_threshold_table(const ThresholdTable& table,
                           const std::filesystem::path& path) {
  auto out = detail::open_for_write(path);
  out << threshold_table_to_json(table);
  if (!out) throw DataError("failed writing " + path.string());
}

ThresholdTable read_threshold_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read threshold table " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return threshold_table_from_json(buf.str());
}

std::string classification_report_json(
    std::span<const ChannelClassification> layers) {
  json doc;
  doc["theta"] = layers.empty() ? 0.0 : layers.front().theta;
  doc["train_length"] = layers.empty() ? 0 : layers.front().train_length;
  json arr = json::array();
  for (const auto& cls : layers) {
    json labels = json::array();
    for (auto k : cls.labels) labels.push_back(k == ChannelKind::kGlobal ? "global" : "local");
    arr.push_back({{"layer", cls.layer},
                   {"n_global", cls.n_global()},
                   {"n_local", cls.n_local()},
                   {"labels", std::move(labels)},
                   {"decay", cls.decay_at_length}});
  }
  doc["layers"] = std::move(arr);
  return doc.dump(2) + "\n";
}

std::string classification_report_csv(
    std::span<const ChannelClassification> layers) {
  std::ostringstream out;
  out << "layer,n_global,n_local\n";
  for (const auto& cls : layers) {
    out << cls.layer << ',' << cls.n_global() << ',' << cls.n_local() << '\n';
  }
  return out.str();
}

}  // namespace longctx
