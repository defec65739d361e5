#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "longctx/eval.hpp"
#include "text_format.hpp"

namespace longctx {

namespace {

void check_label(const std::string& s, const char* what) {
  if (s.empty() || s.find_first_of(",\n\r\"") != std::string::npos) {
    throw ConfigError(std::string("report ") + what + " '" + s +
                      "' must be non-empty without commas, quotes or newlines");
  }
}

}  // namespace

EvalReport to_report(const PerplexityReport& report) {
  EvalReport out;
  for (const auto& p : report.points) {
    out.rows.push_back({report.mode, p.length, "mean_ce", p.mean_cross_entropy});
    out.rows.push_back({report.mode, p.length, "perplexity", p.perplexity});
    out.rows.push_back(
        {report.mode, p.length, "tokens", static_cast<double>(p.token_count)});
  }
  return out;
}

ReportFormat parse_report_format(const std::string& name) {
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "json") return ReportFormat::kJson;
  throw ConfigError("unknown report format '" + name + "' (expected csv or json)");
}

std::string report_to_csv(const EvalReport& report) {
  std::string out = "mode,length,metric,value\n";
  for (const auto& r : report.rows) {
    check_label(r.mode, "mode");
    check_label(r.metric, "metric");
    out += r.mode + "," + std::to_string(r.length) + "," + r.metric + "," +
           detail::format_real(r.value) + "\n";
  }
  return out;
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::ordered_json doc;
  doc["provenance"] = nlohmann::ordered_json::parse(report.provenance);
  auto& rows = doc["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : report.rows) {
    check_label(r.mode, "mode");
    check_label(r.metric, "metric");
    rows.push_back({{"mode", r.mode},
                    {"length", r.length},
                    {"metric", r.metric},
                    {"value", r.value}});
  }
  return doc.dump(2) + "\n";
}

EvalReport report_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "mode,length,metric,value") {
    throw DataError("report CSV has an unexpected header");
  }
  EvalReport report;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    ReportRow row;
    std::string length, value;
    if (!std::getline(fields, row.mode, ',') || !std::getline(fields, length, ',') ||
        !std::getline(fields, row.metric, ',') || !std::getline(fields, value)) {
      throw DataError("report CSV line " + std::to_string(lineno) + " is malformed");
    }
    try {
      row.length = std::stoull(length);
      row.value = std::stod(value);
    } catch (const std::exception&) {
      throw DataError("report CSV line " + std::to_string(lineno) +
                      " has a non-numeric field");
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

EvalReport report_from_json(const std::string& text) {
  EvalReport report;
  try {
    const auto doc = nlohmann::json::parse(text);
    if (doc.contains("provenance")) report.provenance = doc["provenance"].dump();
    for (const auto& r : doc.at("rows")) {
      report.rows.push_back({r.at("mode").get<std::string>(),
                             r.at("length").get<std::size_t>(),
                             r.at("metric").get<std::string>(),
                             r.at("value").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report JSON: ") + e.what());
  }
  return report;
}

void emit_report(const EvalReport& report, const std::filesystem::path& path,
                 ReportFormat format) {
  const std::string text =
      format == ReportFormat::kCsv ? report_to_csv(report) : report_to_json(report);
  auto out = detail::open_for_write(path);
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

EvalReport read_report(const std::filesystem::path& path, ReportFormat format) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open report " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return format == ReportFormat::kCsv ? report_from_csv(buf.str())
                                      : report_from_json(buf.str());
}

}  // namespace longctx
