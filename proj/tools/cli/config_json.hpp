#pragma once

// JSON config files for CLI11. A config file is a flat JSON object whose keys
// are long flag names without the leading dashes; arrays supply multi-valued
// options and booleans set flags.

#include <istream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

namespace longctx::cli {

class ConfigJson : public CLI::Config {
 public:
  std::string to_config(const CLI::App* app, bool default_also, bool,
                        std::string) const override {
    nlohmann::ordered_json doc = nlohmann::ordered_json::object();
    for (const CLI::Option* opt : app->get_options({})) {
      const std::string name = opt->get_single_name();
      if (opt->get_lnames().empty() || name == "help" || name == "config") continue;
      auto values = opt->reduced_results();
      if (values.empty() && default_also && !opt->get_default_str().empty()) {
        values = {opt->get_default_str()};
      }
      if (values.empty()) continue;
      if (opt->get_expected_max() > 1) {
        doc[name] = values;
      } else {
        doc[name] = values.front();
      }
    }
    return doc.dump(2) + "\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(input);
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : doc.items()) {
      CLI::ConfigItem item;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(key, v));
      } else {
        item.inputs.push_back(scalar(key, value));
      }
      items.push_back(std::move(item));
    }
    return items;
  }

 private:
  static std::string scalar(const std::string& key, const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    throw CLI::ConversionError("config key '" + key +
                               "' must be a string, number, boolean or array of those");
  }
};

}  // namespace longctx::cli
