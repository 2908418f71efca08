#include "run_config.hpp"

#include <fstream>

namespace dualkb::cli {

namespace {

CLI::ValidationError bad(const std::string& key, const std::string& what) {
  return CLI::ValidationError("--" + key, what);
}

Json scalar(const std::string& key, const std::string& text, const Json& like) {
  try {
    std::size_t used = 0;
    if (like.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw bad(key, "expected true or false, got '" + text + "'");
    }
    if (like.is_number_unsigned()) {
      if (!text.empty() && text[0] == '-') throw bad(key, "expected a non-negative integer");
      const auto v = std::stoull(text, &used);
      if (used == text.size()) return v;
    } else if (like.is_number_integer()) {
      const auto v = std::stoll(text, &used);
      if (used == text.size()) return v;
    } else if (like.is_number_float()) {
      const auto v = std::stod(text, &used);
      if (used == text.size()) return v;
    } else {
      return text;
    }
  } catch (const std::logic_error&) {
  }
  throw bad(key, "cannot read '" + text + "' as " + std::string(like.type_name()));
}

/// Checks a config-file value against the default's type.
void check_type(const std::string& key, const Json& value, const Json& like) {
  const bool ok = like.is_null() || (like.is_boolean() && value.is_boolean()) ||
                  (like.is_number_unsigned() && value.is_number_unsigned()) ||
                  (like.is_number_integer() && !like.is_number_unsigned() && value.is_number_integer()) ||
                  (like.is_number_float() && value.is_number()) || (like.is_string() && value.is_string()) ||
                  (like.is_array() && value.is_array());
  if (!ok) throw bad(key, "config file value has type " + std::string(value.type_name()));
}

}  // namespace

Json convert(const std::string& key, const std::vector<std::string>& raw, const Json& like) {
  if (!like.is_array()) {
    if (raw.size() != 1) throw bad(key, "expects one value");
    return like.is_null() ? Json(raw[0]) : scalar(key, raw[0], like);
  }
  const bool numbers = !like.empty() && like.front().is_number_integer();
  Json out = Json::array();
  for (const auto& item : raw) {
    const auto dash = item.find('-', 1);
    if (numbers && dash != std::string::npos) {
      const auto lo = scalar(key, item.substr(0, dash), Json(0)).get<std::int64_t>();
      const auto hi = scalar(key, item.substr(dash + 1), Json(0)).get<std::int64_t>();
      if (hi < lo) throw bad(key, "empty range '" + item + "'");
      for (auto v = lo; v <= hi; ++v) out.push_back(v);
    } else {
      out.push_back(numbers ? scalar(key, item, Json(0)) : Json(item));
    }
  }
  return out;
}

RunConfig::RunConfig(CLI::App& sub, std::vector<Setting> settings) : sub_(&sub), settings_(std::move(settings)) {
  sub.add_option("--config", config_path_, "JSON config file or run manifest; flags override it");
  for (const auto& s : settings_) {
    values_[s.key] = s.default_value;
    auto* opt = sub.add_option("--" + s.key, raw_[s.key], s.help);
    if (s.default_value.is_array()) {
      opt->expected(1, CLI::detail::expected_max_vector_size);
    } else {
      opt->expected(1);
    }
    opt->default_str(s.default_value.is_string() ? s.default_value.get<std::string>() : s.default_value.dump());
  }
}

void RunConfig::resolve() {
  if (!config_path_.empty()) {
    std::ifstream in(config_path_);
    if (!in) throw CLI::ValidationError("--config", "cannot open " + config_path_);
    Json doc;
    try {
      in >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ValidationError("--config", e.what());
    }
    if (doc.is_object() && doc.contains("config") && doc["config"].is_object()) {
      Json inner = doc["config"];
      doc = std::move(inner);
    }
    if (!doc.is_object()) throw CLI::ValidationError("--config", "expected a JSON object");
    for (const auto& [key, value] : doc.items()) {
      if (!values_.contains(key)) throw bad(key, "unknown setting in " + config_path_);
      const Json& like = values_[key];
      check_type(key, value, like);
      values_[key] = like.is_number_float() ? Json(value.get<double>()) : Json(value);
    }
  }
  for (const auto& s : settings_) {
    const auto& raw = raw_[s.key];
    if (!raw.empty()) values_[s.key] = convert(s.key, raw, s.default_value);
  }
}

}  // namespace dualkb::cli
