#include "slab/config.hpp"

#include <fstream>
#include <sstream>

namespace slab {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::from_file(const std::string& path) {
  std::ifstream f(path);
  SLAB_REQUIRE(f.good(), "cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_string(ss.str());
}

Config Config::from_string(const std::string& text) {
  Config cfg;
  std::istringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    SLAB_REQUIRE(eq != std::string::npos,
                 "config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    SLAB_REQUIRE(!key.empty(), "config line " + std::to_string(lineno) + ": empty key");
    cfg.kv_[key] = value;
  }
  return cfg;
}

std::string Config::get_str(const std::string& key, const std::string& def) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? def : it->second;
}

std::string Config::require_str(const std::string& key) const {
  auto it = kv_.find(key);
  SLAB_REQUIRE(it != kv_.end(), "config: missing required key '" + key + "'");
  return it->second;
}

double Config::get_double(const std::string& key, double def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  try {
    std::size_t pos = 0;
    double v = std::stod(it->second, &pos);
    SLAB_REQUIRE(pos == it->second.size(), "trailing characters");
    return v;
  } catch (const std::exception&) {
    throw InvalidArgument("config: key '" + key + "' is not a number: " + it->second);
  }
}

int Config::get_int(const std::string& key, int def) const {
  double v = get_double(key, def);
  SLAB_REQUIRE(v == static_cast<int>(v), "config: key '" + key + "' is not an integer");
  return static_cast<int>(v);
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw InvalidArgument("config: key '" + key + "' is not an unsigned integer");
  }
}

bool Config::get_bool(const std::string& key, bool def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw InvalidArgument("config: key '" + key + "' is not a boolean: " + v);
}

std::vector<int> Config::get_int_list(const std::string& key,
                                      const std::vector<int>& def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  std::vector<int> out;
  std::stringstream ss(it->second);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = tok.empty() ? tok : tok;
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw InvalidArgument("config: key '" + key + "' is not an int list: " + it->second);
    }
  }
  SLAB_REQUIRE(!out.empty(), "config: key '" + key + "' is empty");
  return out;
}

void Config::validate_keys(const std::set<std::string>& known) const {
  for (const auto& [k, v] : kv_) {
    (void)v;
    if (!known.count(k)) throw InvalidArgument("config: unknown key '" + k + "'");
  }
}

}  // namespace slab
