#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "slab/common.hpp"

namespace slab {

/// Flat key=value run configuration ('#' starts a comment). Unknown keys are
/// rejected before a run starts.
class Config {
 public:
  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text);

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  std::string get_str(const std::string& key, const std::string& def) const;
  std::string require_str(const std::string& key) const;
  double get_double(const std::string& key, double def) const;
  int get_int(const std::string& key, int def) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t def) const;
  bool get_bool(const std::string& key, bool def) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& def) const;

  /// Throws InvalidArgument when a key is not in the known set.
  void validate_keys(const std::set<std::string>& known) const;

  const std::map<std::string, std::string>& items() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace slab
