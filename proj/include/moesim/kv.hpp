#pragma once

// Line-oriented "key = value" documents used for cost models, instance
// files, experiment configs and run reports. Keys keep insertion order so
// serialization is deterministic; '#' starts a comment line.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace moesim {

/// Shortest decimal form that parses back to the same double.
std::string format_double(double value);
double parse_double(std::string_view text, const std::string& module, const std::string& context);
std::int64_t parse_int(std::string_view text, const std::string& module, const std::string& context);

/// Splits on whitespace and commas.
std::vector<std::string_view> split_list(std::string_view text);
std::string_view trim(std::string_view text);

class KvDocument {
 public:
  explicit KvDocument(std::string module = "kv") : module_(std::move(module)) {}

  static KvDocument parse(std::string_view text, std::string module, const std::string& source = "<memory>");
  static KvDocument load(const std::filesystem::path& path, std::string module);

  void set(std::string key, std::string value);
  void set(std::string key, double value) { set(std::move(key), format_double(value)); }
  void set(std::string key, std::int64_t value) { set(std::move(key), std::to_string(value)); }
  void set(std::string key, std::size_t value) { set(std::move(key), std::to_string(value)); }
  void set(std::string key, bool value) { set(std::move(key), std::string(value ? "true" : "false")); }
  void set(std::string key, const char* value) { set(std::move(key), std::string(value)); }
  void set_list(std::string key, const std::vector<double>& values);
  void set_list(std::string key, const std::vector<std::int64_t>& values);

  bool has(std::string_view key) const;
  const std::string& get(std::string_view key) const;
  std::string get_or(std::string_view key, std::string fallback) const;
  double get_double(std::string_view key) const;
  std::int64_t get_int(std::string_view key) const;
  bool get_bool(std::string_view key) const;
  std::vector<double> get_doubles(std::string_view key) const;
  std::vector<std::int64_t> get_ints(std::string_view key) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string to_string() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::string module_;
  std::string source_ = "<memory>";
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Writes `text` to `path`, creating parent directories.
void write_text_file(const std::filesystem::path& path, std::string_view text, const std::string& module);
std::string read_text_file(const std::filesystem::path& path, const std::string& module);

}  // namespace moesim
