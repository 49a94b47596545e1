#include "moesim/kv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "moesim/error.hpp"

namespace moesim {

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text, const std::string& module, const std::string& context) {
  text = trim(text);
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw InvalidInput(module, context + ": cannot parse number '" + std::string(text) + "'");
  }
  return value;
}

std::int64_t parse_int(std::string_view text, const std::string& module, const std::string& context) {
  text = trim(text);
  std::int64_t value = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw InvalidInput(module, context + ": cannot parse integer '" + std::string(text) + "'");
  }
  return value;
}

std::string_view trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return text.substr(first, last - first + 1);
}

std::vector<std::string_view> split_list(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == ',')) ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ' && text[j] != '\t' && text[j] != ',') ++j;
    if (j > i) out.push_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

KvDocument KvDocument::parse(std::string_view text, std::string module, const std::string& source) {
  KvDocument doc(std::move(module));
  doc.source_ = source;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = trim(text.substr(pos, end - pos));
    ++line_no;
    pos = end + 1;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw InvalidInput(doc.module_, source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw InvalidInput(doc.module_, source + ":" + std::to_string(line_no) + ": empty key");
    if (doc.has(key)) {
      throw InvalidInput(doc.module_, source + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
    doc.entries_.emplace_back(key, std::string(trim(line.substr(eq + 1))));
  }
  return doc;
}

KvDocument KvDocument::load(const std::filesystem::path& path, std::string module) {
  const std::string text = read_text_file(path, module);
  return parse(text, std::move(module), path.string());
}

void KvDocument::set(std::string key, std::string value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  entries_.emplace_back(std::move(key), std::move(value));
}

void KvDocument::set_list(std::string key, const std::vector<double>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) s += ' ';
    s += format_double(values[i]);
  }
  set(std::move(key), std::move(s));
}

void KvDocument::set_list(std::string key, const std::vector<std::int64_t>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(values[i]);
  }
  set(std::move(key), std::move(s));
}

bool KvDocument::has(std::string_view key) const {
  for (const auto& [k, v] : entries_) {
    if (k == key) return true;
  }
  return false;
}

const std::string& KvDocument::get(std::string_view key) const {
  for (const auto& [k, v] : entries_) {
    if (k == key) return v;
  }
  throw InvalidInput(module_, source_ + ": missing key '" + std::string(key) + "'");
}

std::string KvDocument::get_or(std::string_view key, std::string fallback) const {
  return has(key) ? get(key) : fallback;
}

double KvDocument::get_double(std::string_view key) const {
  return parse_double(get(key), module_, source_ + ": key '" + std::string(key) + "'");
}

std::int64_t KvDocument::get_int(std::string_view key) const {
  return parse_int(get(key), module_, source_ + ": key '" + std::string(key) + "'");
}

bool KvDocument::get_bool(std::string_view key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InvalidInput(module_, source_ + ": key '" + std::string(key) + "' is not a boolean");
}

std::vector<double> KvDocument::get_doubles(std::string_view key) const {
  std::vector<double> out;
  for (auto tok : split_list(get(key))) out.push_back(parse_double(tok, module_, source_ + ": key '" + std::string(key) + "'"));
  return out;
}

std::vector<std::int64_t> KvDocument::get_ints(std::string_view key) const {
  std::vector<std::int64_t> out;
  for (auto tok : split_list(get(key))) out.push_back(parse_int(tok, module_, source_ + ": key '" + std::string(key) + "'"));
  return out;
}

std::string KvDocument::to_string() const {
  std::string out;
  for (const auto& [k, v] : entries_) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

void KvDocument::save(const std::filesystem::path& path) const { write_text_file(path, to_string(), module_); }

void write_text_file(const std::filesystem::path& path, std::string_view text, const std::string& module) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput(module, "cannot open '" + path.string() + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw InvalidInput(module, "failed writing '" + path.string() + "'");
}

std::string read_text_file(const std::filesystem::path& path, const std::string& module) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput(module, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace moesim
