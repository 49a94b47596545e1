#include "moesim/trace_io.hpp"

#include <map>
#include <string>
#include <string_view>

#include "moesim/error.hpp"
#include "moesim/kv.hpp"

namespace moesim {

namespace {

constexpr std::string_view kTraceTag = "moesim-trace";
constexpr std::string_view kGateTag = "moesim-gate";
constexpr std::string_view kCalibrationTag = "moesim-residuals";
constexpr std::string_view kVersion = "v1";

class LineReader {
 public:
  explicit LineReader(std::string text) : text_(std::move(text)) {}

  bool next(std::string_view& line) {
    while (pos_ < text_.size()) {
      auto end = text_.find('\n', pos_);
      if (end == std::string::npos) end = text_.size();
      line = trim(std::string_view(text_).substr(pos_, end - pos_));
      pos_ = end + 1;
      ++line_no_;
      if (!line.empty() && line.front() != '#') return true;
    }
    return false;
  }

  std::size_t line_no() const { return line_no_; }

 private:
  std::string text_;
  std::size_t pos_ = 0;
  std::size_t line_no_ = 0;
};

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto at = text.find(sep, start);
    out.push_back(trim(text.substr(start, at == std::string_view::npos ? std::string_view::npos : at - start)));
    if (at == std::string_view::npos) break;
    start = at + 1;
  }
  return out;
}

// "tag v1 key=value key=value ..."
std::map<std::string, std::string, std::less<>> parse_header(std::string_view line, std::string_view tag,
                                                             const std::string& module, const std::string& source) {
  const auto tokens = split_list(line);
  if (tokens.size() < 2 || tokens[0] != tag || tokens[1] != kVersion) {
    throw InvalidInput(module, source + ":1: expected header '" + std::string(tag) + " " + std::string(kVersion) + " ...'");
  }
  std::map<std::string, std::string, std::less<>> fields;
  for (std::size_t i = 2; i < tokens.size(); ++i) {
    const auto eq = tokens[i].find('=');
    if (eq == std::string_view::npos) throw InvalidInput(module, source + ":1: malformed header field '" + std::string(tokens[i]) + "'");
    fields.emplace(std::string(tokens[i].substr(0, eq)), std::string(tokens[i].substr(eq + 1)));
  }
  return fields;
}

std::int64_t header_int(const std::map<std::string, std::string, std::less<>>& fields, std::string_view key,
                        const std::string& module, const std::string& source) {
  const auto it = fields.find(key);
  if (it == fields.end()) throw InvalidInput(module, source + ":1: header is missing '" + std::string(key) + "'");
  const auto v = parse_int(it->second, module, source + ":1: header field '" + std::string(key) + "'");
  if (v < 0) throw InvalidInput(module, source + ":1: header field '" + std::string(key) + "' is negative");
  return v;
}

std::size_t header_size(const std::map<std::string, std::string, std::less<>>& fields, std::string_view key,
                        const std::string& module, const std::string& source) {
  return static_cast<std::size_t>(header_int(fields, key, module, source));
}

void append_doubles(std::string& out, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ' ';
    out += format_double(values[i]);
  }
}

void append_ints(std::string& out, std::span<const std::int64_t> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(values[i]);
  }
}

std::vector<double> read_doubles(std::string_view text, std::size_t expected, const std::string& module,
                                 const std::string& context) {
  const auto tokens = split_list(text);
  if (tokens.size() != expected) {
    throw InvalidInput(module, context + ": has " + std::to_string(tokens.size()) + " values, expected " +
                                   std::to_string(expected));
  }
  std::vector<double> out;
  out.reserve(expected);
  for (auto t : tokens) out.push_back(parse_double(t, module, context));
  return out;
}

}  // namespace

std::filesystem::path gate_sidecar_path(const std::filesystem::path& trace_path) {
  auto p = trace_path;
  p += ".gate";
  return p;
}

static std::string provenance_lines(const std::vector<std::string>& provenance) {
  std::string out;
  for (const auto& p : provenance) out += "# " + p + "\n";
  return out;
}

void save_trace(const Trace& trace, const std::filesystem::path& path, const std::vector<std::string>& provenance) {
  trace.validate();
  const ModelConfig& c = trace.config;
  std::string out;
  out += std::string(kTraceTag) + " " + std::string(kVersion);
  out += " layers=" + std::to_string(c.num_layers);
  out += " experts=" + std::to_string(c.num_routed_experts);
  out += " shared=" + std::to_string(c.num_shared_experts);
  out += " top_k=" + std::to_string(c.top_k);
  out += " hidden=" + std::to_string(c.hidden_dim);
  out += " batch=" + std::to_string(trace.batch_size);
  out += " tokens_per_step=" + std::to_string(trace.tokens_per_step);
  out += " phase=" + std::string(to_string(trace.phase));
  out += " seed=" + std::to_string(trace.generator_seed);
  out += " features=" + std::string(trace.has_features ? "1" : "0");
  out += " gate=" + std::string(trace.gate ? "1" : "0");
  out += " steps=" + std::to_string(trace.steps.size());
  out += '\n';
  out += provenance_lines(provenance);

  // <index> <eos> | w(layer 0) ; w(layer 1) ... [| h(layer 0) ; h(layer 1) ...]
  for (const TokenStep& step : trace.steps) {
    out += std::to_string(step.index);
    out += step.eos ? " 1 | " : " 0 | ";
    for (std::size_t l = 0; l < step.workloads.size(); ++l) {
      if (l) out += " ; ";
      append_ints(out, step.workloads[l]);
    }
    if (trace.has_features) {
      out += " | ";
      for (std::size_t l = 0; l < step.hidden.size(); ++l) {
        if (l) out += " ; ";
        append_doubles(out, step.hidden[l].data);
      }
    }
    out += '\n';
  }
  write_text_file(path, out, "trace");
  if (trace.gate) save_gate_params(*trace.gate, gate_sidecar_path(path));
}

Trace load_trace(const std::filesystem::path& path) {
  const std::string source = path.string();
  LineReader reader(read_text_file(path, "trace"));
  std::string_view line;
  if (!reader.next(line)) throw InvalidInput("trace", source + ": empty trace file");
  const auto h = parse_header(line, kTraceTag, "trace", source);

  Trace trace;
  trace.config.num_layers = header_size(h, "layers", "trace", source);
  trace.config.num_routed_experts = header_size(h, "experts", "trace", source);
  trace.config.num_shared_experts = header_size(h, "shared", "trace", source);
  trace.config.top_k = header_size(h, "top_k", "trace", source);
  trace.config.hidden_dim = header_size(h, "hidden", "trace", source);
  trace.batch_size = header_size(h, "batch", "trace", source);
  trace.tokens_per_step = header_size(h, "tokens_per_step", "trace", source);
  trace.generator_seed = static_cast<std::uint64_t>(header_int(h, "seed", "trace", source));
  trace.has_features = header_int(h, "features", "trace", source) != 0;
  const bool has_gate = header_int(h, "gate", "trace", source) != 0;
  const std::size_t num_steps = header_size(h, "steps", "trace", source);
  {
    const auto it = h.find("phase");
    if (it == h.end()) throw InvalidInput("trace", source + ":1: header is missing 'phase'");
    trace.phase = parse_phase(it->second);
  }
  try {
    trace.config.validate();
  } catch (const InvalidInput& e) {
    throw InvalidInput("trace", source + ":1: " + e.what());
  }

  const ModelConfig& c = trace.config;
  const std::size_t expected_fields = trace.has_features ? 3 : 2;
  while (reader.next(line)) {
    const std::string at = source + ":" + std::to_string(reader.line_no());
    const auto fields = split(line, '|');
    if (fields.size() != expected_fields) {
      throw InvalidInput("trace", at + ": expected " + std::to_string(expected_fields) + " '|'-separated fields, found " +
                                      std::to_string(fields.size()));
    }
    TokenStep step;
    const auto head = split_list(fields[0]);
    if (head.size() != 2) throw InvalidInput("trace", at + ": expected '<step> <eos>' before the first '|'");
    const auto index = parse_int(head[0], "trace", at);
    if (index < 0) throw InvalidInput("trace", at + ": negative step index");
    step.index = static_cast<std::size_t>(index);
    step.eos = parse_int(head[1], "trace", at) != 0;
    const std::string step_at = at + ": step " + std::to_string(step.index);

    const auto layers = split(fields[1], ';');
    if (layers.size() != c.num_layers) {
      throw InvalidInput("trace", step_at + ": has " + std::to_string(layers.size()) + " workload vectors, expected " +
                                      std::to_string(c.num_layers));
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string layer_at = step_at + " layer " + std::to_string(l);
      const auto tokens = split_list(layers[l]);
      if (tokens.size() != c.num_routed_experts) {
        throw InvalidInput("trace", layer_at + ": workload vector has " + std::to_string(tokens.size()) +
                                        " entries, expected " + std::to_string(c.num_routed_experts));
      }
      Workloads w;
      w.reserve(tokens.size());
      for (std::size_t e = 0; e < tokens.size(); ++e) {
        const auto v = parse_int(tokens[e], "trace", layer_at);
        if (v < 0) {
          throw InvalidInput("trace", layer_at + ": negative workload " + std::to_string(v) + " for expert " + std::to_string(e));
        }
        w.push_back(v);
      }
      step.workloads.push_back(std::move(w));
    }

    if (trace.has_features) {
      const auto hidden = split(fields[2], ';');
      if (hidden.size() != c.num_layers) {
        throw InvalidInput("trace", step_at + ": has " + std::to_string(hidden.size()) + " hidden-state layers, expected " +
                                        std::to_string(c.num_layers));
      }
      for (std::size_t l = 0; l < hidden.size(); ++l) {
        Matrix m(trace.tokens_per_step, c.hidden_dim);
        m.data = read_doubles(hidden[l], m.rows * m.cols, "trace", step_at + " layer " + std::to_string(l) + " hidden states");
        step.hidden.push_back(std::move(m));
      }
    }
    trace.steps.push_back(std::move(step));
  }
  if (trace.steps.size() != num_steps) {
    throw InvalidInput("trace", source + ": header declares " + std::to_string(num_steps) + " steps, file has " +
                                    std::to_string(trace.steps.size()));
  }
  if (has_gate) trace.gate = load_gate_params(gate_sidecar_path(path));
  trace.validate();
  return trace;
}

void save_gate_params(const GateParams& gate, const std::filesystem::path& path) {
  const std::size_t rows = gate.layers.empty() ? 0 : gate.layers.front().rows;
  const std::size_t cols = gate.layers.empty() ? 0 : gate.layers.front().cols;
  std::string out = std::string(kGateTag) + " " + std::string(kVersion) + " layers=" + std::to_string(gate.layers.size()) +
                    " rows=" + std::to_string(rows) + " cols=" + std::to_string(cols) + "\n";
  for (std::size_t l = 0; l < gate.layers.size(); ++l) {
    if (gate.layers[l].rows != rows || gate.layers[l].cols != cols) {
      throw InvalidInput("trace", "gate matrices differ in shape");
    }
    out += std::to_string(l) + " ";
    append_doubles(out, gate.layers[l].data);
    out += '\n';
  }
  write_text_file(path, out, "trace");
}

GateParams load_gate_params(const std::filesystem::path& path) {
  const std::string source = path.string();
  LineReader reader(read_text_file(path, "trace"));
  std::string_view line;
  if (!reader.next(line)) throw InvalidInput("trace", source + ": empty gate file");
  const auto h = parse_header(line, kGateTag, "trace", source);
  const std::size_t layers = header_size(h, "layers", "trace", source);
  const std::size_t rows = header_size(h, "rows", "trace", source);
  const std::size_t cols = header_size(h, "cols", "trace", source);

  GateParams gate;
  while (reader.next(line)) {
    const std::string at = source + ":" + std::to_string(reader.line_no());
    const auto space = line.find(' ');
    const auto l = parse_int(line.substr(0, space), "trace", at);
    if (static_cast<std::size_t>(l) != gate.layers.size()) {
      throw InvalidInput("trace", at + ": expected layer " + std::to_string(gate.layers.size()));
    }
    Matrix m(rows, cols);
    m.data = read_doubles(space == std::string_view::npos ? std::string_view{} : line.substr(space + 1), rows * cols,
                          "trace", at + ": gate layer " + std::to_string(l));
    gate.layers.push_back(std::move(m));
  }
  if (gate.layers.size() != layers) {
    throw InvalidInput("trace", source + ": header declares " + std::to_string(layers) + " gate layers, file has " +
                                    std::to_string(gate.layers.size()));
  }
  return gate;
}

void save_calibration(const Calibration& cal, const std::filesystem::path& path,
                      const std::vector<std::string>& provenance) {
  const std::size_t dim = cal.residuals.layers.empty() ? 0 : cal.residuals.layers.front().size();
  std::string out = std::string(kCalibrationTag) + " " + std::string(kVersion) +
                    " layers=" + std::to_string(cal.residuals.layers.size()) + " dim=" + std::to_string(dim) +
                    " experts=" + std::to_string(cal.num_experts) +
                    " frequency_layers=" + std::to_string(cal.frequency.layers.size()) + "\n";
  out += provenance_lines(provenance);
  for (std::size_t l = 0; l < cal.residuals.layers.size(); ++l) {
    out += "r " + std::to_string(l) + " ";
    append_doubles(out, cal.residuals.layers[l]);
    out += '\n';
  }
  for (std::size_t l = 0; l < cal.frequency.layers.size(); ++l) {
    out += "f " + std::to_string(l) + " ";
    append_ints(out, cal.frequency.layers[l]);
    out += '\n';
  }
  write_text_file(path, out, "prefetch");
}

Calibration load_calibration(const std::filesystem::path& path) {
  const std::string source = path.string();
  LineReader reader(read_text_file(path, "prefetch"));
  std::string_view line;
  if (!reader.next(line)) throw InvalidInput("prefetch", source + ": empty residual file");
  const auto h = parse_header(line, kCalibrationTag, "prefetch", source);
  const std::size_t layers = header_size(h, "layers", "prefetch", source);
  const std::size_t dim = header_size(h, "dim", "prefetch", source);
  const std::size_t experts = header_size(h, "experts", "prefetch", source);
  const std::size_t freq_layers = header_size(h, "frequency_layers", "prefetch", source);

  Calibration cal;
  cal.num_experts = experts;
  while (reader.next(line)) {
    const std::string at = source + ":" + std::to_string(reader.line_no());
    const auto tokens = split_list(line);
    if (tokens.size() < 2 || (tokens[0] != "r" && tokens[0] != "f")) {
      throw InvalidInput("prefetch", at + ": expected 'r <layer> ...' or 'f <layer> ...'");
    }
    const auto l = static_cast<std::size_t>(parse_int(tokens[1], "prefetch", at));
    const auto body_start = static_cast<std::size_t>(tokens[1].data() - line.data()) + tokens[1].size();
    const std::string_view body = line.substr(body_start);
    if (tokens[0] == "r") {
      if (l != cal.residuals.layers.size()) throw InvalidInput("prefetch", at + ": residual layers out of order");
      cal.residuals.layers.push_back(read_doubles(body, dim, "prefetch", at + ": residual layer " + std::to_string(l)));
    } else {
      if (l != cal.frequency.layers.size()) throw InvalidInput("prefetch", at + ": frequency layers out of order");
      const auto vals = split_list(body);
      if (vals.size() != experts) {
        throw InvalidInput("prefetch", at + ": frequency row has " + std::to_string(vals.size()) + " entries, expected " +
                                           std::to_string(experts));
      }
      Workloads row;
      for (auto v : vals) row.push_back(parse_int(v, "prefetch", at));
      cal.frequency.layers.push_back(std::move(row));
    }
  }
  if (cal.residuals.layers.size() != layers || cal.frequency.layers.size() != freq_layers) {
    throw InvalidInput("prefetch", source + ": record count does not match the header");
  }
  return cal;
}

}  // namespace moesim
