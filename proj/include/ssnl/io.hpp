#pragma once

// Artifact persistence: flow checkpoints (JSON), matrix CSVs, and content
// checksums. Checkpoints restore bit-exactly; CSV values are written with
// enough digits to round-trip doubles.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ssnl/common.hpp"
#include "ssnl/flows.hpp"
#include "ssnl/tensor.hpp"

namespace ssnl {

inline constexpr int kCheckpointVersion = 1;

inline std::uint64_t fnv1a64(const void* data, std::size_t n) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline std::string checksum_hex(const std::string& bytes) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes)));
  return std::string("fnv1a64:") + buf;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write file: " + path);
  out << content;
  if (!out) throw ConfigError("write failed: " + path);
}

inline std::string file_checksum(const std::string& path) { return checksum_hex(read_file(path)); }

// ---------------------------------------------------------------- checkpoints

namespace io_detail {

inline nlohmann::json tensor_values(const Tensor& t) {
  return nlohmann::json(t.data());
}

inline void fill_tensor(Tensor& t, const nlohmann::json& values, const std::string& what) {
  if (!values.is_array() || values.size() != t.numel())
    throw ConfigError("checkpoint: " + what + " wants " + std::to_string(t.numel()) +
                      " values, got " + std::to_string(values.size()));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = values[i].get<double>();
}

}  // namespace io_detail

inline nlohmann::json checkpoint_to_json(const FlowStack& flow) {
  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  j["kind"] = flow.kind;
  j["d_in"] = flow.d_in;
  j["theta_dim"] = flow.theta_dim;
  j["reduction"] = flow.reduction;
  j["hidden"] = flow.hidden;
  j["standardization"] = {{"y_mean", io_detail::tensor_values(flow.y_mean)},
                          {"y_std", io_detail::tensor_values(flow.y_std)},
                          {"th_mean", io_detail::tensor_values(flow.th_mean)},
                          {"th_std", io_detail::tensor_values(flow.th_std)}};
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : flow.param_list()) params.push_back(io_detail::tensor_values(*p));
  j["params"] = std::move(params);
  return j;
}

// Rebuilds the architecture from the descriptor, then overwrites every
// parameter, so a loaded stack scores inputs bit-identically to the saved one.
inline FlowStack checkpoint_from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointVersion)
      throw ConfigError("checkpoint: unsupported format_version " + std::to_string(version));
    const std::string kind = j.at("kind").get<std::string>();
    const std::size_t d = j.at("d_in").get<std::size_t>();
    const std::size_t p = j.at("theta_dim").get<std::size_t>();
    const std::vector<std::size_t> hidden = j.at("hidden").get<std::vector<std::size_t>>();

    Rng scratch(0);  // placeholder weights, overwritten below
    FlowStack flow;
    if (kind == "snl") {
      flow = build_snl_flow(d, p, scratch, hidden);
    } else if (kind == "ssnl") {
      flow = build_ssnl_flow(d, p, j.at("reduction").get<double>(), scratch, hidden);
    } else {
      throw ConfigError("checkpoint: unknown kind '" + kind + "'");
    }

    const nlohmann::json& st = j.at("standardization");
    io_detail::fill_tensor(flow.y_mean, st.at("y_mean"), "y_mean");
    io_detail::fill_tensor(flow.y_std, st.at("y_std"), "y_std");
    io_detail::fill_tensor(flow.th_mean, st.at("th_mean"), "th_mean");
    io_detail::fill_tensor(flow.th_std, st.at("th_std"), "th_std");

    const nlohmann::json& params = j.at("params");
    const auto ps = flow.param_list();
    if (!params.is_array() || params.size() != ps.size())
      throw ConfigError("checkpoint: architecture has " + std::to_string(ps.size()) +
                        " parameter tensors, file has " + std::to_string(params.size()));
    for (std::size_t i = 0; i < ps.size(); ++i)
      io_detail::fill_tensor(*ps[i], params[i], "params[" + std::to_string(i) + "]");
    return flow;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: malformed document: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const FlowStack& flow) {
  write_file(path, checkpoint_to_json(flow).dump(2) + "\n");
}

inline FlowStack load_checkpoint(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint " + path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

// ------------------------------------------------------------------------ csv

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& columns,
                      const Tensor& rows) {
  if (rows.rank() != 2) throw ShapeError("write_csv: want a rank-2 tensor");
  if (columns.size() != rows.cols())
    throw ShapeError("write_csv: " + std::to_string(columns.size()) + " column names for " +
                     std::to_string(rows.cols()) + " columns");
  std::ostringstream out;
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (j) out << ',';
    out << columns[j];
  }
  out << '\n';
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    for (std::size_t j = 0; j < rows.cols(); ++j) {
      if (j) out << ',';
      out << format_double(rows.at(i, j));
    }
    out << '\n';
  }
  write_file(path, out.str());
}

inline std::pair<std::vector<std::string>, Tensor> read_csv(const std::string& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> columns;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    columns.push_back(line.substr(start, comma == std::string::npos ? comma : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }

  std::vector<double> values;
  std::size_t n_rows = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t pos = 0, field = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      const std::string cell =
          line.substr(pos, comma == std::string::npos ? comma : comma - pos);
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0')
        throw ConfigError(path + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
      values.push_back(v);
      ++field;
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (field != columns.size())
      throw ConfigError(path + ":" + std::to_string(line_no) + ": " + std::to_string(field) +
                        " fields, header has " + std::to_string(columns.size()));
    ++n_rows;
  }
  return {std::move(columns),
          Tensor({n_rows, columns.size()}, std::move(values))};
}

inline std::vector<std::string> theta_columns(std::size_t p) {
  std::vector<std::string> c(p);
  for (std::size_t j = 0; j < p; ++j) c[j] = "theta_" + std::to_string(j);
  return c;
}

inline std::vector<std::string> dataset_columns(std::size_t p, std::size_t d) {
  std::vector<std::string> c = theta_columns(p);
  for (std::size_t j = 0; j < d; ++j) c.push_back("y_" + std::to_string(j));
  return c;
}

// Posterior CSVs must carry exactly theta_0..theta_{k-1}, in order.
inline void require_theta_columns(const std::vector<std::string>& columns,
                                  const std::string& path) {
  for (std::size_t j = 0; j < columns.size(); ++j) {
    const std::string want = "theta_" + std::to_string(j);
    if (columns[j] != want)
      throw ConfigError(path + ": missing column '" + want + "' (found '" + columns[j] + "')");
  }
  if (columns.empty()) throw ConfigError(path + ": missing column 'theta_0'");
}

}  // namespace ssnl
