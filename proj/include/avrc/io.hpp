#pragma once

// File formats.
//
// Matrix CSV: first line "rows,cols", then one row per line, values printed
// with 17 significant digits (lossless for doubles). Non-finite values are
// written as inf, -inf or nan.
//
// Merge traces: JSON lines, one object per step.

#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "avrc/clustering.hpp"
#include "avrc/errors.hpp"
#include "avrc/linalg.hpp"

namespace avrc {

using Json = nlohmann::ordered_json;

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double_token(const std::string& s, const std::string& where) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  // strtod rather than stod: subnormals parse with ERANGE and are kept.
  const char* begin = s.c_str();
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(begin, &end);
  if (s.empty() || std::isspace(static_cast<unsigned char>(s.front())) ||
      end != begin + s.size() || (errno == ERANGE && std::isinf(v))) {
    throw InvalidData(where + ": cannot parse '" + s + "' as a number");
  }
  return v;
}

inline void write_matrix_csv(std::ostream& out, const Matrix& m) {
  out << m.rows() << ',' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
}

inline void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidData("cannot write '" + path.string() + "'");
  write_matrix_csv(out, m);
}

inline Matrix read_matrix_csv(std::istream& in, const std::string& name = "matrix") {
  std::string line;
  if (!std::getline(in, line)) throw InvalidData(name + ": empty file");
  long long rows = -1, cols = -1;
  char comma = 0;
  {
    std::istringstream head(line);
    head >> rows >> comma >> cols;
    if (head.fail() || comma != ',' || rows < 0 || cols < 0) {
      throw InvalidData(name + ":1: header must be 'rows,cols'");
    }
  }
  Matrix m(rows, cols);
  for (long long i = 0; i < rows; ++i) {
    const std::string where = name + ":" + std::to_string(i + 2);
    if (!std::getline(in, line)) throw InvalidData(where + ": missing row");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream row(line);
    std::string field;
    long long j = 0;
    while (std::getline(row, field, ',')) {
      if (j >= cols) throw InvalidData(where + ": more than " + std::to_string(cols) + " values");
      m(i, j++) = parse_double_token(field, where);
    }
    if (j != cols) {
      throw InvalidData(where + ": expected " + std::to_string(cols) + " values, got " +
                        std::to_string(j));
    }
  }
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") != std::string::npos) {
      throw InvalidData(name + ": trailing content after " + std::to_string(rows) + " rows");
    }
  }
  return m;
}

inline Matrix read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidData("cannot open '" + path.string() + "'");
  return read_matrix_csv(in, path.string());
}

inline void write_vector_csv(const std::filesystem::path& path, const Vector& v) {
  write_matrix_csv(path, Matrix(v));
}

inline Vector read_vector_csv(const std::filesystem::path& path) {
  const Matrix m = read_matrix_csv(path);
  if (m.cols() != 1) throw InvalidData(path.string() + ": expected a single column");
  return m.col(0);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidData("cannot write '" + path.string() + "'");
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidData("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  write_text(path, j.dump(2) + "\n");
}

inline Json read_json(const std::filesystem::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Rejects keys outside `allowed`.
inline void check_keys(const Json& j, const std::set<std::string>& allowed,
                       const std::string& context) {
  if (!j.is_object()) throw ConfigError(context + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(context + ": unknown key '" + key + "'");
  }
}

/// Typed lookup with a default; type errors become ConfigError.
template <typename T>
T json_get(const Json& j, const std::string& key, const T& fallback, const std::string& context) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(context + "." + key + ": " + e.what());
  }
}

inline Json json_number(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

// ---- merge traces -------------------------------------------------------

/// One JSON object per step. train_mse is the aggregate RSS divided by n.
inline std::string trace_to_jsonl(const MergeTrace& trace, Eigen::Index n) {
  std::string out;
  for (const MergeStep& st : trace.steps) {
    Json j;
    j["step"] = st.step_index;
    j["left"] = st.left;
    j["right"] = st.right;
    j["new_cluster"] = st.new_cluster;
    j["left_members"] = st.left_members;
    j["right_members"] = st.right_members;
    if (st.training_error_after) {
      j["train_mse"] = json_number(*st.training_error_after / static_cast<double>(n));
      j["train_rss"] = json_number(*st.training_error_after);
    } else {
      j["train_mse"] = nullptr;
    }
    if (st.linkage_height) j["height"] = json_number(*st.linkage_height);
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline MergeTrace trace_from_jsonl(const std::string& text, int model_count,
                                   ClusteringMethod method) {
  MergeTrace trace;
  trace.model_count = model_count;
  trace.method = method;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const Json j = Json::parse(line);
      MergeStep st;
      st.step_index = j.at("step").get<int>();
      st.left_members = j.at("left_members").get<ClusterMembers>();
      st.right_members = j.at("right_members").get<ClusterMembers>();
      st.left = j.value("left", 0);
      st.right = j.value("right", 0);
      st.new_cluster = j.value("new_cluster", model_count + st.step_index);
      if (j.contains("train_rss") && j["train_rss"].is_number()) {
        st.training_error_after = j["train_rss"].get<double>();
      }
      if (j.contains("height") && j["height"].is_number()) {
        st.linkage_height = j["height"].get<double>();
      }
      trace.steps.push_back(std::move(st));
    } catch (const Json::exception& e) {
      throw InvalidData("trace line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  validate_trace(trace);
  return trace;
}

/// Tidy dendrogram table: two rows per merge, one per child.
inline std::string dendrogram_csv(const MergeTrace& trace, Eigen::Index n) {
  std::string out = "parent,child,step,height,train_mse\n";
  for (const MergeStep& st : trace.steps) {
    const std::string height = st.linkage_height ? format_double(*st.linkage_height) : "";
    const std::string mse = st.training_error_after
                                ? format_double(*st.training_error_after / static_cast<double>(n))
                                : "";
    for (int child : {st.left, st.right}) {
      out += std::to_string(st.new_cluster) + "," + std::to_string(child) + "," +
             std::to_string(st.step_index) + "," + height + "," + mse + "\n";
    }
  }
  return out;
}

}  // namespace avrc
