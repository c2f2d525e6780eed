#pragma once

// Dataset directories and parameter files.
//
// Layout of a dataset directory:
//   manifest.json           {n, T, l, task, num_classes_or_target_dim, N}
//   g<g>/edges_<t>.csv      header "src,dst,weight", 0-based node ids
//   g<g>/features_<t>.csv   n rows x l columns, no header
//   g<g>/labels.csv         one row per node; empty row = unlabeled
// Graph and snapshot indices are 0-based. Classification labels are a single
// integer (-1 also means unlabeled); regression rows hold the target vector.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "json.hpp"

#include "idgnn/error.hpp"
#include "idgnn/graph.hpp"
#include "idgnn/model.hpp"

namespace idgnn {

namespace fs = std::filesystem;

struct Manifest {
  Index n = 0;
  Index T = 0;
  Index l = 0;
  Task task = Task::kClassification;
  Index num_outputs = 0;
  Index N = 0;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw InvalidArgument("format_double: conversion failed");
  return std::string(buf, end);
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::kMissingFile, p.string(), "cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << content;
  if (!out) throw Error("write failed: " + p.string());
}

inline std::vector<std::string_view> split_view(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Lines without trailing '\r'; a final empty line after the last '\n' is dropped.
inline std::vector<std::string_view> lines_of(std::string_view text) {
  auto lines = split_view(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  for (auto& l : lines)
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
  return lines;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view s, const fs::path& file, Index line) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw DataError(DataError::Kind::kParse, file.string(),
                    "line " + std::to_string(line) + ": not a number '" + std::string(s) + "'");
  }
  if (!std::isfinite(v)) {
    throw DataError(DataError::Kind::kNonFinite, file.string(), "line " + std::to_string(line));
  }
  return v;
}

inline long long parse_int(std::string_view s, const fs::path& file, Index line) {
  s = trim(s);
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw DataError(DataError::Kind::kParse, file.string(),
                    "line " + std::to_string(line) + ": not an integer '" + std::string(s) + "'");
  }
  return v;
}

inline fs::path graph_dir(const fs::path& root, Index g) { return root / ("g" + std::to_string(g)); }

inline SparseMatrix read_edges(const fs::path& file, Index n) {
  const std::string text = read_file(file);
  const auto lines = lines_of(text);
  if (lines.empty() || trim(lines.front()) != "src,dst,weight") {
    throw DataError(DataError::Kind::kParse, file.string(), "expected header src,dst,weight");
  }
  std::vector<Triplet> t;
  for (Index k = 1; k < lines.size(); ++k) {
    if (trim(lines[k]).empty()) continue;
    const auto f = split_view(lines[k], ',');
    if (f.size() != 3) throw DataError(DataError::Kind::kShapeMismatch, file.string(), "line " + std::to_string(k + 1));
    const auto src = parse_int(f[0], file, k + 1);
    const auto dst = parse_int(f[1], file, k + 1);
    const double w = parse_double(f[2], file, k + 1);
    if (src < 0 || dst < 0 || static_cast<Index>(src) >= n || static_cast<Index>(dst) >= n) {
      throw DataError(DataError::Kind::kShapeMismatch, file.string(),
                      "line " + std::to_string(k + 1) + ": node id outside [0, " + std::to_string(n) + ")");
    }
    t.push_back({static_cast<Index>(src), static_cast<Index>(dst), w});
  }
  return SparseMatrix::from_triplets(n, n, std::move(t));
}

/// Reads an n x l table and returns it transposed (l x n, one column per node).
inline DenseMatrix read_features(const fs::path& file, Index n, Index l) {
  const std::string text = read_file(file);
  const auto lines = lines_of(text);
  if (lines.size() != n) {
    throw DataError(DataError::Kind::kShapeMismatch, file.string(),
                    "expected " + std::to_string(n) + " rows, found " + std::to_string(lines.size()));
  }
  DenseMatrix x(l, n);
  for (Index j = 0; j < n; ++j) {
    const auto f = split_view(lines[j], ',');
    if (f.size() != l) {
      throw DataError(DataError::Kind::kShapeMismatch, file.string(),
                      "row " + std::to_string(j + 1) + ": expected " + std::to_string(l) + " columns, found " +
                          std::to_string(f.size()));
    }
    for (Index k = 0; k < l; ++k) x(k, j) = parse_double(f[k], file, j + 1);
  }
  return x;
}

inline void read_labels(const fs::path& file, DynamicGraph& g, Index n) {
  const std::string text = read_file(file);
  auto lines = split_view(text, '\n');
  if (lines.size() == n + 1 && lines.back().empty()) lines.pop_back();
  if (lines.size() != n) {
    throw DataError(DataError::Kind::kShapeMismatch, file.string(),
                    "expected " + std::to_string(n) + " rows, found " + std::to_string(lines.size()));
  }
  g.labeled.assign(n, 0);
  if (g.task == Task::kClassification) {
    g.classes.assign(n, -1);
  } else {
    g.targets = DenseMatrix(g.num_outputs, n);
  }
  for (Index j = 0; j < n; ++j) {
    std::string_view line = lines[j];
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) continue;
    if (g.task == Task::kClassification) {
      const auto c = parse_int(line, file, j + 1);
      if (c < 0) continue;
      if (static_cast<Index>(c) >= g.num_outputs) {
        throw DataError(DataError::Kind::kShapeMismatch, file.string(),
                        "row " + std::to_string(j + 1) + ": class " + std::to_string(c) + " out of range");
      }
      g.classes[j] = static_cast<int>(c);
    } else {
      const auto f = split_view(line, ',');
      if (f.size() != g.num_outputs) {
        throw DataError(DataError::Kind::kShapeMismatch, file.string(),
                        "row " + std::to_string(j + 1) + ": expected " + std::to_string(g.num_outputs) + " targets");
      }
      for (Index k = 0; k < f.size(); ++k) g.targets(k, j) = parse_double(f[k], file, j + 1);
    }
    g.labeled[j] = 1;
  }
}

}  // namespace detail

inline Manifest read_manifest(const fs::path& dir) {
  const fs::path file = dir / "manifest.json";
  const std::string text = detail::read_file(file);
  Manifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.n = j.at("n").get<Index>();
    m.T = j.at("T").get<Index>();
    m.l = j.at("l").get<Index>();
    m.task = parse_task(j.at("task").get<std::string>());
    m.num_outputs = j.at("num_classes_or_target_dim").get<Index>();
    m.N = j.at("N").get<Index>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(DataError::Kind::kParse, file.string(), e.what());
  } catch (const InvalidArgument& e) {
    throw DataError(DataError::Kind::kParse, file.string(), e.what());
  }
  if (m.n == 0 || m.T == 0 || m.N == 0) throw DataError(DataError::Kind::kShapeMismatch, file.string(), "n, T, N must be positive");
  return m;
}

/// Parses and validates every graph in a dataset directory.
inline std::vector<DynamicGraph> load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError(DataError::Kind::kMissingFile, dir.string(), "not a directory");
  const Manifest m = read_manifest(dir);
  std::vector<DynamicGraph> out;
  out.reserve(m.N);
  for (Index gi = 0; gi < m.N; ++gi) {
    const fs::path gdir = detail::graph_dir(dir, gi);
    DynamicGraph g;
    g.task = m.task;
    g.num_outputs = m.num_outputs;
    for (Index t = 0; t < m.T; ++t) {
      SparseMatrix a = detail::read_edges(gdir / ("edges_" + std::to_string(t) + ".csv"), m.n);
      DenseMatrix x = detail::read_features(gdir / ("features_" + std::to_string(t) + ".csv"), m.n, m.l);
      g.snapshots.push_back({std::move(a), std::move(x)});
    }
    const fs::path lab = gdir / "labels.csv";
    detail::read_labels(lab, g, m.n);
    try {
      g.validate();
    } catch (const Error& e) {
      throw DataError(DataError::Kind::kShapeMismatch, gdir.string(), e.what());
    }
    out.push_back(std::move(g));
  }
  return out;
}

/// Writes a dataset directory; all graphs must share n, T, l, task and outputs.
inline void save_dataset(const fs::path& dir, const std::vector<DynamicGraph>& graphs) {
  if (graphs.empty()) throw InvalidArgument("save_dataset: no graphs");
  const auto& g0 = graphs.front();
  for (const auto& g : graphs) {
    g.validate();
    if (g.num_nodes() != g0.num_nodes() || g.num_snapshots() != g0.num_snapshots() ||
        g.num_features() != g0.num_features() || g.task != g0.task || g.num_outputs != g0.num_outputs) {
      throw DimensionError("save_dataset: graphs disagree on n, T, l, task or outputs");
    }
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());

  nlohmann::ordered_json j{{"n", g0.num_nodes()},
                           {"T", g0.num_snapshots()},
                           {"l", g0.num_features()},
                           {"task", to_string(g0.task)},
                           {"num_classes_or_target_dim", g0.num_outputs},
                           {"N", graphs.size()}};
  detail::write_file(dir / "manifest.json", j.dump(2) + "\n");

  for (Index gi = 0; gi < graphs.size(); ++gi) {
    const auto& g = graphs[gi];
    const fs::path gdir = detail::graph_dir(dir, gi);
    fs::create_directories(gdir, ec);
    if (ec) throw Error("cannot create " + gdir.string() + ": " + ec.message());
    for (Index t = 0; t < g.num_snapshots(); ++t) {
      const auto& s = g.snapshots[t];
      std::string edges = "src,dst,weight\n";
      s.adjacency.for_each([&](Index i, Index k, double w) {
        edges += std::to_string(i) + ',' + std::to_string(k) + ',' + detail::format_double(w) + '\n';
      });
      detail::write_file(gdir / ("edges_" + std::to_string(t) + ".csv"), edges);
      std::string feats;
      for (Index node = 0; node < g.num_nodes(); ++node) {
        for (Index k = 0; k < g.num_features(); ++k) {
          if (k) feats += ',';
          feats += detail::format_double(s.features(k, node));
        }
        feats += '\n';
      }
      detail::write_file(gdir / ("features_" + std::to_string(t) + ".csv"), feats);
    }
    std::string labels;
    for (Index node = 0; node < g.num_nodes(); ++node) {
      if (g.labeled[node]) {
        if (g.task == Task::kClassification) {
          labels += std::to_string(g.classes[node]);
        } else {
          for (Index k = 0; k < g.num_outputs; ++k) {
            if (k) labels += ',';
            labels += detail::format_double(g.targets(k, node));
          }
        }
      }
      labels += '\n';
    }
    detail::write_file(gdir / "labels.csv", labels);
  }
}

inline nlohmann::json matrix_to_json(const DenseMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", rows}};
}

inline DenseMatrix matrix_from_json(const nlohmann::json& j) {
  DenseMatrix m(j.at("rows").get<Index>(), j.at("cols").get<Index>());
  const auto& data = j.at("data");
  if (data.size() != m.rows()) throw DimensionError("matrix_from_json: row count mismatch");
  for (Index i = 0; i < m.rows(); ++i) {
    const auto row = data[i].get<std::vector<double>>();
    if (row.size() != m.cols()) throw DimensionError("matrix_from_json: column count mismatch");
    for (Index k = 0; k < m.cols(); ++k) m(i, k) = row[k];
  }
  return m;
}

inline nlohmann::json params_to_json(const IdgnnParams& p) {
  nlohmann::json j;
  j["activation"] = to_string(p.activation);
  j["snapshots"] = p.snapshots;
  j["W"] = nlohmann::json::array();
  for (const auto& w : p.W) j["W"].push_back(matrix_to_json(w));
  j["V"] = nlohmann::json::array();
  for (const auto& v : p.V) j["V"].push_back(matrix_to_json(v));
  j["head"] = {{"weight", matrix_to_json(p.head.weight)}, {"bias", p.head.bias}};
  return j;
}

inline IdgnnParams params_from_json(const nlohmann::json& j) {
  IdgnnParams p;
  try {
    p.activation = parse_activation(j.at("activation").get<std::string>());
    p.snapshots = j.at("snapshots").get<Index>();
    for (const auto& w : j.at("W")) p.W.push_back(matrix_from_json(w));
    for (const auto& v : j.at("V")) p.V.push_back(matrix_from_json(v));
    p.head.weight = matrix_from_json(j.at("head").at("weight"));
    p.head.bias = j.at("head").at("bias").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("params_from_json: ") + e.what());
  }
  if (p.W.empty() || p.V.empty()) throw InvalidArgument("params_from_json: W and V must be non-empty");
  if (p.W.size() != 1 && p.W.size() != p.snapshots) throw DimensionError("params_from_json: W count must be 1 or T");
  if (p.V.size() != 1 && p.V.size() != p.snapshots) throw DimensionError("params_from_json: V count must be 1 or T");
  const Index d = p.dim();
  for (const auto& w : p.W)
    if (w.rows() != d || w.cols() != d) throw DimensionError("params_from_json: W must be d x d");
  for (const auto& v : p.V)
    if (v.rows() != d || v.cols() != p.num_features()) throw DimensionError("params_from_json: V must be d x l");
  if (p.head.weight.cols() != d || p.head.bias.size() != p.head.weight.rows()) {
    throw DimensionError("params_from_json: head shape mismatch");
  }
  return p;
}

inline void save_params(const fs::path& file, const IdgnnParams& p) {
  detail::write_file(file, params_to_json(p).dump() + "\n");
}

inline IdgnnParams load_params(const fs::path& file) {
  const std::string text = detail::read_file(file);
  try {
    return params_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(DataError::Kind::kParse, file.string(), e.what());
  }
}

/// n rows x d columns, one row per node.
inline std::string embeddings_csv(const DenseMatrix& z) {
  std::string out;
  for (Index j = 0; j < z.cols(); ++j) {
    for (Index k = 0; k < z.rows(); ++k) {
      if (k) out += ',';
      out += detail::format_double(z(k, j));
    }
    out += '\n';
  }
  return out;
}

}  // namespace idgnn
