#pragma once

// CSV and JSON serialization, plus a small JSON-schema validator.
// Needs nlohmann/json (vendor/json.hpp) on the include path.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "hodgeflow/common.hpp"
#include "hodgeflow/ctde.hpp"
#include "hodgeflow/diagnostics.hpp"
#include "hodgeflow/dynamics.hpp"
#include "hodgeflow/neural.hpp"
#include "hodgeflow/projection.hpp"

namespace hodgeflow::io {

/// Insertion-ordered so emitted documents have a stable key order.
using Json = nlohmann::ordered_json;

class IoError : public Error {
 public:
  using Error::Error;
};

/// 17 significant digits; round-trips every double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------- CSV

struct CsvTable {
  std::vector<std::string> header;
  PointMat data;

  Index column(std::string_view name) const {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (header[c] == name) return static_cast<Index>(c);
    }
    throw IoError("csv: no column '" + std::string(name) + "'");
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline bool parse_number(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace detail

/// Comma-separated, one header row, numeric body. Blank lines are skipped;
/// errors name the source and the 1-based line.
inline CsvTable parse_csv(std::istream& in, const std::string& source = "csv") {
  CsvTable t;
  std::string line;
  int lineno = 0;
  bool have_header = false;
  std::vector<double> values;
  Index rows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line);
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (!have_header) {
      for (auto f : fields) {
        if (f.empty()) throw IoError(where + "empty column name in header");
        t.header.emplace_back(f);
      }
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw IoError(where + "expected " + std::to_string(t.header.size()) + " columns, found " +
                    std::to_string(fields.size()));
    }
    for (std::size_t c = 0; c < fields.size(); ++c) {
      double v = 0.0;
      if (!detail::parse_number(fields[c], v)) {
        throw IoError(where + "column '" + t.header[c] + "': not a number: '" + std::string(fields[c]) + "'");
      }
      values.push_back(v);
    }
    ++rows;
  }
  if (!have_header) throw IoError(source + ": missing header row");
  const auto cols = static_cast<Index>(t.header.size());
  t.data = Eigen::Map<const PointMat>(values.data(), rows, cols);
  return t;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_csv(in, path.string());
}

inline void write_csv(std::ostream& out, const std::vector<std::string>& header, const PointMat& data) {
  require_dim(static_cast<Index>(header.size()) == data.cols(), "write_csv: header/data column mismatch");
  for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
  out << '\n';
  for (Index r = 0; r < data.rows(); ++r) {
    for (Index c = 0; c < data.cols(); ++c) out << (c ? "," : "") << format_double(data(r, c));
    out << '\n';
  }
}

inline std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

inline void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header, const PointMat& data) {
  auto out = open_for_write(path);
  write_csv(out, header, data);
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<std::string> indexed_names(const std::string& prefix, Index count) {
  std::vector<std::string> out;
  for (Index i = 0; i < count; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

/// Field samples: header x_0..x_{d-1},F_0..F_{d-1}.
struct Samples {
  PointMat points;
  PointMat values;
};

inline Samples samples_from_csv(const CsvTable& t) {
  const auto cols = static_cast<Index>(t.header.size());
  if (cols < 2 || cols % 2 != 0) throw IoError("samples: need an even number of columns x_0..,F_0..");
  const Index d = cols / 2;
  const auto xs = indexed_names("x_", d);
  const auto fs = indexed_names("F_", d);
  for (Index i = 0; i < d; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    if (t.header[ui] != xs[ui] || t.header[ui + static_cast<std::size_t>(d)] != fs[ui]) {
      throw IoError("samples: header must be x_0..x_" + std::to_string(d - 1) + ",F_0..F_" + std::to_string(d - 1));
    }
  }
  if (t.data.rows() < 2) throw IoError("samples: need at least 2 rows");
  if (!t.data.allFinite()) throw IoError("samples: non-finite value");
  return {t.data.leftCols(d), t.data.rightCols(d)};
}

inline void write_samples_csv(const std::filesystem::path& path, const PointMat& points, const PointMat& values) {
  require_dim(points.rows() == values.rows() && points.cols() == values.cols(), "write_samples_csv: shape mismatch");
  auto header = indexed_names("x_", points.cols());
  for (auto& f : indexed_names("F_", points.cols())) header.push_back(f);
  PointMat data(points.rows(), 2 * points.cols());
  data << points, values;
  write_csv(path, header, data);
}

/// Columns step, x_0..x_{d-1}, field_norm, proj_norm, nonpot; one row per
/// iterate. The final iterate has no step, so its diagnostics are nan.
inline void write_trajectory_csv(std::ostream& out, const Trajectory& traj) {
  const Index d = traj.iterates.cols();
  std::vector<std::string> header{"step"};
  for (auto& s : indexed_names("x_", d)) header.push_back(s);
  header.insert(header.end(), {"field_norm", "proj_norm", "nonpot"});
  const double nan = std::numeric_limits<double>::quiet_NaN();
  PointMat data(traj.iterates.rows(), d + 4);
  for (Index t = 0; t < traj.iterates.rows(); ++t) {
    data(t, 0) = static_cast<double>(t);
    data.row(t).segment(1, d) = traj.iterates.row(t);
    const bool has = t < static_cast<Index>(traj.steps.size());
    const auto& s = has ? traj.steps[static_cast<std::size_t>(t)] : StepDiagnostics{nan, nan, nan, nan};
    data(t, d + 1) = s.field_norm;
    data(t, d + 2) = s.proj_norm;
    data(t, d + 3) = s.nonpot;
  }
  write_csv(out, header, data);
}

inline void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj) {
  auto out = open_for_write(path);
  write_trajectory_csv(out, traj);
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------- JSON

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const Json& doc) {
  auto out = open_for_write(path);
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

/// nan/inf have no JSON spelling; they become null.
inline Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json to_json(const Vec& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(number(v[i]));
  return a;
}

inline Json to_json(const Mat& m) {
  Json a = Json::array();
  for (Index r = 0; r < m.rows(); ++r) a.push_back(to_json(Vec(m.row(r).transpose())));
  return a;
}

inline Vec vec_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw IoError(what + ": expected an array of numbers");
  Vec v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw IoError(what + ": expected an array of numbers");
    v[static_cast<Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline Mat mat_from_json(const Json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw IoError(what + ": expected a non-empty array of rows");
  const auto cols = j[0].is_array() ? j[0].size() : 0;
  if (cols == 0) throw IoError(what + ": rows must be non-empty arrays");
  Mat m(static_cast<Index>(j.size()), static_cast<Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw IoError(what + ": ragged matrix at row " + std::to_string(r));
    m.row(static_cast<Index>(r)) = vec_from_json(j[r], what).transpose();
  }
  return m;
}

/// {"A": [[...]], "B": [[...]]}
inline MatrixGame game_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("A") || !j.contains("B")) throw IoError("game: expected {\"A\": ..., \"B\": ...}");
  for (const auto& [key, _] : j.items()) {
    if (key != "A" && key != "B") throw IoError("game: unknown key '" + key + "'");
  }
  try {
    return MatrixGame(mat_from_json(j["A"], "game.A"), mat_from_json(j["B"], "game.B"));
  } catch (const DimensionError& e) {
    throw IoError(std::string("game: ") + e.what());
  }
}

inline Json game_to_json(const MatrixGame& g) { return Json{{"A", to_json(g.A)}, {"B", to_json(g.B)}}; }

/// Flat document: a shape header and the parameters in the order
/// W1 (row-major, width x dim), b1, a.
inline Json net_to_json(const PotentialNet& net) {
  Json j;
  j["shape"] = {{"dim", net.dim()}, {"width", net.width()}};
  j["layout"] = {"W1", "b1", "a"};
  j["values"] = to_json(net.to_flat());
  return j;
}

inline PotentialNet net_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("shape") || !j.contains("values")) throw IoError("net: missing shape or values");
  const auto& s = j["shape"];
  if (!s.contains("dim") || !s.contains("width") || !s["dim"].is_number_integer() || !s["width"].is_number_integer())
    throw IoError("net: shape needs integer dim and width");
  const auto dim = s["dim"].get<Index>();
  const auto width = s["width"].get<Index>();
  if (dim < 1 || width < 1) throw IoError("net: dim and width must be positive");
  const Vec flat = vec_from_json(j["values"], "net.values");
  if (flat.size() != width * dim + 2 * width) {
    throw IoError("net: expected " + std::to_string(width * dim + 2 * width) + " values, found " +
                  std::to_string(flat.size()));
  }
  return PotentialNet::from_flat(flat, dim, width);
}

inline Json to_json(const ProjectionResult& r) {
  return Json{{"energy_total", number(r.energy_total)},  {"energy_pot", number(r.energy_pot)},
              {"energy_cyc", number(r.energy_cyc)},      {"nonpot", number(r.nonpot)},
              {"solver_residual", number(r.solver_residual)}, {"solver_iterations", r.solver_iterations}};
}

inline Json to_json(const TheoryBoundParams& p) {
  return Json{{"D", number(p.D)},
              {"L", number(p.L)},
              {"G", number(p.G)},
              {"phi_max", number(p.phi_max)},
              {"phi_min", number(p.phi_min)},
              {"eps_residual", number(p.eps_residual)},
              {"delta_bar", number(p.delta_bar)},
              {"eta", number(p.eta)},
              {"T", p.T}};
}

inline Json to_json(const GapBoundReport& r) {
  return Json{{"lhs", number(r.lhs)},       {"rhs", number(r.rhs)},
              {"first_term", number(r.first_term)}, {"t_hat", r.t_hat},
              {"mapping_norm", number(r.mapping_norm)}, {"inexact", r.inexact},
              {"holds", r.holds}};
}

// ------------------------------------------------------- schema validation

/// Validates against a JSON-schema subset: type, enum, const, properties,
/// required, additionalProperties, items, min/maxItems, minimum, maximum,
/// exclusiveMinimum, exclusiveMaximum, minLength, oneOf, anyOf and local
/// "$ref": "#/$defs/<name>". Any other constraint keyword throws, so a schema
/// never silently loses a rule. Returns one message per violation.
class SchemaValidator {
 public:
  explicit SchemaValidator(Json schema) : root_(std::move(schema)) {}

  std::vector<std::string> validate(const Json& doc) const {
    std::vector<std::string> errors;
    check(doc, root_, "", errors);
    return errors;
  }

 private:
  static std::string at(const std::string& path) { return path.empty() ? "/" : path; }

  const Json& resolve(const std::string& ref) const {
    static constexpr std::string_view prefix = "#/$defs/";
    if (!ref.starts_with(prefix)) throw IoError("schema: unsupported $ref '" + ref + "'");
    const std::string name = ref.substr(prefix.size());
    if (!root_.contains("$defs") || !root_["$defs"].contains(name)) throw IoError("schema: unresolved $ref '" + ref + "'");
    return root_["$defs"][name];
  }

  static bool type_matches(const Json& doc, const std::string& type) {
    if (type == "object") return doc.is_object();
    if (type == "array") return doc.is_array();
    if (type == "string") return doc.is_string();
    if (type == "boolean") return doc.is_boolean();
    if (type == "null") return doc.is_null();
    if (type == "number") return doc.is_number();
    if (type == "integer") {
      if (doc.is_number_integer()) return true;
      return doc.is_number_float() && std::floor(doc.get<double>()) == doc.get<double>();
    }
    throw IoError("schema: unknown type '" + type + "'");
  }

  void check(const Json& doc, const Json& schema, const std::string& path, std::vector<std::string>& errors) const {
    if (schema.is_boolean()) {
      if (!schema.get<bool>()) errors.push_back(at(path) + ": not allowed");
      return;
    }
    if (!schema.is_object()) throw IoError("schema: node at " + at(path) + " is not an object");
    for (const auto& [key, value] : schema.items()) {
      if (key == "$schema" || key == "$id" || key == "$defs" || key == "title" || key == "description" ||
          key == "default" || key == "examples" || key == "$comment")
        continue;
      if (key == "$ref") {
        check(doc, resolve(value.get<std::string>()), path, errors);
      } else if (key == "type") {
        bool ok = false;
        if (value.is_array()) {
          for (const auto& t : value) ok = ok || type_matches(doc, t.get<std::string>());
        } else {
          ok = type_matches(doc, value.get<std::string>());
        }
        if (!ok) errors.push_back(at(path) + ": expected type " + value.dump());
      } else if (key == "enum") {
        bool ok = false;
        for (const auto& e : value) ok = ok || e == doc;
        if (!ok) errors.push_back(at(path) + ": value " + doc.dump() + " not in " + value.dump());
      } else if (key == "const") {
        if (doc != value) errors.push_back(at(path) + ": expected " + value.dump());
      } else if (key == "properties") {
        if (!doc.is_object()) continue;
        for (const auto& [name, sub] : value.items()) {
          if (doc.contains(name)) check(doc[name], sub, path + "/" + name, errors);
        }
      } else if (key == "required") {
        if (!doc.is_object()) continue;
        for (const auto& name : value) {
          if (!doc.contains(name.get<std::string>())) errors.push_back(at(path) + ": missing required key '" + name.get<std::string>() + "'");
        }
      } else if (key == "additionalProperties") {
        if (!doc.is_object()) continue;
        const Json* props = schema.contains("properties") ? &schema["properties"] : nullptr;
        for (const auto& [name, sub] : doc.items()) {
          if (props && props->contains(name)) continue;
          if (value.is_boolean() && !value.get<bool>()) {
            errors.push_back(at(path) + ": unknown key '" + name + "'");
          } else {
            check(sub, value, path + "/" + name, errors);
          }
        }
      } else if (key == "items") {
        if (!doc.is_array()) continue;
        for (std::size_t i = 0; i < doc.size(); ++i) check(doc[i], value, path + "/" + std::to_string(i), errors);
      } else if (key == "minItems") {
        if (doc.is_array() && doc.size() < value.get<std::size_t>())
          errors.push_back(at(path) + ": fewer than " + value.dump() + " items");
      } else if (key == "maxItems") {
        if (doc.is_array() && doc.size() > value.get<std::size_t>())
          errors.push_back(at(path) + ": more than " + value.dump() + " items");
      } else if (key == "minLength") {
        if (doc.is_string() && doc.get<std::string>().size() < value.get<std::size_t>())
          errors.push_back(at(path) + ": shorter than " + value.dump());
      } else if (key == "minimum" || key == "maximum" || key == "exclusiveMinimum" || key == "exclusiveMaximum") {
        if (!doc.is_number()) continue;
        const double x = doc.get<double>();
        const double b = value.get<double>();
        const bool ok = key == "minimum" ? x >= b : key == "maximum" ? x <= b : key == "exclusiveMinimum" ? x > b : x < b;
        if (!ok) errors.push_back(at(path) + ": " + doc.dump() + " violates " + key + " " + value.dump());
      } else if (key == "oneOf" || key == "anyOf") {
        int matched = 0;
        for (const auto& alt : value) {
          std::vector<std::string> sub;
          check(doc, alt, path, sub);
          matched += sub.empty() ? 1 : 0;
        }
        if (key == "oneOf" ? matched != 1 : matched == 0)
          errors.push_back(at(path) + ": matches " + std::to_string(matched) + " alternatives of " + key);
      } else {
        throw IoError("schema: unsupported keyword '" + key + "'");
      }
    }
  }

  Json root_;
};

inline std::vector<std::string> validate(const Json& doc, const Json& schema) { return SchemaValidator(schema).validate(doc); }

}  // namespace hodgeflow::io
