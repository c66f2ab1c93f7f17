#pragma once

// JSON schemas for algebras and representations.
//
//   algebra: {"dim": t, "structure_constants": [[[...]]]}  (nesting i -> j -> k)
//            or one of the names "so3", "so21", "so31"
//   rep:     {"algebra": <algebra>, "field": "real"|"complex", "label": str,
//             "generators": [[[ [re,im], ... ]]], "tolerance": double}
//            (generator -> row -> column -> [re, im])

#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "lierep/algebra.hpp"
#include "lierep/reps.hpp"

namespace lierep {

using Json = nlohmann::json;

inline Json algebra_to_json(const StructureConstants& sc, bool prefer_name = true) {
  if (prefer_name)
    if (auto name = builtin_name(sc)) return *name;
  const int t = sc.dim();
  Json a = Json::array();
  for (int i = 0; i < t; ++i) {
    Json row = Json::array();
    for (int j = 0; j < t; ++j) {
      Json col = Json::array();
      for (int k = 0; k < t; ++k) col.push_back(sc(i, j, k));
      row.push_back(std::move(col));
    }
    a.push_back(std::move(row));
  }
  return Json{{"dim", t}, {"structure_constants", std::move(a)}};
}

inline StructureConstants algebra_from_json(const Json& j) {
  if (j.is_string()) {
    auto sc = builtin_algebra(j.get<std::string>());
    if (!sc) throw DomainError("unknown algebra name '" + j.get<std::string>() + "'");
    return *sc;
  }
  if (!j.is_object() || !j.contains("dim") || !j.contains("structure_constants"))
    throw StructuralError("algebra JSON needs 'dim' and 'structure_constants'");
  const int t = j.at("dim").get<int>();
  if (t <= 0) throw StructuralError("algebra dim must be positive");
  const Json& a = j.at("structure_constants");
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(t) * t * t);
  if (!a.is_array() || a.size() != static_cast<std::size_t>(t)) throw StructuralError("structure_constants: bad outer size");
  for (const auto& row : a) {
    if (!row.is_array() || row.size() != static_cast<std::size_t>(t)) throw StructuralError("structure_constants: bad row size");
    for (const auto& col : row) {
      if (!col.is_array() || col.size() != static_cast<std::size_t>(t))
        throw StructuralError("structure_constants: bad column size");
      for (const auto& v : col) values.push_back(v.get<double>());
    }
  }
  return StructureConstants(t, std::move(values));
}

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back({m(r, c).real(), m(r, c).imag()});
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const Json& j) {
  if (!j.is_array() || j.empty()) throw StructuralError("matrix JSON must be a nonempty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j.front().size());
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Json& row = j.at(r);
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) throw StructuralError("matrix JSON: ragged rows");
    for (Eigen::Index c = 0; c < cols; ++c) {
      const Json& e = row.at(c);
      if (e.is_number()) {
        m(r, c) = Complex(e.get<double>(), 0.0);
      } else {
        if (!e.is_array() || e.size() != 2) throw StructuralError("matrix JSON: entries must be [re, im]");
        m(r, c) = Complex(e.at(0).get<double>(), e.at(1).get<double>());
      }
    }
  }
  return m;
}

inline Json rep_to_json(const AlgebraRep& rep) {
  Json gens = Json::array();
  for (const auto& g : rep.generators()) gens.push_back(matrix_to_json(g));
  return Json{{"algebra", algebra_to_json(rep.algebra())},
              {"field", to_string(rep.field())},
              {"label", rep.label()},
              {"tolerance", rep.tolerance()},
              {"generators", std::move(gens)}};
}

/// Reads a rep. Files without a "tolerance" key are checked at 1e-6.
inline AlgebraRep rep_from_json(const Json& j) {
  if (!j.is_object()) throw StructuralError("rep JSON must be an object");
  for (const char* key : {"algebra", "field", "generators"})
    if (!j.contains(key)) throw StructuralError(std::string("rep JSON missing '") + key + "'");
  auto algebra = algebra_from_json(j.at("algebra"));
  const std::string field_name = j.at("field").get<std::string>();
  if (field_name != "real" && field_name != "complex") throw StructuralError("rep JSON: field must be real or complex");
  const Field field = field_name == "real" ? Field::real : Field::complex;
  std::vector<Matrix> gens;
  for (const auto& g : j.at("generators")) gens.push_back(matrix_from_json(g));
  if (gens.empty()) throw StructuralError("rep JSON: no generators");
  const double tol = j.value("tolerance", 1e-6);
  return AlgebraRep(std::move(algebra), std::move(gens), field, j.value("label", std::string("file")), tol);
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return Json::parse(buf.str());
}

inline void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

}  // namespace lierep
