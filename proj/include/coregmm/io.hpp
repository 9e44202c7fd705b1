#pragma once

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "coregmm/errors.hpp"
#include "coregmm/gmm.hpp"
#include "coregmm/linalg.hpp"
#include "coregmm/points.hpp"

// File formats: point sets as CSV (one point per row, optional leading
// weight column detected from the header) and mixture models as JSON
// {k, d, components: [{weight, mean, covariance}]} with row-major
// covariance entries.

namespace coregmm {

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  fields.push_back(cur);
  for (std::string& f : fields) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return fields;
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  std::size_t used = 0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == s.size();
}

inline std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// Shortest round-trip-exact decimal form.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  double back = 0.0;
  std::sscanf(buf, "%lf", &back);
  if (back == v) {
    for (int prec = 1; prec < 17; ++prec) {
      char shorter[40];
      std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
      std::sscanf(shorter, "%lf", &back);
      if (back == v) return shorter;
    }
  }
  return buf;
}

}  // namespace detail

// Reads a point set from CSV. A non-numeric first row is treated as a
// header; the points are weighted iff its first field is named "weight"
// (case-insensitive). Without a header every column is a coordinate and
// all weights are 1.
inline WeightedPointSet read_points_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoFailure("read_points_csv: cannot open " + path);

  std::vector<std::vector<double>> rows;
  bool weighted = false;
  bool first = true;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::vector<std::string> fields = detail::split_csv_line(line);
    std::vector<double> row(fields.size());
    bool numeric = true;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (!detail::parse_double(fields[i], row[i])) {
        numeric = false;
        break;
      }
    }
    if (first) {
      first = false;
      if (!numeric) {
        weighted = detail::lower(fields[0]) == "weight";
        continue;
      }
    }
    if (!numeric) {
      throw ParseFailure("read_points_csv: non-numeric value at " + path +
                         ":" + std::to_string(line_no));
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseFailure("read_points_csv: ragged row at " + path + ":" +
                         std::to_string(line_no));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw EmptyInput("read_points_csv: no data rows in " + path);

  const int cols = static_cast<int>(rows.front().size());
  const int d = weighted ? cols - 1 : cols;
  if (d < 1) throw ParseFailure("read_points_csv: no coordinate columns in " + path);

  Eigen::MatrixXd pts(rows.size(), d);
  Eigen::VectorXd w(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    w[r] = weighted ? rows[r][0] : 1.0;
    for (int c = 0; c < d; ++c) pts(r, c) = rows[r][weighted ? c + 1 : c];
  }
  return WeightedPointSet(std::move(pts), std::move(w));
}

// Writes weight plus coordinates under a "weight,x0,..." header.
inline void write_points_csv(std::ostream& out, const WeightedPointSet& p) {
  out << "weight";
  for (int c = 0; c < p.dim(); ++c) out << ",x" << c;
  out << "\n";
  for (int r = 0; r < p.size(); ++r) {
    out << detail::format_double(p.weight(r));
    for (int c = 0; c < p.dim(); ++c) {
      out << ',' << detail::format_double(p.points()(r, c));
    }
    out << "\n";
  }
}

inline void write_points_csv(const std::string& path, const WeightedPointSet& p) {
  std::ofstream out(path);
  if (!out) throw IoFailure("write_points_csv: cannot open " + path);
  write_points_csv(out, p);
  if (!out) throw IoFailure("write_points_csv: write failed for " + path);
}

inline nlohmann::json gmm_to_json(const GmmModel& model) {
  nlohmann::json comps = nlohmann::json::array();
  for (int i = 0; i < model.k(); ++i) {
    const GmmComponent& c = model.component(i);
    std::vector<double> mean(c.mean.data(), c.mean.data() + c.mean.size());
    std::vector<double> cov;
    cov.reserve(model.dim() * model.dim());
    for (int r = 0; r < model.dim(); ++r) {
      for (int s = 0; s < model.dim(); ++s) cov.push_back(c.covariance.matrix()(r, s));
    }
    comps.push_back({{"weight", c.weight}, {"mean", mean}, {"covariance", cov}});
  }
  return {{"k", model.k()}, {"d", model.dim()}, {"components", comps}};
}

inline GmmModel gmm_from_json(const nlohmann::json& j,
                              double eigen_floor = kEigenFloor) {
  if (!j.contains("k") || !j.contains("d") || !j.contains("components")) {
    throw ParseFailure("gmm_from_json: missing k, d, or components");
  }
  const int k = j.at("k").get<int>();
  const int d = j.at("d").get<int>();
  const nlohmann::json& comps = j.at("components");
  if (k < 1 || d < 1 || static_cast<int>(comps.size()) != k) {
    throw ParseFailure("gmm_from_json: component count does not match k");
  }
  std::vector<GmmComponent> out;
  out.reserve(k);
  for (const nlohmann::json& c : comps) {
    const std::vector<double> mean = c.at("mean").get<std::vector<double>>();
    const std::vector<double> cov = c.at("covariance").get<std::vector<double>>();
    if (static_cast<int>(mean.size()) != d ||
        static_cast<int>(cov.size()) != d * d) {
      throw ParseFailure("gmm_from_json: mean or covariance size mismatch");
    }
    Eigen::VectorXd mu(d);
    for (int i = 0; i < d; ++i) mu[i] = mean[i];
    Eigen::MatrixXd sigma(d, d);
    for (int r = 0; r < d; ++r) {
      for (int s = 0; s < d; ++s) sigma(r, s) = cov[r * d + s];
    }
    out.emplace_back(c.at("weight").get<double>(), std::move(mu),
                     PsdMatrix(sigma, eigen_floor));
  }
  return GmmModel(std::move(out));
}

inline void save_gmm_json(const std::string& path, const GmmModel& model) {
  std::ofstream out(path);
  if (!out) throw IoFailure("save_gmm_json: cannot open " + path);
  out << gmm_to_json(model).dump(2) << "\n";
  if (!out) throw IoFailure("save_gmm_json: write failed for " + path);
}

inline GmmModel load_gmm_json(const std::string& path,
                              double eigen_floor = kEigenFloor) {
  std::ifstream in(path);
  if (!in) throw IoFailure("load_gmm_json: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ParseFailure(std::string("load_gmm_json: ") + e.what());
  }
  return gmm_from_json(j, eigen_floor);
}

}  // namespace coregmm
