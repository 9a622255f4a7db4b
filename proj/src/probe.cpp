#include "relval/probe.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "relval/error.hpp"

namespace relval {

namespace {

constexpr const char* kMagic = "RVACT1";

std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

void to_little_endian(std::vector<float>& values) {
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& f : values) f = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(f)));
  }
}

std::size_t header_field(const std::string& header, const std::string& key) {
  const auto pos = header.find(" " + key + "=");
  if (pos == std::string::npos) throw SchemaError("activation header lacks '" + key + "='");
  try {
    return std::stoull(header.substr(pos + key.size() + 2));
  } catch (const std::exception&) {
    throw SchemaError("activation header field '" + key + "' is not a count");
  }
}

double two_sided_p(double t, double df) {
  if (std::isnan(t)) return 1.0;
  if (std::isinf(t)) return 0.0;
  const boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

}  // namespace

ActivationMatrix read_activations(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open activation file " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw SchemaError("activation file is empty");
  if (header.rfind(kMagic, 0) != 0) throw SchemaError("activation file does not start with " + std::string(kMagic));
  if (header.find(" dtype=f32le") == std::string::npos) throw SchemaError("activation dtype must be f32le");
  ActivationMatrix m;
  m.rows = header_field(header, "rows");
  m.cols = header_field(header, "cols");
  m.values.resize(m.rows * m.cols);
  in.read(reinterpret_cast<char*>(m.values.data()), static_cast<std::streamsize>(m.values.size() * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != m.values.size() * sizeof(float))
    throw SchemaError("activation file holds fewer values than rows x cols");
  if (in.peek() != std::char_traits<char>::eof()) throw SchemaError("activation file holds more values than rows x cols");
  to_little_endian(m.values);
  for (float v : m.values)
    if (!std::isfinite(v)) throw SchemaError("activation file contains non-finite values");
  return m;
}

void write_activations(const std::filesystem::path& path, const ActivationMatrix& m) {
  if (m.values.size() != m.rows * m.cols) throw Error("activation matrix size does not match its dimensions");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << kMagic << " rows=" << m.rows << " cols=" << m.cols << " dtype=f32le\n";
  std::vector<float> le = m.values;
  to_little_endian(le);
  out.write(reinterpret_cast<const char*>(le.data()), static_cast<std::streamsize>(le.size() * sizeof(float)));
}

std::vector<ProbeTrial> read_probe_trials(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open trial sidecar " + path.string());
  std::vector<ProbeTrial> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("first").get<std::string>(), j.at("second").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_probe_trials(const std::filesystem::path& path, std::span<const ProbeTrial> trials) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (const auto& t : trials) out << nlohmann::json{{"first", t.first}, {"second", t.second}}.dump() << '\n';
}

std::vector<ValueDifference> value_difference_predictors(std::span<const ProbeTrial> trials, const TaskSpec& task) {
  const auto labels = relative_value_labels(task);
  double ev_lo = task.expected_value(0), ev_hi = ev_lo;
  double rel_lo = labels[0], rel_hi = labels[0];
  for (std::size_t i = 0; i < task.options.size(); ++i) {
    ev_lo = std::min(ev_lo, task.expected_value(i));
    ev_hi = std::max(ev_hi, task.expected_value(i));
    rel_lo = std::min(rel_lo, labels[i]);
    rel_hi = std::max(rel_hi, labels[i]);
  }
  auto index = [&](const std::string& id) {
    try {
      return task.option_index(id);
    } catch (const Error&) {
      throw ConfigError("option '" + id + "' is not part of task " + task.name);
    }
  };
  auto rel = [&](std::size_t i) { return rel_hi > rel_lo ? (labels[i] - rel_lo) / (rel_hi - rel_lo) : 0.5; };
  std::vector<ValueDifference> out;
  for (const auto& t : trials) {
    const auto a = index(t.first), b = index(t.second);
    ValueDifference d;
    d.abs = ev_hi > ev_lo ? (task.expected_value(a) - task.expected_value(b)) / (ev_hi - ev_lo) : 0.0;
    d.rel = rel(a) - rel(b);
    out.push_back(d);
  }
  return out;
}

std::string_view unit_class_name(UnitClass c) {
  switch (c) {
    case UnitClass::neither: return "neither";
    case UnitClass::abs_only: return "abs_only";
    case UnitClass::rel_only: return "rel_only";
    case UnitClass::both: return "both";
  }
  return "?";
}

double critical_p_value(std::size_t n_units) { return 0.001 / (2.0 * static_cast<double>(n_units)); }

std::vector<UnitRegressionResult> unit_regressions(const ActivationMatrix& acts,
                                                   std::span<const ValueDifference> predictors, double p_crit) {
  const std::size_t n = acts.rows;
  if (predictors.size() != n)
    throw Error("predictor rows (" + std::to_string(predictors.size()) + ") do not match activation rows (" +
                std::to_string(n) + ")");
  if (n < 4) throw Error("unit regressions need at least 4 rows");
  if (acts.cols == 0) throw Error("activation matrix has no units");
  if (p_crit <= 0.0) p_crit = critical_p_value(acts.cols);

  Eigen::MatrixXd x(n, 3);
  for (std::size_t r = 0; r < n; ++r) {
    x(static_cast<Eigen::Index>(r), 0) = 1.0;
    x(static_cast<Eigen::Index>(r), 1) = predictors[r].abs;
    x(static_cast<Eigen::Index>(r), 2) = predictors[r].rel;
  }
  const char* names[] = {"intercept", "delta_abs", "delta_rel"};
  for (Eigen::Index j = 1; j < 3; ++j)
    if (x.col(j).maxCoeff() - x.col(j).minCoeff() == 0.0)
      throw Error(std::string("design is rank deficient: predictor ") + names[j] + " is constant");
  const Eigen::MatrixXd xtx = x.transpose() * x;
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(xtx);
  if (lu.rank() < 3) throw Error("design is rank deficient: predictors delta_abs and delta_rel are collinear");
  const Eigen::Matrix3d xtx_inv = lu.inverse();
  const Eigen::MatrixXd proj = xtx_inv * x.transpose();  // 3 x n
  const double df = static_cast<double>(n - 3);

  const Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> y_all(
      acts.values.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(acts.cols));

  std::vector<UnitRegressionResult> out(acts.cols);
  constexpr Eigen::Index kBlock = 256;
  for (Eigen::Index c0 = 0; c0 < static_cast<Eigen::Index>(acts.cols); c0 += kBlock) {
    const Eigen::Index w = std::min<Eigen::Index>(kBlock, static_cast<Eigen::Index>(acts.cols) - c0);
    const Eigen::MatrixXd y = y_all.middleCols(c0, w).cast<double>();
    const Eigen::MatrixXd b = proj * y;
    const Eigen::MatrixXd resid = y - x * b;
    for (Eigen::Index j = 0; j < w; ++j) {
      auto& u = out[static_cast<std::size_t>(c0 + j)];
      u.unit = static_cast<std::size_t>(c0 + j);
      u.intercept = b(0, j);
      u.slope_abs = b(1, j);
      u.slope_rel = b(2, j);
      const double s2 = resid.col(j).squaredNorm() / df;
      const double se_abs = std::sqrt(s2 * xtx_inv(1, 1));
      const double se_rel = std::sqrt(s2 * xtx_inv(2, 2));
      u.t_abs = se_abs > 0.0 ? u.slope_abs / se_abs : (u.slope_abs == 0.0 ? 0.0 : std::copysign(INFINITY, u.slope_abs));
      u.t_rel = se_rel > 0.0 ? u.slope_rel / se_rel : (u.slope_rel == 0.0 ? 0.0 : std::copysign(INFINITY, u.slope_rel));
      u.p_abs = two_sided_p(u.t_abs, df);
      u.p_rel = two_sided_p(u.t_rel, df);
      const bool sa = u.p_abs < p_crit, sr = u.p_rel < p_crit;
      u.classification = sa && sr ? UnitClass::both : sa ? UnitClass::abs_only : sr ? UnitClass::rel_only
                                                                               : UnitClass::neither;
    }
  }
  return out;
}

ClassificationCounts classification_counts(std::span<const UnitRegressionResult> results) {
  ClassificationCounts c;
  for (const auto& r : results) {
    switch (r.classification) {
      case UnitClass::neither: ++c.neither; break;
      case UnitClass::abs_only: ++c.abs_only; break;
      case UnitClass::rel_only: ++c.rel_only; break;
      case UnitClass::both: ++c.both; break;
    }
  }
  return c;
}

EffectSizeSummary effect_size_summary(std::span<const UnitRegressionResult> results) {
  if (results.empty()) throw Error("effect size summary needs at least one unit");
  std::vector<double> a, r, d;
  for (const auto& u : results) {
    a.push_back(std::abs(u.slope_abs));
    r.push_back(std::abs(u.slope_rel));
    d.push_back(r.back() - a.back());
  }
  return {summarize(a), summarize(r), summarize(d)};
}

void write_unit_results_csv(const std::filesystem::path& path, std::span<const UnitRegressionResult> results) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.precision(10);
  out << "unit,intercept,slope_abs,slope_rel,t_abs,t_rel,p_abs,p_rel,class\n";
  for (const auto& u : results)
    out << u.unit << ',' << u.intercept << ',' << u.slope_abs << ',' << u.slope_rel << ',' << u.t_abs << ','
        << u.t_rel << ',' << u.p_abs << ',' << u.p_rel << ',' << unit_class_name(u.classification) << '\n';
}

void write_classification_csv(const std::filesystem::path& path, const ClassificationCounts& counts) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  const double total = static_cast<double>(counts.total());
  auto row = [&](const char* name, std::size_t n) {
    out << name << ',' << n << ',' << (total > 0 ? 100.0 * static_cast<double>(n) / total : 0.0) << '\n';
  };
  out << "category,count,percent\n";
  row("neither", counts.neither);
  row("abs_only", counts.abs_only);
  row("rel_only", counts.rel_only);
  row("both", counts.both);
}

}  // namespace relval
