#pragma once

#include <string>
#include <string_view>

#include <json.hpp>

#include "memaudit/calibrate.hpp"
#include "memaudit/error.hpp"
#include "memaudit/tensorio.hpp"

namespace memaudit {

enum class ReportFormat { csv, json };

inline ReportFormat parse_report_format(std::string_view s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  throw ValidationError("report format must be 'csv' or 'json', got '" + std::string(s) + "'");
}

/// Fixed column order:
///   sample_id,s,d,mi,oni,flagged,consensus,neighbor_layer_<k>...
/// Numbers use the shortest round-trip decimal form.
inline std::string report_to_csv(const AuditReport& report) {
  std::string out = "sample_id,s,d,mi,oni,flagged,consensus";
  for (int k : report.layer_ids) out += ",neighbor_layer_" + std::to_string(k);
  out += "\n";
  for (const auto& r : report.samples) {
    out += r.sample_id;
    for (double v : {r.s, r.d, r.mi, r.oni}) out += "," + format_double(v);
    out += r.flagged ? ",true" : ",false";
    out += "," + std::to_string(r.consensus);
    for (auto n : r.neighbors) out += "," + std::to_string(n);
    out += "\n";
  }
  return out;
}

inline nlohmann::json report_to_json(const AuditReport& report) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& r : report.samples) {
    nlohmann::json neighbors = nlohmann::json::object();
    nlohmann::json layer_scores = nlohmann::json::object();
    for (std::size_t i = 0; i < report.layer_ids.size(); ++i) {
      const auto key = std::to_string(report.layer_ids[i]);
      neighbors[key] = r.neighbors.at(i);
      layer_scores[key] = r.layer_scores.at(i);
    }
    samples.push_back({{"sample_id", r.sample_id},
                       {"s", r.s},
                       {"d", r.d},
                       {"mi", r.mi},
                       {"oni", r.oni},
                       {"flagged", r.flagged},
                       {"consensus", r.consensus},
                       {"consensus_neighbor", r.consensus_neighbor},
                       {"neighbors", neighbors},
                       {"layer_scores", layer_scores},
                       {"degenerate", r.degenerate}});
  }
  nlohmann::json calib = calibration_to_json(report.calibration);
  calib.erase("samples");
  calib["n_samples"] = report.calibration.samples.size();
  return {{"layers", report.layer_ids},
          {"samples", samples},
          {"summary",
           {{"n_test", report.samples.size()},
            {"n_train", report.n_train},
            {"mean_mi", report.mean_mi},
            {"mean_oni", report.mean_oni},
            {"threshold", report.threshold},
            {"n_flagged", report.flagged_count()},
            {"clamped_negative_similarities", report.clamped_negatives},
            {"rank_deficient_layers", report.rank_deficient_layers},
            {"calibration", calib}}}};
}

inline void write_report(const fs::path& path, const AuditReport& report, ReportFormat format) {
  if (format == ReportFormat::csv) {
    atomic_write_file(path, report_to_csv(report));
  } else {
    atomic_write_file(path, report_to_json(report).dump(2) + "\n");
  }
}

/// Rebuilds the per-sample part of a report from its JSON form.
inline AuditReport report_from_json(const nlohmann::json& j) {
  AuditReport r;
  try {
    r.layer_ids = j.at("layers").get<std::vector<int>>();
    const auto& sum = j.at("summary");
    r.threshold = sum.at("threshold").get<double>();
    r.n_train = sum.value("n_train", std::size_t{0});
    r.mean_mi = sum.at("mean_mi").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                            : sum.at("mean_mi").get<double>();
    r.mean_oni = sum.at("mean_oni").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                              : sum.at("mean_oni").get<double>();
    const auto& c = sum.at("calibration");
    r.calibration.mu_null = c.at("mu_null").get<double>();
    r.calibration.sigma_null = c.at("sigma_null").get<double>();
    r.calibration.n_iterations = c.value("n_iterations", std::size_t{0});
    r.calibration.fraction = c.value("fraction", 0.5);
    r.calibration.seed = c.value("seed", std::uint64_t{0});
    for (const auto& s : j.at("samples")) {
      SampleResult x;
      x.sample_id = s.at("sample_id").get<std::string>();
      x.s = s.at("s").get<double>();
      x.d = s.at("d").get<double>();
      x.mi = s.at("mi").get<double>();
      x.oni = s.at("oni").get<double>();
      x.flagged = s.at("flagged").get<bool>();
      x.consensus = s.at("consensus").get<std::size_t>();
      x.consensus_neighbor = s.value("consensus_neighbor", std::size_t{0});
      for (int k : r.layer_ids) {
        const auto key = std::to_string(k);
        x.neighbors.push_back(s.at("neighbors").at(key).get<std::size_t>());
        x.layer_scores.push_back(s.at("layer_scores").at(key).get<double>());
      }
      x.degenerate = s.value("degenerate", false);
      r.samples.push_back(std::move(x));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("report: ") + e.what());
  }
  return r;
}

}  // namespace memaudit
