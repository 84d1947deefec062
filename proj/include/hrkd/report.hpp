#pragma once

// Plain-text and JSON summaries of one or more metrics files.

#include <algorithm>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hrkd/errors.hpp"
#include "hrkd/metrics.hpp"

namespace hrkd {

struct RunSummary {
  std::string path;
  std::string role;
  std::string mode;
  double sample_rate = 1.0;
  std::vector<std::string> domains;
  std::size_t steps = 0;
  std::vector<std::pair<std::size_t, double>> loss_curve;  // (step, total)
  nlohmann::json last_ratios = nlohmann::json::array();
  nlohmann::json last_similarity = nlohmann::json::array();
  bool has_final = false;
  std::vector<double> test_accuracy;
  double test_mean = 0.0;
};

namespace detail {

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string row_text(const nlohmann::json& row) {
  std::string s = "[";
  for (std::size_t i = 0; i < row.size(); ++i) s += (i ? ", " : "") + fixed(row[i].get<double>(), 2);
  return s + "]";
}

}  // namespace detail

inline RunSummary summarize_metrics(const std::string& path) {
  const auto records = read_metrics(path);
  RunSummary s;
  s.path = path;
  auto bad = [&](std::size_t i, const std::string& what) {
    return FormatError(path + ": record " + std::to_string(i) + ": " + what);
  };
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const std::string type = r["type"];
    try {
      if (type == "run") {
        s.role = r.value("role", "");
        if (r.contains("config")) {
          s.mode = r["config"].value("mode", "");
          s.sample_rate = r["config"].value("sample_rate", 1.0);
        }
        if (r.contains("domains")) s.domains = r["domains"].get<std::vector<std::string>>();
      } else if (type == "step") {
        const std::size_t step = r.at("step").get<std::size_t>();
        const double total = r.contains("total") ? r["total"].get<double>() : r.at("loss").get<double>();
        if (!s.loss_curve.empty() && step <= s.loss_curve.back().first) throw bad(i, "step numbers must increase");
        s.loss_curve.emplace_back(step, total);
        s.steps = step;
        if (r.contains("ratios")) s.last_ratios = r["ratios"];
        if (r.contains("similarity")) s.last_similarity = r["similarity"];
      } else if (type == "final") {
        s.has_final = true;
        s.test_accuracy = r.at("test_accuracy").at("per_domain").get<std::vector<double>>();
        s.test_mean = r.at("test_accuracy").at("mean").get<double>();
        if (r.contains("sample_rate")) s.sample_rate = r["sample_rate"].get<double>();
        if (r.contains("mode")) s.mode = r["mode"].get<std::string>();
      } else if (type != "epoch") {
        throw bad(i, "unknown record type '" + type + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw bad(i, e.what());
    }
  }
  return s;
}

struct Report {
  std::string text;
  nlohmann::json json;
};

inline Report build_report(const std::vector<std::string>& paths) {
  if (paths.empty()) throw ConfigError("report: at least one metrics file is required");
  Report rep;
  rep.json = {{"runs", nlohmann::json::array()}};
  std::vector<RunSummary> runs;
  for (const auto& p : paths) runs.push_back(summarize_metrics(p));

  for (const auto& s : runs) {
    std::string& t = rep.text;
    t += "== " + s.path + " (" + (s.role.empty() ? "run" : s.role) + (s.mode.empty() ? "" : ", " + s.mode) +
         ", sample_rate " + detail::fixed(s.sample_rate, 2) + ") ==\n";
    nlohmann::json j{{"path", s.path}, {"role", s.role}, {"mode", s.mode}, {"sample_rate", s.sample_rate}, {"steps", s.steps}};
    if (s.loss_curve.empty()) {
      t += "no data (0 steps logged)\n\n";
      j["no_data"] = true;
      rep.json["runs"].push_back(std::move(j));
      continue;
    }
    double lowest = s.loss_curve.front().second;
    for (const auto& [k, v] : s.loss_curve) lowest = std::min(lowest, v);
    t += "steps " + std::to_string(s.steps) + "  loss first " + detail::fixed(s.loss_curve.front().second, 4) + "  min " +
         detail::fixed(lowest, 4) + "  last " + detail::fixed(s.loss_curve.back().second, 4) + "\n";
    const std::size_t stride = std::max<std::size_t>(1, s.loss_curve.size() / 10);
    t += "loss curve:";
    nlohmann::json curve = nlohmann::json::array();
    for (std::size_t i = 0; i < s.loss_curve.size(); i += stride) {
      t += " " + std::to_string(s.loss_curve[i].first) + ":" + detail::fixed(s.loss_curve[i].second, 4);
      curve.push_back({s.loss_curve[i].first, s.loss_curve[i].second});
    }
    t += "\n";
    j["loss_curve"] = std::move(curve);
    if (s.has_final) {
      t += "test accuracy:";
      for (std::size_t d = 0; d < s.test_accuracy.size(); ++d) {
        t += " " + (d < s.domains.size() ? s.domains[d] : "d" + std::to_string(d)) + " " + detail::fixed(s.test_accuracy[d], 4);
      }
      t += "  mean " + detail::fixed(s.test_mean, 4) + "\n";
      j["test_accuracy"] = {{"per_domain", s.test_accuracy}, {"mean", s.test_mean}};
    }
    if (!s.last_ratios.empty()) {
      t += "domain-relational ratios (last step):\n";
      for (std::size_t m = 0; m < s.last_ratios.size(); ++m) t += "  layer " + std::to_string(m) + ": " + detail::row_text(s.last_ratios[m]) + "\n";
      j["ratios"] = s.last_ratios;
    }
    if (!s.last_similarity.empty()) {
      t += "hierarchical similarity (last step):\n";
      for (std::size_t m = 0; m < s.last_similarity.size(); ++m)
        for (std::size_t d = 0; d < s.last_similarity[m].size(); ++d) {
          t += "  layer " + std::to_string(m) + " " + (d < s.domains.size() ? s.domains[d] : "d" + std::to_string(d)) +
               ": " + detail::row_text(s.last_similarity[m][d]) + "\n";
        }
      j["similarity"] = s.last_similarity;
    }
    t += "\n";
    rep.json["runs"].push_back(std::move(j));
  }

  // Accuracy by sample rate across finished student runs.
  std::vector<const RunSummary*> finished;
  for (const auto& s : runs)
    if (s.has_final && s.role != "teacher") finished.push_back(&s);
  if (!finished.empty()) {
    std::stable_sort(finished.begin(), finished.end(), [](auto* a, auto* b) { return a->sample_rate < b->sample_rate; });
    const auto& names = finished.front()->domains;
    std::string& t = rep.text;
    t += "accuracy by sample rate\nrate    mode     ";
    for (std::size_t d = 0; d < finished.front()->test_accuracy.size(); ++d) {
      std::string n = d < names.size() ? names[d] : "d" + std::to_string(d);
      n.resize(std::max<std::size_t>(n.size(), 9), ' ');
      t += n + " ";
    }
    t += "mean\n";
    nlohmann::json table = nlohmann::json::array();
    for (const auto* s : finished) {
      std::string mode = s->mode;
      mode.resize(std::max<std::size_t>(mode.size(), 8), ' ');
      t += detail::fixed(s->sample_rate, 2) + "    " + mode + " ";
      for (std::size_t d = 0; d < s->test_accuracy.size(); ++d) {
        std::string n = d < names.size() ? names[d] : "d" + std::to_string(d);
        std::string cell = detail::fixed(s->test_accuracy[d], 4);
        cell.resize(std::max<std::size_t>(n.size(), 9), ' ');
        t += cell + " ";
      }
      t += detail::fixed(s->test_mean, 4) + "\n";
      table.push_back({{"sample_rate", s->sample_rate}, {"mode", s->mode}, {"per_domain", s->test_accuracy}, {"mean", s->test_mean}});
    }
    rep.json["by_sample_rate"] = std::move(table);
  }
  return rep;
}

}  // namespace hrkd
