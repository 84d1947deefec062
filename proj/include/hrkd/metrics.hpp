#pragma once

// Line-delimited JSON metrics. Record types:
//   run    configuration and run shape
//   step   per-domain loss components, total, ratio rows, attention traces
//   epoch  dev accuracy after an epoch
//   final  test accuracy per domain and macro average

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hrkd/errors.hpp"
#include "hrkd/tensor.hpp"

namespace hrkd {

class MetricsSink {
 public:
  MetricsSink() = default;
  explicit MetricsSink(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw FormatError("cannot open metrics file " + path);
  }

  bool active() const { return out_.is_open(); }

  void write(const nlohmann::json& record) {
    records_.push_back(record);
    if (!active()) return;
    out_ << record.dump() << '\n';
    out_.flush();
    if (!out_) throw FormatError("write failed for " + path_);
  }

  /// Everything written so far, including when no file is attached.
  const std::vector<nlohmann::json>& records() const { return records_; }

 private:
  std::string path_;
  std::ofstream out_;
  std::vector<nlohmann::json> records_;
};

inline nlohmann::json tensor_rows(const Tensor& t) {
  nlohmann::json rows = nlohmann::json::array();
  if (t.rank() == 1) {
    for (double v : t.data()) rows.push_back(v);
    return rows;
  }
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    nlohmann::json r = nlohmann::json::array();
    for (std::size_t j = 0; j < t.dim(1); ++j) r.push_back(t.at(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Parses a metrics file; a malformed line is reported by its 0-based record index.
inline std::vector<nlohmann::json> read_metrics(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open metrics file " + path);
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t index = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw FormatError(path + ": record " + std::to_string(index) + " is not valid JSON");
    }
    if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
      throw FormatError(path + ": record " + std::to_string(index) + " has no string 'type' field");
    }
    out.push_back(std::move(j));
    ++index;
  }
  return out;
}

}  // namespace hrkd
