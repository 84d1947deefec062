#pragma once

// Run configuration and its JSON form. Unknown keys are rejected so typos in a
// config file fail loudly instead of silently falling back to defaults.

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "hrkd/data.hpp"
#include "hrkd/encoder.hpp"
#include "hrkd/errors.hpp"

namespace hrkd {

enum class DistillMode { base_kd, hrkd };

inline std::string mode_name(DistillMode m) { return m == DistillMode::base_kd ? "base_kd" : "hrkd"; }

inline DistillMode parse_mode(const std::string& s) {
  if (s == "base_kd") return DistillMode::base_kd;
  if (s == "hrkd") return DistillMode::hrkd;
  throw ConfigError("unknown mode '" + s + "' (expected base_kd or hrkd)");
}

struct Ablations {
  bool no_self_attention = false;
  bool no_comp_agg = false;
  bool no_hierarchical = false;
  bool no_domain_rel = false;

  friend bool operator==(const Ablations&, const Ablations&) = default;
};

struct RunConfig {
  EncoderConfig teacher{4, 64, 128, 2, 0, 32, {}};
  EncoderConfig student{2, 32, 64, 2, 0, 32, {}};
  std::size_t gat_heads = 2;
  std::size_t gat_head_width = 0;  // 0: half the student width
  double pred_weight = 1.0;  // weight of the prediction loss
  double temperature = 1.0;
  double teacher_lr = 2e-3;
  double student_lr = 2e-3;
  double warmup_fraction = 0.1;
  std::size_t teacher_epochs = 3;
  std::size_t student_epochs = 10;
  std::size_t batch_size = 32;
  std::size_t max_len = 32;
  std::uint64_t seed = 0;
  double sample_rate = 1.0;
  DistillMode mode = DistillMode::hrkd;
  Ablations ablations;
  bool detach_prototypes = false;
  std::size_t log_every = 1;
  SyntheticConfig data;

  std::size_t head_width() const { return gat_head_width ? gat_head_width : std::max<std::size_t>(student.hidden / 2, 1); }

  /// Checks everything that does not depend on the corpus.
  void validate() const {
    if (!(sample_rate > 0.0 && sample_rate <= 1.0)) throw ConfigError("sample_rate must lie in (0, 1]");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (!(pred_weight >= 0.0)) throw ConfigError("pred_weight must be non-negative");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (max_len < 2) throw ConfigError("max_len must be >= 2");
    if (gat_heads == 0) throw ConfigError("gat_heads must be >= 1");
    if (log_every == 0) throw ConfigError("log_every must be >= 1");
    if (!(teacher_lr > 0.0 && student_lr > 0.0)) throw ConfigError("learning rates must be positive");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ConfigError("warmup_fraction must lie in [0, 1)");
    if (teacher.heads != student.heads) {
      throw ConfigError("teacher and student need the same head count for attention distillation (" +
                        std::to_string(teacher.heads) + " vs " + std::to_string(student.heads) + ")");
    }
    layer_map(student.num_layers, teacher.num_layers);
    for (const auto* e : {&teacher, &student}) {
      if (e->hidden == 0 || e->hidden % e->heads != 0) throw ConfigError("hidden width must be divisible by heads");
      if (e->ffn_hidden == 0 || e->num_layers == 0) throw ConfigError("encoder depth and ffn width must be >= 1");
    }
  }

  /// Fills vocabulary, length and class counts of both encoders from the data.
  void bind(std::size_t vocab_size, const std::vector<std::size_t>& classes) {
    for (auto* e : {&teacher, &student}) {
      e->vocab_size = vocab_size;
      e->max_len = max_len;
      e->classes_per_domain = classes;
    }
    teacher.validate();
    student.validate();
  }
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json encoder_to_json(const EncoderConfig& c) {
  return {{"num_layers", c.num_layers}, {"hidden", c.hidden},         {"ffn_hidden", c.ffn_hidden},
          {"heads", c.heads},           {"vocab_size", c.vocab_size}, {"max_len", c.max_len},
          {"classes_per_domain", c.classes_per_domain}};
}

inline EncoderConfig encoder_from_json(const nlohmann::json& j, EncoderConfig c, const std::string& where) {
  detail::reject_unknown(j, {"num_layers", "hidden", "ffn_hidden", "heads", "vocab_size", "max_len", "classes_per_domain"},
                         where);
  detail::read_field(j, "num_layers", c.num_layers, where);
  detail::read_field(j, "hidden", c.hidden, where);
  detail::read_field(j, "ffn_hidden", c.ffn_hidden, where);
  detail::read_field(j, "heads", c.heads, where);
  detail::read_field(j, "vocab_size", c.vocab_size, where);
  detail::read_field(j, "max_len", c.max_len, where);
  detail::read_field(j, "classes_per_domain", c.classes_per_domain, where);
  return c;
}

inline nlohmann::json synthetic_to_json(const SyntheticConfig& s) {
  return {{"domains", s.domains},       {"classes", s.classes},
          {"vocab", s.vocab},           {"train", s.train},
          {"dev", s.dev},               {"test", s.test},
          {"sharing", s.sharing},       {"seed", s.seed},
          {"keywords_per_class", s.keywords_per_class}, {"fillers", s.fillers},
          {"min_words", s.min_words},   {"max_words", s.max_words},
          {"min_keywords", s.min_keywords}, {"max_keywords", s.max_keywords}};
}

inline SyntheticConfig synthetic_from_json(const nlohmann::json& j, SyntheticConfig s) {
  const std::string w = "data";
  detail::reject_unknown(j, {"domains", "classes", "vocab", "train", "dev", "test", "sharing", "seed", "keywords_per_class",
                             "fillers", "min_words", "max_words", "min_keywords", "max_keywords"},
                         w);
  detail::read_field(j, "domains", s.domains, w);
  detail::read_field(j, "classes", s.classes, w);
  detail::read_field(j, "vocab", s.vocab, w);
  detail::read_field(j, "train", s.train, w);
  detail::read_field(j, "dev", s.dev, w);
  detail::read_field(j, "test", s.test, w);
  detail::read_field(j, "sharing", s.sharing, w);
  detail::read_field(j, "seed", s.seed, w);
  detail::read_field(j, "keywords_per_class", s.keywords_per_class, w);
  detail::read_field(j, "fillers", s.fillers, w);
  detail::read_field(j, "min_words", s.min_words, w);
  detail::read_field(j, "max_words", s.max_words, w);
  detail::read_field(j, "min_keywords", s.min_keywords, w);
  detail::read_field(j, "max_keywords", s.max_keywords, w);
  return s;
}

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"teacher", encoder_to_json(c.teacher)},
          {"student", encoder_to_json(c.student)},
          {"gat_heads", c.gat_heads},
          {"gat_head_width", c.gat_head_width},
          {"pred_weight", c.pred_weight},
          {"temperature", c.temperature},
          {"teacher_lr", c.teacher_lr},
          {"student_lr", c.student_lr},
          {"warmup_fraction", c.warmup_fraction},
          {"teacher_epochs", c.teacher_epochs},
          {"student_epochs", c.student_epochs},
          {"batch_size", c.batch_size},
          {"max_len", c.max_len},
          {"seed", c.seed},
          {"sample_rate", c.sample_rate},
          {"mode", mode_name(c.mode)},
          {"ablations",
           {{"no_self_attention", c.ablations.no_self_attention},
            {"no_comp_agg", c.ablations.no_comp_agg},
            {"no_hierarchical", c.ablations.no_hierarchical},
            {"no_domain_rel", c.ablations.no_domain_rel}}},
          {"detach_prototypes", c.detach_prototypes},
          {"log_every", c.log_every},
          {"data", synthetic_to_json(c.data)}};
}

/// Overlays `j` on `base`; keys absent from `j` keep their base values.
inline RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {}) {
  const std::string w = "config";
  detail::reject_unknown(j, {"teacher", "student", "gat_heads", "gat_head_width", "pred_weight", "temperature", "teacher_lr",
                             "student_lr", "warmup_fraction", "teacher_epochs", "student_epochs", "batch_size", "max_len",
                             "seed", "sample_rate", "mode", "ablations", "detach_prototypes", "log_every", "data"},
                         w);
  RunConfig c = base;
  if (j.contains("teacher")) c.teacher = encoder_from_json(j["teacher"], c.teacher, "teacher");
  if (j.contains("student")) c.student = encoder_from_json(j["student"], c.student, "student");
  detail::read_field(j, "gat_heads", c.gat_heads, w);
  detail::read_field(j, "gat_head_width", c.gat_head_width, w);
  detail::read_field(j, "pred_weight", c.pred_weight, w);
  detail::read_field(j, "temperature", c.temperature, w);
  detail::read_field(j, "teacher_lr", c.teacher_lr, w);
  detail::read_field(j, "student_lr", c.student_lr, w);
  detail::read_field(j, "warmup_fraction", c.warmup_fraction, w);
  detail::read_field(j, "teacher_epochs", c.teacher_epochs, w);
  detail::read_field(j, "student_epochs", c.student_epochs, w);
  detail::read_field(j, "batch_size", c.batch_size, w);
  detail::read_field(j, "max_len", c.max_len, w);
  detail::read_field(j, "seed", c.seed, w);
  detail::read_field(j, "sample_rate", c.sample_rate, w);
  if (j.contains("mode")) {
    std::string m;
    detail::read_field(j, "mode", m, w);
    c.mode = parse_mode(m);
  }
  if (j.contains("ablations")) {
    const auto& a = j["ablations"];
    detail::reject_unknown(a, {"no_self_attention", "no_comp_agg", "no_hierarchical", "no_domain_rel"}, "ablations");
    detail::read_field(a, "no_self_attention", c.ablations.no_self_attention, "ablations");
    detail::read_field(a, "no_comp_agg", c.ablations.no_comp_agg, "ablations");
    detail::read_field(a, "no_hierarchical", c.ablations.no_hierarchical, "ablations");
    detail::read_field(a, "no_domain_rel", c.ablations.no_domain_rel, "ablations");
  }
  detail::read_field(j, "detach_prototypes", c.detach_prototypes, w);
  detail::read_field(j, "log_every", c.log_every, w);
  if (j.contains("data")) c.data = synthetic_from_json(j["data"], c.data);
  return c;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(j, base);
}

}  // namespace hrkd
