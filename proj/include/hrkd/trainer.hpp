#pragma once

// Teacher training, student distillation and evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hrkd/autodiff.hpp"
#include "hrkd/checkpoint.hpp"
#include "hrkd/compare_aggregate.hpp"
#include "hrkd/config.hpp"
#include "hrkd/data.hpp"
#include "hrkd/encoder.hpp"
#include "hrkd/kd_losses.hpp"
#include "hrkd/metrics.hpp"
#include "hrkd/optimizer.hpp"
#include "hrkd/prototypes.hpp"
#include "hrkd/relational_graph.hpp"

namespace hrkd {

/// Independent seed per named component, so adding or skipping one component
/// never shifts another's random stream.
inline std::uint64_t component_seed(std::uint64_t seed, const std::string& tag) {
  std::uint64_t z = seed ^ fnv1a64(tag.data(), tag.size());
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Endless per-domain batches: a shuffled pass over the rows, reshuffled on wrap.
class BatchStream {
 public:
  BatchStream(std::size_t rows, std::size_t batch, std::uint64_t seed)
      : batch_(std::min(batch, rows)), order_(rows), rng_(seed) {
    if (rows == 0) throw DomainError("batch stream over an empty split");
    for (std::size_t i = 0; i < rows; ++i) order_[i] = i;
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    while (out.size() < batch_) {
      if (cursor_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        cursor_ = 0;
      }
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  std::size_t batch_;
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t cursor_ = 0;
};

struct PreparedData {
  std::vector<std::string> domain_names;
  std::vector<EncodedSplit> train, dev, test;
};

inline PreparedData prepare_data(const Corpus& corpus, const Vocabulary& vocab, std::size_t len) {
  PreparedData p;
  for (const auto& d : corpus.domains) p.domain_names.push_back(d.name);
  p.train = encode_split(vocab, corpus, Split::train, len);
  p.dev = encode_split(vocab, corpus, Split::dev, len);
  p.test = encode_split(vocab, corpus, Split::test, len);
  return p;
}

inline std::size_t steps_per_epoch(const std::vector<EncodedSplit>& train, std::size_t batch) {
  std::size_t most = 0;
  for (const auto& s : train) most = std::max(most, s.size());
  return std::max<std::size_t>(1, (most + batch - 1) / batch);
}

// ---------------------------------------------------------------------------
// Evaluation

struct Accuracy {
  std::vector<double> per_domain;
  double macro = 0.0;
  std::vector<std::vector<int>> predictions;  // argmax per sample, per domain
};

inline Accuracy evaluate(const EncoderConfig& config, const EncoderParams& params, const std::vector<EncodedSplit>& splits,
                         std::size_t chunk = 128) {
  NoGradGuard no_grad;
  Accuracy acc;
  for (const auto& split : splits) {
    if (split.size() == 0) throw DomainError("evaluate: empty split for domain " + std::to_string(split.domain_id));
    std::vector<int> preds;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < split.size(); start += chunk) {
      std::vector<std::size_t> rows;
      for (std::size_t r = start; r < std::min(split.size(), start + chunk); ++r) rows.push_back(r);
      const DomainBatch b = split.batch(rows);
      const Tensor logits = forward(config, params, b).logits.value();
      const std::size_t classes = logits.dim(1);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c)
          if (logits.at(i, c) > logits.at(i, best)) best = c;
        preds.push_back(static_cast<int>(best));
        correct += static_cast<int>(best) == b.labels[i];
      }
    }
    acc.per_domain.push_back(static_cast<double>(correct) / static_cast<double>(split.size()));
    acc.predictions.push_back(std::move(preds));
  }
  for (double a : acc.per_domain) acc.macro += a;
  acc.macro /= static_cast<double>(acc.per_domain.size());
  return acc;
}

inline nlohmann::json accuracy_json(const Accuracy& a) {
  return {{"per_domain", a.per_domain}, {"mean", a.macro}};
}

// ---------------------------------------------------------------------------
// Teacher

struct TeacherModel {
  EncoderConfig config;
  EncoderParams params;
  Vocabulary vocab;
  std::vector<std::string> domain_names;
};

/// Mean hard-label cross-entropy of a [B×C] logit batch.
inline Var cross_entropy(const Var& logits, const std::vector<int>& labels) {
  Tensor onehot(logits.shape(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) onehot.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  return scale(sum(mul(Var(std::move(onehot)), log_softmax(logits))), -1.0 / static_cast<double>(labels.size()));
}

inline nlohmann::json model_meta(const std::string& role, const RunConfig& cfg, const EncoderConfig& enc,
                                 const Vocabulary& vocab, const std::vector<std::string>& domains) {
  return {{"role", role},
          {"encoder", encoder_to_json(enc)},
          {"run_config", to_json(cfg)},
          {"vocab", vocab.tokens()},
          {"domains", domains}};
}

struct TrainIo {
  MetricsSink* metrics = nullptr;
  std::string checkpoint_path;    // final checkpoint; empty: none
  std::string epoch_checkpoints;  // directory for per-epoch checkpoints; empty: none
};

/// Shared trunk plus per-domain heads on hard labels. Every step draws one batch
/// per domain and sums their cross-entropies.
inline TeacherModel train_teacher(RunConfig cfg, const Corpus& corpus, const TrainIo& io = {}) {
  cfg.validate();
  if (corpus.num_domains() == 0) throw ConfigError("train_teacher: corpus has no domains");
  TeacherModel t;
  t.vocab = Vocabulary::build(corpus);
  cfg.bind(t.vocab.size(), corpus.classes_per_domain());
  t.config = cfg.teacher;
  t.domain_names.clear();
  for (const auto& d : corpus.domains) t.domain_names.push_back(d.name);
  const PreparedData data = prepare_data(corpus, t.vocab, cfg.max_len);

  t.params = init_params(t.config, component_seed(cfg.seed, "teacher.init"));
  std::vector<BatchStream> streams;
  for (std::size_t d = 0; d < data.train.size(); ++d) {
    streams.emplace_back(data.train[d].size(), cfg.batch_size, component_seed(cfg.seed, "teacher.batches" + std::to_string(d)));
  }
  const std::size_t per_epoch = steps_per_epoch(data.train, cfg.batch_size);
  AdamConfig ac;
  ac.lr = cfg.teacher_lr;
  ac.warmup_fraction = cfg.warmup_fraction;
  ac.total_steps = per_epoch * cfg.teacher_epochs;
  Adam opt(t.params.named(), ac);

  if (io.metrics) {
    io.metrics->write({{"type", "run"}, {"role", "teacher"}, {"config", to_json(cfg)}, {"domains", t.domain_names},
                       {"steps_per_epoch", per_epoch}, {"total_steps", ac.total_steps}});
  }
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.teacher_epochs; ++epoch) {
    for (std::size_t s = 0; s < per_epoch; ++s) {
      ++step;
      double value = 0.0;
      std::vector<double> per_domain;
      {
        Tape tape;
        Var loss;
        for (std::size_t d = 0; d < data.train.size(); ++d) {
          const DomainBatch b = data.train[d].batch(streams[d].next());
          Var ce = cross_entropy(forward(t.config, t.params, b).logits, b.labels);
          per_domain.push_back(ce.item());
          loss = d == 0 ? ce : add(loss, ce);
        }
        value = loss.item();
        if (!std::isfinite(value)) throw DomainError("train_teacher: loss diverged at step " + std::to_string(step));
        tape.backward(loss);
      }
      opt.step();
      opt.zero_grad();
      if (io.metrics && (step == 1 || step % cfg.log_every == 0)) {
        io.metrics->write({{"type", "step"}, {"step", step}, {"epoch", epoch}, {"loss", value}, {"per_domain", per_domain}});
      }
    }
    const Accuracy dev = evaluate(t.config, t.params, data.dev);
    if (io.metrics) io.metrics->write({{"type", "epoch"}, {"epoch", epoch}, {"dev_accuracy", accuracy_json(dev)}});
    if (!io.epoch_checkpoints.empty()) {
      save_checkpoint((std::filesystem::path(io.epoch_checkpoints) / ("teacher_epoch" + std::to_string(epoch) + ".ckpt")).string(),
                      model_meta("teacher", cfg, t.config, t.vocab, t.domain_names), t.params.named());
    }
  }
  if (io.metrics) {
    io.metrics->write({{"type", "final"}, {"role", "teacher"}, {"dev_accuracy", accuracy_json(evaluate(t.config, t.params, data.dev))},
                       {"test_accuracy", accuracy_json(evaluate(t.config, t.params, data.test))}, {"sample_rate", 1.0}});
  }
  if (!io.checkpoint_path.empty()) {
    save_checkpoint(io.checkpoint_path, model_meta("teacher", cfg, t.config, t.vocab, t.domain_names), t.params.named());
  }
  return t;
}

// ---------------------------------------------------------------------------
// Student

struct StudentModel {
  EncoderConfig config;
  EncoderParams encoder;
  Var proj_embd;               // student hidden × teacher hidden
  std::vector<Var> proj_hidn;  // one per student layer
  GraphParams graph;
  CompareAggregateParams compare;

  std::vector<NamedParam> named() const {
    auto out = encoder.named();
    out.push_back({"proj.embd", proj_embd});
    for (std::size_t m = 0; m < proj_hidn.size(); ++m) out.push_back({"proj.hidn" + std::to_string(m + 1), proj_hidn[m]});
    for (auto& p : graph.named()) out.push_back(p);
    for (auto& p : compare.named()) out.push_back(p);
    return out;
  }
};

inline StudentModel init_student(const RunConfig& cfg, const EncoderConfig& student, const EncoderConfig& teacher) {
  StudentModel s;
  s.config = student;
  s.encoder = init_params(student, component_seed(cfg.seed, "student.init"));
  std::mt19937_64 rng(component_seed(cfg.seed, "student.projection"));
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(student.hidden)));
  auto proj = [&] {
    Tensor t({student.hidden, teacher.hidden});
    for (double& v : t.data()) v = normal(rng);
    return Var::parameter(std::move(t));
  };
  s.proj_embd = proj();
  for (std::size_t m = 0; m < student.num_layers; ++m) s.proj_hidn.push_back(proj());
  const std::size_t levels = student.num_layers + 1, domains = student.num_domains();
  s.graph = init_graph_params(levels, student.hidden, cfg.head_width(), cfg.gat_heads, component_seed(cfg.seed, "student.graph"));
  s.compare = init_compare_aggregate_params(levels, domains, student.hidden, component_seed(cfg.seed, "student.compare"));
  return s;
}

/// Ablation flags as aggregation switches. Later stages override earlier ones:
/// no hierarchy leaves nothing to compare, no compare-aggregate leaves no reference.
inline AggregationSwitches switches_for(const Ablations& a) {
  AggregationSwitches sw;
  sw.self_attention = !a.no_self_attention;
  sw.compare_aggregate = !a.no_comp_agg;
  sw.hierarchical = !a.no_hierarchical;
  return sw;
}

struct StepTrace {
  std::vector<double> embd, pred;           // [D]
  std::vector<std::vector<double>> attn;    // [M][D]
  std::vector<std::vector<double>> hidn;    // [M][D]
  double total = 0.0;
  Tensor ratios;                            // (M+1)×D; rank 0 when not computed
  std::vector<Tensor> reference_attention;      // per level
  std::vector<std::vector<Tensor>> similarity;
  double attention_row_deviation = 0.0;     // max |row sum − 1| over student and teacher maps
};

struct StepGraph {
  Var total;
  LossBreakdown components;
  Var ratios;
  StepTrace trace;
};

namespace detail {

inline double max_row_deviation(const Tensor& maps) {
  const std::size_t len = maps.shape().back();
  double worst = 0.0;
  for (std::size_t r = 0; r < maps.size() / len; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < len; ++j) s += maps[r * len + j];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

}  // namespace detail

/// Distillation objective for one set of per-domain batches. Must run under a
/// Tape when student parameters require gradients; the teacher runs without one.
inline StepGraph distill_objective(const RunConfig& cfg, const TeacherModel& teacher, const StudentModel& student,
                                   const std::vector<DomainBatch>& batches) {
  const std::size_t D = batches.size(), M = student.config.num_layers;
  const auto map = layer_map(M, teacher.config.num_layers);
  StepGraph g;
  g.components.attn.assign(M, {});
  g.components.hidn.assign(M, {});
  std::vector<EncoderOutput> outs;
  double row_dev = 0.0;
  for (std::size_t d = 0; d < D; ++d) {
    EncoderOutput t_out;
    {
      NoGradGuard no_grad;
      t_out = forward(teacher.config, teacher.params, batches[d]);
    }
    EncoderOutput s_out = forward(student.config, student.encoder, batches[d]);
    g.components.embd.push_back(embed_loss(s_out.embeddings, student.proj_embd, t_out.embeddings));
    for (std::size_t m = 0; m < M; ++m) {
      const std::size_t n = map[m] - 1;
      g.components.attn[m].push_back(attn_loss(s_out.attentions[m], t_out.attentions[n]));
      g.components.hidn[m].push_back(hidn_loss(s_out.hidden_states[m], student.proj_hidn[m], t_out.hidden_states[n]));
    }
    g.components.pred.push_back(pred_loss(s_out.logits, t_out.logits, cfg.temperature));
    for (const auto& a : s_out.attentions) row_dev = std::max(row_dev, detail::max_row_deviation(a.value()));
    for (const auto& a : t_out.attentions) row_dev = std::max(row_dev, detail::max_row_deviation(a.value()));
    outs.push_back(std::move(s_out));
  }

  StepTrace& tr = g.trace;
  tr.attention_row_deviation = row_dev;
  if (cfg.mode == DistillMode::base_kd) {
    g.total = total_base(g.components, cfg.pred_weight);
  } else if (cfg.ablations.no_domain_rel) {
    g.ratios = uniform_ratios(M + 1, D);
    g.total = total_hrkd(g.components, g.ratios, cfg.pred_weight);
  } else {
    const PrototypeSet protos = compute_prototypes(outs, batches, cfg.detach_prototypes);
    const AggregatedSet agg = build_aggregated_set(protos, student.compare, switches_for(cfg.ablations));
    g.ratios = compute_ratios(agg.levels, student.graph);
    g.total = total_hrkd(g.components, g.ratios, cfg.pred_weight);
    tr.reference_attention = agg.reference_attention;
    tr.similarity = agg.similarity;
  }
  if (cfg.mode == DistillMode::hrkd) tr.ratios = g.ratios.value();

  for (std::size_t d = 0; d < D; ++d) {
    tr.embd.push_back(g.components.embd[d].item());
    tr.pred.push_back(g.components.pred[d].item());
  }
  for (std::size_t m = 0; m < M; ++m) {
    tr.attn.emplace_back();
    tr.hidn.emplace_back();
    for (std::size_t d = 0; d < D; ++d) {
      tr.attn[m].push_back(g.components.attn[m][d].item());
      tr.hidn[m].push_back(g.components.hidn[m][d].item());
    }
  }
  tr.total = g.total.item();
  return g;
}

inline nlohmann::json step_json(std::size_t step, std::size_t epoch, double lr, const StepTrace& tr) {
  nlohmann::json domains = nlohmann::json::array();
  for (std::size_t d = 0; d < tr.embd.size(); ++d) {
    nlohmann::json attn = nlohmann::json::array(), hidn = nlohmann::json::array();
    for (std::size_t m = 0; m < tr.attn.size(); ++m) {
      attn.push_back(tr.attn[m][d]);
      hidn.push_back(tr.hidn[m][d]);
    }
    domains.push_back({{"embd", tr.embd[d]}, {"attn", attn}, {"hidn", hidn}, {"pred", tr.pred[d]}});
  }
  nlohmann::json j{{"type", "step"},   {"step", step},         {"epoch", epoch},
                   {"lr", lr},         {"total", tr.total},    {"losses", domains},
                   {"attention_row_deviation", tr.attention_row_deviation}};
  j["ratios"] = tr.ratios.rank() == 2 ? tensor_rows(tr.ratios) : nlohmann::json::array();
  nlohmann::json ref = nlohmann::json::array(), sim = nlohmann::json::array();
  for (const auto& a : tr.reference_attention) ref.push_back(a.rank() == 2 ? tensor_rows(a) : nlohmann::json(nullptr));
  for (const auto& level : tr.similarity) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& v : level) per.push_back(tensor_rows(v));
    sim.push_back(std::move(per));
  }
  j["reference_attention"] = std::move(ref);
  j["similarity"] = std::move(sim);
  return j;
}

struct DistillResult {
  StudentModel student;
  Accuracy dev;
  Accuracy test;
  std::size_t steps = 0;
  std::vector<StepTrace> first_steps;  // traces of up to the first `keep_traces` steps
};

struct DistillOptions {
  TrainIo io;
  std::size_t keep_traces = 0;
  std::size_t max_steps = 0;  // 0: run all epochs
};

/// Joint optimization of student, projections, graph and compare-aggregate
/// parameters against a frozen teacher.
inline DistillResult distill_student(RunConfig cfg, const Corpus& full_corpus, const TeacherModel& teacher,
                                     const DistillOptions& opts = {}) {
  if (full_corpus.num_domains() != teacher.config.num_domains() ||
      full_corpus.classes_per_domain() != teacher.config.classes_per_domain) {
    throw ConfigError("distill: corpus domains/classes do not match the teacher checkpoint");
  }
  cfg.teacher = teacher.config;
  cfg.validate();
  if (cfg.max_len > teacher.config.max_len) {
    throw ConfigError("distill: max_len " + std::to_string(cfg.max_len) + " exceeds the teacher's " +
                      std::to_string(teacher.config.max_len));
  }
  cfg.bind(teacher.vocab.size(), full_corpus.classes_per_domain());
  const Corpus corpus = subsample(full_corpus, cfg.sample_rate);
  const PreparedData data = prepare_data(corpus, teacher.vocab, cfg.max_len);

  DistillResult result;
  result.student = init_student(cfg, cfg.student, teacher.config);
  StudentModel& st = result.student;

  std::vector<BatchStream> streams;
  for (std::size_t d = 0; d < data.train.size(); ++d) {
    streams.emplace_back(data.train[d].size(), cfg.batch_size, component_seed(cfg.seed, "student.batches" + std::to_string(d)));
  }
  const std::size_t per_epoch = steps_per_epoch(data.train, cfg.batch_size);
  AdamConfig ac;
  ac.lr = cfg.student_lr;
  ac.warmup_fraction = cfg.warmup_fraction;
  ac.total_steps = per_epoch * cfg.student_epochs;
  Adam opt(st.named(), ac);

  const auto meta = [&] { return model_meta("student", cfg, st.config, teacher.vocab, data.domain_names); };
  if (opts.io.metrics) {
    opts.io.metrics->write({{"type", "run"}, {"role", "student"}, {"config", to_json(cfg)}, {"domains", data.domain_names},
                            {"steps_per_epoch", per_epoch}, {"total_steps", ac.total_steps},
                            {"train_sizes", [&] {
                               std::vector<std::size_t> n;
                               for (const auto& s : data.train) n.push_back(s.size());
                               return n;
                             }()}});
  }

  std::size_t step = 0;
  bool stop = false;
  for (std::size_t epoch = 1; epoch <= cfg.student_epochs && !stop; ++epoch) {
    for (std::size_t s = 0; s < per_epoch; ++s) {
      ++step;
      std::vector<DomainBatch> batches;
      for (std::size_t d = 0; d < data.train.size(); ++d) batches.push_back(data.train[d].batch(streams[d].next()));
      const double lr = opt.current_lr();
      StepTrace trace;
      {
        Tape tape;
        StepGraph g = distill_objective(cfg, teacher, st, batches);
        if (!std::isfinite(g.trace.total)) throw DomainError("distill: loss diverged at step " + std::to_string(step));
        tape.backward(g.total);
        trace = std::move(g.trace);
      }
      opt.step();
      opt.zero_grad();
      if (opts.io.metrics && (step == 1 || step % cfg.log_every == 0)) opts.io.metrics->write(step_json(step, epoch, lr, trace));
      if (result.first_steps.size() < opts.keep_traces) result.first_steps.push_back(std::move(trace));
      if (opts.max_steps && step >= opts.max_steps) {
        stop = true;
        break;
      }
    }
    const Accuracy dev = evaluate(st.config, st.encoder, data.dev);
    if (opts.io.metrics) opts.io.metrics->write({{"type", "epoch"}, {"epoch", epoch}, {"dev_accuracy", accuracy_json(dev)}});
    if (!opts.io.epoch_checkpoints.empty()) {
      save_checkpoint((std::filesystem::path(opts.io.epoch_checkpoints) / ("student_epoch" + std::to_string(epoch) + ".ckpt")).string(),
                      meta(), st.named());
    }
  }
  result.steps = step;
  result.dev = evaluate(st.config, st.encoder, data.dev);
  result.test = evaluate(st.config, st.encoder, data.test);
  if (opts.io.metrics) {
    opts.io.metrics->write({{"type", "final"},
                            {"role", "student"},
                            {"mode", mode_name(cfg.mode)},
                            {"sample_rate", cfg.sample_rate},
                            {"steps", step},
                            {"dev_accuracy", accuracy_json(result.dev)},
                            {"test_accuracy", accuracy_json(result.test)}});
  }
  if (!opts.io.checkpoint_path.empty()) save_checkpoint(opts.io.checkpoint_path, meta(), st.named());
  return result;
}

/// Encoder, vocabulary and domain names from a teacher or student checkpoint.
struct LoadedEncoder {
  EncoderConfig config;
  EncoderParams params;
  Vocabulary vocab;
  std::vector<std::string> domain_names;
  std::string role;
};

inline LoadedEncoder load_encoder(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  try {
    LoadedEncoder e;
    e.role = ck.meta.at("role").get<std::string>();
    e.config = encoder_from_json(ck.meta.at("encoder"), {}, "encoder");
    e.config.validate();
    e.vocab = Vocabulary(ck.meta.at("vocab").get<std::vector<std::string>>());
    e.domain_names = ck.meta.at("domains").get<std::vector<std::string>>();
    e.params = init_params(e.config, 0);
    restore_params(ck, e.params.named());
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(path + ": bad metadata (" + ex.what() + ")");
  }
}

inline TeacherModel load_teacher(const std::string& path) {
  LoadedEncoder e = load_encoder(path);
  if (e.role != "teacher") throw FormatError(path + ": expected a teacher checkpoint, found role '" + e.role + "'");
  return {std::move(e.config), std::move(e.params), std::move(e.vocab), std::move(e.domain_names)};
}

}  // namespace hrkd
