// Command-line driver: data generation, teacher training, distillation,
// evaluation, reporting and gradient checking.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "hrkd/grad_suite.hpp"
#include "hrkd/hrkd.hpp"

namespace fs = std::filesystem;
using namespace hrkd;

namespace {

/// Flags that mirror RunConfig fields; only flags actually given override the config.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> sample_rate, pred_weight, temperature, teacher_lr, student_lr, warmup, sharing;
  std::optional<std::size_t> teacher_epochs, student_epochs, batch_size, max_len, gat_heads, gat_head_width, log_every;
  std::optional<std::size_t> domains, classes, train_size;
  std::optional<std::uint64_t> data_seed;
  std::optional<std::string> mode;
  bool no_self_attention = false, no_comp_agg = false, no_hierarchical = false, no_domain_rel = false;
  bool detach_prototypes = false;

  void attach(CLI::App* app) {
    app->add_option("--seed", seed, "Run seed");
    app->add_option("--sample-rate", sample_rate, "Fraction of each domain's training data, in (0, 1]");
    app->add_option("--pred-weight", pred_weight, "Weight of the prediction loss");
    app->add_option("--temperature", temperature, "Distillation temperature");
    app->add_option("--teacher-lr", teacher_lr, "Teacher peak learning rate");
    app->add_option("--student-lr", student_lr, "Student peak learning rate");
    app->add_option("--warmup-fraction", warmup, "Fraction of steps spent in linear warmup");
    app->add_option("--teacher-epochs", teacher_epochs);
    app->add_option("--student-epochs", student_epochs);
    app->add_option("--batch-size", batch_size);
    app->add_option("--max-len", max_len, "Sequence length including [CLS]");
    app->add_option("--gat-heads", gat_heads, "First-layer graph attention heads");
    app->add_option("--gat-head-width", gat_head_width, "Per-head graph width (0: half the student width)");
    app->add_option("--log-every", log_every, "Write a step record every N steps");
    app->add_option("--mode", mode, "base_kd or hrkd")->check(CLI::IsMember({"base_kd", "hrkd"}));
    app->add_flag("--no-self-attention", no_self_attention);
    app->add_flag("--no-comp-agg", no_comp_agg);
    app->add_flag("--no-hierarchical", no_hierarchical);
    app->add_flag("--no-domain-rel", no_domain_rel);
    app->add_flag("--detach-prototypes", detach_prototypes);
    app->add_option("--domains", domains, "Synthetic corpus: number of domains");
    app->add_option("--classes", classes, "Synthetic corpus: classes per domain");
    app->add_option("--train-size", train_size, "Synthetic corpus: training samples per domain");
    app->add_option("--sharing", sharing, "Synthetic corpus: shared fraction of pattern vocabulary");
    app->add_option("--data-seed", data_seed, "Synthetic corpus seed");
  }

  void apply(RunConfig& c) const {
    if (seed) c.seed = *seed;
    if (sample_rate) c.sample_rate = *sample_rate;
    if (pred_weight) c.pred_weight = *pred_weight;
    if (temperature) c.temperature = *temperature;
    if (teacher_lr) c.teacher_lr = *teacher_lr;
    if (student_lr) c.student_lr = *student_lr;
    if (warmup) c.warmup_fraction = *warmup;
    if (teacher_epochs) c.teacher_epochs = *teacher_epochs;
    if (student_epochs) c.student_epochs = *student_epochs;
    if (batch_size) c.batch_size = *batch_size;
    if (max_len) c.max_len = *max_len;
    if (gat_heads) c.gat_heads = *gat_heads;
    if (gat_head_width) c.gat_head_width = *gat_head_width;
    if (log_every) c.log_every = *log_every;
    if (mode) c.mode = parse_mode(*mode);
    c.ablations.no_self_attention |= no_self_attention;
    c.ablations.no_comp_agg |= no_comp_agg;
    c.ablations.no_hierarchical |= no_hierarchical;
    c.ablations.no_domain_rel |= no_domain_rel;
    c.detach_prototypes |= detach_prototypes;
    if (domains) c.data.domains = *domains;
    if (classes) c.data.classes = *classes;
    if (train_size) c.data.train = *train_size;
    if (sharing) c.data.sharing = *sharing;
    if (data_seed) c.data.seed = *data_seed;
  }
};

struct Common {
  std::string config_path;
  std::string out_dir;
  std::string data_dir;
  Overrides overrides;

  void attach(CLI::App* app, bool with_data = true) {
    app->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app->add_option("--out-dir", out_dir, "Output directory (default: $HRKD_OUT_DIR or ./hrkd_out)");
    if (with_data) {
      app->add_option("--data", data_dir, "Directory with train.tsv, dev.tsv, test.tsv (default: synthetic corpus)")
          ->check(CLI::ExistingDirectory);
    }
    overrides.attach(app);
  }

  RunConfig config() const {
    RunConfig c = config_path.empty() ? RunConfig{} : load_config(config_path);
    overrides.apply(c);
    c.validate();
    return c;
  }

  fs::path output() const {
    fs::path p = out_dir;
    if (p.empty()) {
      const char* env = std::getenv("HRKD_OUT_DIR");
      p = env && *env ? env : "hrkd_out";
    }
    fs::create_directories(p);
    return p;
  }

  Corpus corpus(const RunConfig& c) const {
    if (data_dir.empty()) return generate_synthetic_corpus(c.data);
    const fs::path d = data_dir;
    return ingest_tsv((d / "train.tsv").string(), (d / "dev.tsv").string(), (d / "test.tsv").string());
  }
};

std::string rate_tag(const RunConfig& c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_r%.2f", mode_name(c.mode).c_str(), c.sample_rate);
  return buf;
}

void print_accuracy(const std::string& label, const Accuracy& a, const std::vector<std::string>& names) {
  std::printf("%s:", label.c_str());
  for (std::size_t d = 0; d < a.per_domain.size(); ++d) {
    std::printf(" %s=%.4f", d < names.size() ? names[d].c_str() : "?", a.per_domain[d]);
  }
  std::printf("  mean=%.4f\n", a.macro);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical relational knowledge distillation at desk scale"};
  app.require_subcommand(1);

  Common gen_opts, teacher_opts, distill_opts, eval_opts, grad_opts;

  auto* gen = app.add_subcommand("gen-data", "Write the synthetic corpus as train/dev/test TSV files");
  gen_opts.attach(gen, false);

  auto* teach = app.add_subcommand("train-teacher", "Train the multi-domain teacher");
  teacher_opts.attach(teach);
  std::string teacher_out;
  teach->add_option("--checkpoint", teacher_out, "Teacher checkpoint path (default: <out>/teacher.ckpt)");

  auto* distill = app.add_subcommand("distill", "Distill a student from a teacher checkpoint");
  distill_opts.attach(distill);
  std::string teacher_in, student_out, metrics_out;
  bool no_epoch_ckpt = false;
  distill->add_option("--teacher", teacher_in, "Teacher checkpoint (default: <out>/teacher.ckpt)");
  distill->add_option("--checkpoint", student_out, "Student checkpoint path (default: <out>/student_<mode>_r<rate>.ckpt)");
  distill->add_option("--metrics", metrics_out, "Metrics path (default: <out>/metrics_<mode>_r<rate>.jsonl)");
  distill->add_flag("--no-epoch-checkpoints", no_epoch_ckpt, "Skip per-epoch checkpoints");

  auto* eval = app.add_subcommand("eval", "Accuracy of a checkpoint on one split");
  eval_opts.attach(eval);
  std::string eval_ckpt, split_name_arg = "test", dump_path;
  eval->add_option("--checkpoint", eval_ckpt, "Teacher or student checkpoint")->required();
  eval->add_option("--split", split_name_arg, "train, dev or test")->check(CLI::IsMember({"train", "dev", "test"}));
  eval->add_option("--dump-predictions", dump_path, "Write domain<TAB>index<TAB>label<TAB>prediction rows");

  auto* report = app.add_subcommand("report", "Summarize metrics files");
  std::vector<std::string> metric_files;
  std::string report_json;
  report->add_option("metrics", metric_files, "Metrics JSONL files")->required()->check(CLI::ExistingFile);
  report->add_option("--json", report_json, "Also write the machine-readable summary here");

  auto* grad = app.add_subcommand("grad-check", "Finite-difference check of every loss on a toy problem");
  double grad_h = 1e-5, grad_tol = 1e-4;
  bool grad_quick = false;
  grad->add_option("--step", grad_h, "Central-difference step");
  grad->add_option("--tol", grad_tol, "Maximum relative deviation");
  grad->add_flag("--quick", grad_quick, "Only the full objective");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) {
      const RunConfig c = gen_opts.config();
      const fs::path out = gen_opts.output();
      const Corpus corpus = generate_synthetic_corpus(c.data);
      for (Split s : {Split::train, Split::dev, Split::test}) {
        write_tsv((out / (std::string(split_name(s)) + ".tsv")).string(), corpus, s);
      }
      std::printf("wrote %zu domains to %s\n", corpus.num_domains(), out.string().c_str());
    } else if (*teach) {
      const RunConfig c = teacher_opts.config();
      const fs::path out = teacher_opts.output();
      const Corpus corpus = teacher_opts.corpus(c);
      MetricsSink sink((out / "teacher_metrics.jsonl").string());
      TrainIo io{&sink, teacher_out.empty() ? (out / "teacher.ckpt").string() : teacher_out, out.string()};
      const auto t0 = std::chrono::steady_clock::now();
      const TeacherModel t = train_teacher(c, corpus, io);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      RunConfig bound = c;
      const PreparedData data = prepare_data(corpus, t.vocab, c.max_len);
      print_accuracy("teacher dev", evaluate(t.config, t.params, data.dev), t.domain_names);
      std::printf("checkpoint %s (%.1fs)\n", io.checkpoint_path.c_str(), secs);
    } else if (*distill) {
      const RunConfig c = distill_opts.config();
      const fs::path out = distill_opts.output();
      const TeacherModel teacher = load_teacher(teacher_in.empty() ? (out / "teacher.ckpt").string() : teacher_in);
      const Corpus corpus = distill_opts.corpus(c);
      const std::string tag = rate_tag(c);
      MetricsSink sink(metrics_out.empty() ? (out / ("metrics_" + tag + ".jsonl")).string() : metrics_out);
      DistillOptions opts;
      opts.io = {&sink, student_out.empty() ? (out / ("student_" + tag + ".ckpt")).string() : student_out,
                 no_epoch_ckpt ? "" : out.string()};
      const auto t0 = std::chrono::steady_clock::now();
      const DistillResult r = distill_student(c, corpus, teacher, opts);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      print_accuracy("student test", r.test, teacher.domain_names);
      std::printf("%zu steps, checkpoint %s (%.1fs)\n", r.steps, opts.io.checkpoint_path.c_str(), secs);
    } else if (*eval) {
      const RunConfig c = eval_opts.config();
      const LoadedEncoder enc = load_encoder(eval_ckpt);
      const Corpus corpus = eval_opts.corpus(c);
      if (corpus.classes_per_domain() != enc.config.classes_per_domain) {
        throw ConfigError("eval: corpus domains/classes do not match the checkpoint");
      }
      const Split split = parse_split(split_name_arg);
      const auto encoded = encode_split(enc.vocab, corpus, split, enc.config.max_len);
      const Accuracy acc = evaluate(enc.config, enc.params, encoded);
      print_accuracy(enc.role + " " + split_name_arg, acc, enc.domain_names);
      if (!dump_path.empty()) {
        std::ofstream f(dump_path, std::ios::binary);
        if (!f) throw FormatError("cannot open " + dump_path);
        for (std::size_t d = 0; d < encoded.size(); ++d)
          for (std::size_t i = 0; i < encoded[d].size(); ++i) {
            f << corpus.domains[d].name << '\t' << i << '\t' << encoded[d].labels[i] << '\t' << acc.predictions[d][i] << '\n';
          }
      }
    } else if (*report) {
      const Report rep = build_report(metric_files);
      std::fputs(rep.text.c_str(), stdout);
      if (!report_json.empty()) {
        std::ofstream f(report_json, std::ios::binary);
        if (!f) throw FormatError("cannot open " + report_json);
        f << rep.json.dump(2) << '\n';
      }
    } else if (*grad) {
      GradProblem problem = make_grad_problem();
      const auto results = run_grad_suite(problem, grad_h, grad_tol, grad_quick);
      bool ok = true;
      for (const auto& r : results) {
        std::printf("%-32s max rel. deviation %.3e  %s\n", r.name.c_str(), r.report.max_deviation,
                    r.report.passed ? "ok" : "FAIL");
        ok = ok && r.report.passed;
      }
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
