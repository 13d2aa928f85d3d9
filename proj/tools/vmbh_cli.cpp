#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vmbh/vmbh.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

// Thrown on any non-OK status; carries the exit code the status maps to.
struct CallFailed : std::runtime_error {
  int exit_code;
  CallFailed(const std::string& what, int code) : std::runtime_error(what), exit_code(code) {}
};

void check(vmbh_status s) {
  if (s == VMBH_OK) return;
  const int code = (s == VMBH_ERR_CONFIG || s == VMBH_ERR_INVALID_ARGUMENT) ? kExitUsage : kExitFailure;
  throw CallFailed(std::string(vmbh_status_name(s)) + ": " + vmbh_last_error(), code);
}

template <class T, void (*Destroy)(T*)>
struct Handle {
  T* ptr = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Destroy(ptr); }
  T** out() { return &ptr; }
  T* get() const { return ptr; }
};

using Config = Handle<vmbh_config, vmbh_config_destroy>;
using ModelH = Handle<vmbh_model, vmbh_model_destroy>;
using Dataset = Handle<vmbh_dataset, vmbh_dataset_destroy>;
using Rig = Handle<vmbh_rig, vmbh_rig_destroy>;

struct Globals {
  std::string config_path;
  std::string profile = "toy";
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out = ".";
};

void load_config(const Globals& g, Config& cfg) {
  if (!g.config_path.empty()) {
    check(vmbh_config_load(g.config_path.c_str(), cfg.out()));
  } else {
    check(vmbh_config_create(g.profile.c_str(), cfg.out()));
  }
  if (g.seed_set) check(vmbh_config_set_seed(cfg.get(), g.seed));
}

std::string out_path(const Globals& g, const std::string& name) {
  fs::create_directories(g.out);
  return (fs::path(g.out) / name).string();
}

vmbh_config_summary summary(const Config& cfg) {
  vmbh_config_summary s{};
  check(vmbh_config_summarize(cfg.get(), &s));
  return s;
}

void print_metrics(const char* label, const vmbh_metrics& m) {
  std::printf("%s: loss=%.6g mpjpe_all=%.4f mm mpvpe_all=%.4f mm (single=%zu two=%zu)\n", label, m.loss,
              m.mpjpe_all, m.mpvpe_all, m.count_single, m.count_two);
}

int cmd_gradcheck(const Globals& g, const std::string& fault_op) {
  Config cfg;
  load_config(g, cfg);
  int all = 0;
  auto report = [](const char* op, double err, double tol, int passed, void*) {
    std::printf("%-24s max_rel_err=%.3e tol=%.0e %s\n", op, err, tol, passed ? "ok" : "FAIL");
    std::fflush(stdout);
  };
  check(vmbh_gradcheck(cfg.get(), summary(cfg).seed, fault_op.c_str(), report, nullptr, &all));
  std::printf("%s\n", all ? "gradcheck passed" : "gradcheck FAILED");
  return all ? kExitOk : kExitFailure;
}

int cmd_train_toy(const Globals& g, std::optional<std::size_t> epochs, std::optional<double> lr,
                  std::optional<std::size_t> samples) {
  Config cfg;
  load_config(g, cfg);
  if (epochs) check(vmbh_config_set_epochs(cfg.get(), *epochs));
  if (lr) check(vmbh_config_set_learning_rate(cfg.get(), *lr));
  if (samples) check(vmbh_config_set_samples(cfg.get(), *samples));
  const auto s = summary(cfg);

  ModelH model;
  check(vmbh_model_create(cfg.get(), model.out()));
  Dataset data;
  check(vmbh_dataset_generate(model.get(), s.samples, s.seed, data.out()));

  vmbh_train_report report{};
  const std::string loss_csv = out_path(g, "loss.csv");
  check(vmbh_train(model.get(), data.get(), s.epochs, loss_csv.c_str(), nullptr, nullptr, &report));
  check(vmbh_model_save(model.get(), out_path(g, "checkpoint.vmbh").c_str()));
  check(vmbh_write_metrics_csv(&report.final, "train", out_path(g, "metrics.csv").c_str()));

  std::printf("steps: %zu\n", report.steps);
  print_metrics("initial", report.initial);
  print_metrics("final", report.final);
  std::printf("wrote %s/{loss.csv,checkpoint.vmbh,metrics.csv}\n", g.out.c_str());
  return kExitOk;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& dataset,
             std::optional<std::size_t> samples) {
  Config cfg;
  load_config(g, cfg);
  if (samples) check(vmbh_config_set_samples(cfg.get(), *samples));
  const auto s = summary(cfg);

  ModelH model;
  check(vmbh_model_create(cfg.get(), model.out()));
  check(vmbh_model_load(model.get(), checkpoint.c_str()));
  Dataset data;
  if (dataset.empty()) {
    check(vmbh_dataset_generate(model.get(), s.samples, s.seed, data.out()));
  } else {
    check(vmbh_dataset_load(dataset.c_str(), data.out()));
  }
  vmbh_metrics m{};
  check(vmbh_evaluate(model.get(), data.get(), &m));
  check(vmbh_write_metrics_csv(&m, "eval", out_path(g, "metrics.csv").c_str()));
  print_metrics("eval", m);
  return kExitOk;
}

int cmd_bench_scan(const Globals& g, const std::vector<std::size_t>& lengths, std::size_t channels,
                   std::size_t state) {
  const std::string path = out_path(g, "bench_scan.csv");
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw CallFailed("cannot open '" + path + "' for writing", kExitFailure);
  const char* header = "seq,scan_flops,dense_flops,scan_seconds,dense_seconds\n";
  std::fputs(header, f);
  std::fputs(header, stdout);
  auto row = [](const vmbh_bench_row* r, void* user) {
    for (std::FILE* out : {static_cast<std::FILE*>(user), stdout}) {
      std::fprintf(out, "%zu,%llu,%llu,%.9g,%.9g\n", r->seq, static_cast<unsigned long long>(r->scan_flops),
                   static_cast<unsigned long long>(r->dense_flops), r->scan_seconds, r->dense_seconds);
    }
  };
  const vmbh_status st = vmbh_bench_scan(lengths.data(), lengths.size(), channels, state, g.seed, row, f);
  std::fclose(f);
  check(st);
  return kExitOk;
}

int cmd_count(const Globals& g) {
  Config cfg;
  load_config(g, cfg);
  std::uint64_t params = 0, flops = 0;
  check(vmbh_count(cfg.get(), &params, &flops));
  std::printf("params,flops\n%llu,%llu\n", static_cast<unsigned long long>(params),
              static_cast<unsigned long long>(flops));
  std::printf("# %.2f M parameters, %.2f GFLOPs per forward pass\n", params / 1e6, flops / 1e9);
  return kExitOk;
}

int cmd_gen_data(const Globals& g, std::optional<std::size_t> samples) {
  Config cfg;
  load_config(g, cfg);
  if (samples) check(vmbh_config_set_samples(cfg.get(), *samples));
  const auto s = summary(cfg);
  ModelH model;
  check(vmbh_model_create(cfg.get(), model.out()));
  Dataset data;
  check(vmbh_dataset_generate(model.get(), s.samples, s.seed, data.out()));
  const std::string path = out_path(g, "dataset.vmbd");
  check(vmbh_dataset_save(data.get(), path.c_str()));
  std::printf("wrote %zu samples to %s\n", s.samples, path.c_str());
  return kExitOk;
}

int cmd_rig_export(const Globals& g) {
  Config cfg;
  load_config(g, cfg);
  Rig rig;
  check(vmbh_rig_from_config(cfg.get(), rig.out()));
  const std::string path = out_path(g, "rig.json");
  check(vmbh_rig_save_json(rig.get(), path.c_str()));
  // Reload so an exported rig that fails its own invariants never goes unnoticed.
  Rig reloaded;
  check(vmbh_rig_load_json(path.c_str(), reloaded.out()));
  std::size_t vertices = 0;
  check(vmbh_rig_vertex_count(reloaded.get(), &vertices));
  std::printf("wrote rig with %zu vertices to %s\n", vertices, path.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"VM-BHINet two-hand reconstruction toolkit"};
  app.require_subcommand(1, 1);

  Globals g;
  app.add_option("--config", g.config_path, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--profile", g.profile, "built-in profile when no --config is given")
      ->check(CLI::IsMember({"toy", "full"}));
  auto* seed_opt = app.add_option("--seed", g.seed, "random seed (overrides the config)");
  app.add_option("--out", g.out, "output directory");

  std::optional<std::size_t> epochs, samples;
  std::optional<double> lr;
  std::string fault_op, checkpoint, dataset;
  std::vector<std::size_t> lengths{256, 512, 1024, 2048};
  std::size_t channels = 4, state = 4;

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gc->add_option("--fault-op", fault_op, "corrupt the backward rule of this op (negative control)");

  auto* tt = app.add_subcommand("train-toy", "generate data, train, write loss/checkpoint/metrics");
  tt->add_option("--epochs", epochs, "training epochs")->check(CLI::NonNegativeNumber);
  tt->add_option("--lr", lr, "learning rate")->check(CLI::NonNegativeNumber);
  tt->add_option("--samples", samples, "synthetic samples")->check(CLI::PositiveNumber);

  auto* ev = app.add_subcommand("eval", "MPJPE/MPVPE of a checkpoint");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--dataset", dataset, "dataset file (default: regenerate from the seed)");
  ev->add_option("--samples", samples, "synthetic samples when regenerating")->check(CLI::PositiveNumber);

  auto* bs = app.add_subcommand("bench-scan", "selective scan vs dense operator cost");
  bs->add_option("--seq-lengths", lengths, "comma-separated sequence lengths")
      ->delimiter(',')
      ->check(CLI::PositiveNumber);
  bs->add_option("--channels", channels, "channels")->check(CLI::PositiveNumber);
  bs->add_option("--state", state, "state size")->check(CLI::PositiveNumber);

  auto* ct = app.add_subcommand("count", "analytic parameter and FLOP count");
  auto* gd = app.add_subcommand("gen-data", "write a synthetic dataset");
  gd->add_option("--samples", samples, "synthetic samples")->check(CLI::PositiveNumber);
  auto* re = app.add_subcommand("rig-export", "write the configured hand rig as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }
  g.seed_set = seed_opt->count() > 0;

  try {
    if (gc->parsed()) return cmd_gradcheck(g, fault_op);
    if (tt->parsed()) return cmd_train_toy(g, epochs, lr, samples);
    if (ev->parsed()) return cmd_eval(g, checkpoint, dataset, samples);
    if (bs->parsed()) return cmd_bench_scan(g, lengths, channels, state);
    if (ct->parsed()) return cmd_count(g);
    if (gd->parsed()) return cmd_gen_data(g, samples);
    if (re->parsed()) return cmd_rig_export(g);
  } catch (const CallFailed& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}
