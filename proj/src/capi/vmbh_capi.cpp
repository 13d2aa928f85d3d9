#include "vmbh/vmbh.h"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <memory>
#include <new>
#include <string>

#include "vmbh/config.hpp"
#include "vmbh/error.hpp"
#include "vmbh/handmodel.hpp"
#include "vmbh/nn.hpp"
#include "vmbh/pipeline.hpp"
#include "vmbh/tensor.hpp"
#include "vmbh/train.hpp"
#include "vmbh/verify.hpp"

struct vmbh_config {
  vmbh::PipelineConfig value;
};

struct vmbh_model {
  std::unique_ptr<vmbh::pipeline::Model> value;
};

struct vmbh_dataset {
  std::vector<vmbh::train::TrainingSample> value;
};

struct vmbh_rig {
  vmbh::hand::HandRig value;
};

namespace {

thread_local std::string g_last_error;

class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

void require(bool ok, const char* what) {
  if (!ok) throw ArgumentError(what);
}

template <class F>
vmbh_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return VMBH_OK;
  } catch (const vmbh::DimensionError& e) {
    g_last_error = e.what();
    return VMBH_ERR_DIMENSION;
  } catch (const vmbh::ContractError& e) {
    g_last_error = e.what();
    return VMBH_ERR_CONTRACT;
  } catch (const vmbh::ConfigError& e) {
    g_last_error = e.what();
    return VMBH_ERR_CONFIG;
  } catch (const vmbh::IoError& e) {
    g_last_error = e.what();
    return VMBH_ERR_IO;
  } catch (const vmbh::FormatError& e) {
    g_last_error = e.what();
    return VMBH_ERR_FORMAT;
  } catch (const vmbh::NumericError& e) {
    g_last_error = e.what();
    return VMBH_ERR_NUMERIC;
  } catch (const ArgumentError& e) {
    g_last_error = e.what();
    return VMBH_ERR_INVALID_ARGUMENT;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return VMBH_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return VMBH_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return VMBH_ERR_INTERNAL;
  }
}

void write_text(const char* path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw vmbh::IoError(std::string("cannot open '") + path + "' for writing");
  out << text;
  if (!out) throw vmbh::IoError(std::string("write failed: '") + path + "'");
}

vmbh_metrics to_c(const vmbh::train::SplitMetrics& m) {
  return {m.mpjpe_single, m.mpjpe_two,    m.mpjpe_all,    m.mpvpe_single, m.mpvpe_two,
          m.mpvpe_all,    m.count_single, m.count_two,    m.loss};
}

vmbh::train::SplitMetrics from_c(const vmbh_metrics& m) {
  vmbh::train::SplitMetrics s;
  s.mpjpe_single = m.mpjpe_single;
  s.mpjpe_two = m.mpjpe_two;
  s.mpjpe_all = m.mpjpe_all;
  s.mpvpe_single = m.mpvpe_single;
  s.mpvpe_two = m.mpvpe_two;
  s.mpvpe_all = m.mpvpe_all;
  s.count_single = m.count_single;
  s.count_two = m.count_two;
  s.loss = m.loss;
  return s;
}

void copy_out(const vmbh::Tensor& t, double* dst) {
  if (!dst) return;
  auto d = t.data();
  std::copy(d.begin(), d.end(), dst);
}

void copy_hand(const vmbh::pipeline::HandOutputs& h, vmbh_hand_result* out) {
  if (!out) return;
  copy_out(h.params.theta, out->theta);
  copy_out(h.params.beta, out->beta);
  copy_out(h.mesh.joints, out->joints);
  copy_out(h.mesh.vertices, out->vertices);
}

// Restores the previous fault hook when a gradcheck run ends, even by throwing.
class FaultScope {
 public:
  explicit FaultScope(const char* op) : saved_(vmbh::gradient_fault()) { vmbh::set_gradient_fault(op ? op : ""); }
  ~FaultScope() { vmbh::set_gradient_fault(saved_); }

 private:
  std::string saved_;
};

}  // namespace

extern "C" {

const char* vmbh_last_error(void) { return g_last_error.c_str(); }

const char* vmbh_status_name(vmbh_status status) {
  switch (status) {
    case VMBH_OK: return "ok";
    case VMBH_ERR_DIMENSION: return "dimension error";
    case VMBH_ERR_CONTRACT: return "contract error";
    case VMBH_ERR_CONFIG: return "config error";
    case VMBH_ERR_IO: return "io error";
    case VMBH_ERR_FORMAT: return "format error";
    case VMBH_ERR_NUMERIC: return "numeric error";
    case VMBH_ERR_INVALID_ARGUMENT: return "invalid argument";
    case VMBH_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

vmbh_status vmbh_config_create(const char* profile, vmbh_config** out) {
  return guarded([&] {
    require(profile && out, "vmbh_config_create: null argument");
    const std::string p = profile;
    if (p == "toy") {
      *out = new vmbh_config{vmbh::PipelineConfig::toy()};
    } else if (p == "full") {
      *out = new vmbh_config{vmbh::PipelineConfig::full()};
    } else {
      throw vmbh::ConfigError("unknown profile '" + p + "' (expected toy or full)");
    }
  });
}

vmbh_status vmbh_config_load(const char* path, vmbh_config** out) {
  return guarded([&] {
    require(path && out, "vmbh_config_load: null argument");
    *out = new vmbh_config{vmbh::load_config(path)};
  });
}

vmbh_status vmbh_config_from_json(const char* json, vmbh_config** out) {
  return guarded([&] {
    require(json && out, "vmbh_config_from_json: null argument");
    *out = new vmbh_config{vmbh::config_from_json(json)};
  });
}

void vmbh_config_destroy(vmbh_config* config) { delete config; }

vmbh_status vmbh_config_set_seed(vmbh_config* config, uint64_t seed) {
  return guarded([&] {
    require(config, "vmbh_config_set_seed: null config");
    config->value.seed = seed;
  });
}

vmbh_status vmbh_config_set_epochs(vmbh_config* config, size_t epochs) {
  return guarded([&] {
    require(config, "vmbh_config_set_epochs: null config");
    config->value.epochs = epochs;
  });
}

vmbh_status vmbh_config_set_learning_rate(vmbh_config* config, double lr) {
  return guarded([&] {
    require(config, "vmbh_config_set_learning_rate: null config");
    auto copy = config->value;
    copy.learning_rate = lr;
    copy.validate();
    config->value = copy;
  });
}

vmbh_status vmbh_config_set_samples(vmbh_config* config, size_t samples) {
  return guarded([&] {
    require(config, "vmbh_config_set_samples: null config");
    auto copy = config->value;
    copy.samples = samples;
    copy.validate();
    config->value = copy;
  });
}

vmbh_status vmbh_config_summarize(const vmbh_config* config, vmbh_config_summary* out) {
  return guarded([&] {
    require(config && out, "vmbh_config_summarize: null argument");
    const auto& c = config->value;
    *out = {c.seed, c.epochs, c.samples, c.learning_rate};
  });
}

vmbh_status vmbh_config_to_json(const vmbh_config* config, char* buf, size_t size, size_t* needed) {
  return guarded([&] {
    require(config, "vmbh_config_to_json: null config");
    const std::string text = vmbh::config_to_json(config->value);
    if (needed) *needed = text.size() + 1;
    if (!buf && size == 0 && needed) return;
    require(buf && size > text.size(), "vmbh_config_to_json: buffer too small");
    std::memcpy(buf, text.c_str(), text.size() + 1);
  });
}

vmbh_status vmbh_model_create(const vmbh_config* config, vmbh_model** out) {
  return guarded([&] {
    require(config && out, "vmbh_model_create: null argument");
    *out = new vmbh_model{std::make_unique<vmbh::pipeline::Model>(config->value)};
  });
}

void vmbh_model_destroy(vmbh_model* model) { delete model; }

vmbh_status vmbh_model_param_count(const vmbh_model* model, uint64_t* out) {
  return guarded([&] {
    require(model && out, "vmbh_model_param_count: null argument");
    *out = vmbh::count_scalars(model->value->parameters());
  });
}

vmbh_status vmbh_model_save(const vmbh_model* model, const char* path) {
  return guarded([&] {
    require(model && path, "vmbh_model_save: null argument");
    vmbh::train::save_checkpoint(*model->value, path);
  });
}

vmbh_status vmbh_model_load(vmbh_model* model, const char* path) {
  return guarded([&] {
    require(model && path, "vmbh_model_load: null argument");
    vmbh::train::load_checkpoint(*model->value, path);
  });
}

vmbh_status vmbh_model_forward(const vmbh_model* model, const double* image, size_t image_len,
                               vmbh_hand_result* left, vmbh_hand_result* right, double* t_rel) {
  return guarded([&] {
    require(model && image, "vmbh_model_forward: null argument");
    const auto& cfg = model->value->config();
    const size_t expected = 3 * cfg.image_height * cfg.image_width;
    if (image_len != expected) {
      throw vmbh::DimensionError("vmbh_model_forward: image has " + std::to_string(image_len) +
                                 " values, expected " + std::to_string(expected));
    }
    vmbh::NoGradGuard no_grad;
    auto x = vmbh::Tensor::from({3, cfg.image_height, cfg.image_width}, std::vector<double>(image, image + image_len));
    const auto out = model->value->forward(x);
    copy_hand(out.left, left);
    copy_hand(out.right, right);
    copy_out(out.t_rel, t_rel);
  });
}

vmbh_status vmbh_model_vertex_count(const vmbh_model* model, size_t* out) {
  return guarded([&] {
    require(model && out, "vmbh_model_vertex_count: null argument");
    *out = model->value->rig().vertex_count();
  });
}

vmbh_status vmbh_count(const vmbh_config* config, uint64_t* params, uint64_t* flops) {
  return guarded([&] {
    require(config, "vmbh_count: null config");
    config->value.validate();
    const auto rig = vmbh::pipeline::rig_for(config->value);
    const auto cost =
        vmbh::train::count_params_flops(config->value, rig.vertex_count(), rig.pose_dirs.defined());
    if (params) *params = cost.params;
    if (flops) *flops = cost.flops;
  });
}

vmbh_status vmbh_dataset_generate(const vmbh_model* model, size_t samples, uint64_t seed, vmbh_dataset** out) {
  return guarded([&] {
    require(model && out, "vmbh_dataset_generate: null argument");
    if (samples == 0) throw vmbh::ContractError("vmbh_dataset_generate: samples must be at least 1");
    const auto& m = *model->value;
    auto opts = vmbh::train::SynthOptions::from_config(m.config());
    *out = new vmbh_dataset{vmbh::train::synth_dataset(m.rig(), samples, seed, opts)};
  });
}

vmbh_status vmbh_dataset_load(const char* path, vmbh_dataset** out) {
  return guarded([&] {
    require(path && out, "vmbh_dataset_load: null argument");
    *out = new vmbh_dataset{vmbh::train::load_dataset(path)};
  });
}

vmbh_status vmbh_dataset_save(const vmbh_dataset* data, const char* path) {
  return guarded([&] {
    require(data && path, "vmbh_dataset_save: null argument");
    vmbh::train::save_dataset(data->value, path);
  });
}

vmbh_status vmbh_dataset_size(const vmbh_dataset* data, size_t* out) {
  return guarded([&] {
    require(data && out, "vmbh_dataset_size: null argument");
    *out = data->value.size();
  });
}

void vmbh_dataset_destroy(vmbh_dataset* data) { delete data; }

vmbh_status vmbh_train(vmbh_model* model, const vmbh_dataset* data, size_t epochs, const char* loss_csv_path,
                       vmbh_step_fn on_step, void* user, vmbh_train_report* report) {
  return guarded([&] {
    require(model && data, "vmbh_train: null argument");
    std::string csv = vmbh::train::loss_csv_header() + "\n";
    auto result = vmbh::train::train_loop(*model->value, data->value, epochs, [&](const vmbh::train::StepRecord& r) {
      csv += vmbh::train::loss_csv_row(r) + "\n";
      if (on_step) {
        vmbh_step s{r.step, r.epoch, r.lr, r.total, {}};
        std::copy(r.terms.begin(), r.terms.end(), s.terms);
        on_step(&s, user);
      }
    });
    if (loss_csv_path) write_text(loss_csv_path, csv);
    if (report) {
      report->initial = to_c(result.initial);
      report->final = to_c(result.final);
      report->steps = result.trace.size();
    }
  });
}

vmbh_status vmbh_evaluate(const vmbh_model* model, const vmbh_dataset* data, vmbh_metrics* out) {
  return guarded([&] {
    require(model && data && out, "vmbh_evaluate: null argument");
    *out = to_c(vmbh::train::evaluate(*model->value, data->value));
  });
}

vmbh_status vmbh_write_metrics_csv(const vmbh_metrics* metrics, const char* split, const char* path) {
  return guarded([&] {
    require(metrics && split && path, "vmbh_write_metrics_csv: null argument");
    write_text(path, vmbh::train::metrics_csv(from_c(*metrics), split));
  });
}

vmbh_status vmbh_gradcheck(const vmbh_config* config, uint64_t seed, const char* fault_op,
                           vmbh_gradcheck_fn on_result, void* user, int* all_passed) {
  return guarded([&] {
    require(config, "vmbh_gradcheck: null config");
    FaultScope fault(fault_op);
    bool ok = true;
    vmbh::verify::run_gradcheck_suite(config->value, seed, [&](const vmbh::verify::GradcheckResult& r) {
      ok = ok && r.passed;
      if (on_result) on_result(r.op.c_str(), r.max_rel_err, r.tolerance, r.passed ? 1 : 0, user);
    });
    if (all_passed) *all_passed = ok ? 1 : 0;
  });
}

size_t vmbh_gradcheck_op_count(void) { return vmbh::verify::gradcheck_cases().size(); }

const char* vmbh_gradcheck_op_name(size_t index) {
  const auto& cases = vmbh::verify::gradcheck_cases();
  return index < cases.size() ? cases[index].name.c_str() : nullptr;
}

vmbh_status vmbh_bench_scan(const size_t* seq_lengths, size_t count, size_t channels, size_t state, uint64_t seed,
                            vmbh_bench_fn on_row, void* user) {
  return guarded([&] {
    require(seq_lengths || count == 0, "vmbh_bench_scan: null lengths");
    std::vector<size_t> lengths(seq_lengths, seq_lengths + count);
    for (size_t n : lengths) {
      if (n == 0) throw vmbh::ContractError("vmbh_bench_scan: sequence lengths must be at least 1");
    }
    for (const auto& r : vmbh::verify::bench_scan(lengths, channels, state, seed)) {
      vmbh_bench_row row{r.seq, r.scan_flops, r.dense_flops, r.scan_seconds, r.dense_seconds};
      if (on_row) on_row(&row, user);
    }
  });
}

vmbh_status vmbh_rig_from_config(const vmbh_config* config, vmbh_rig** out) {
  return guarded([&] {
    require(config && out, "vmbh_rig_from_config: null argument");
    *out = new vmbh_rig{vmbh::pipeline::rig_for(config->value)};
  });
}

vmbh_status vmbh_rig_create_default(uint64_t seed, size_t vertices, vmbh_rig** out) {
  return guarded([&] {
    require(out, "vmbh_rig_create_default: null argument");
    *out = new vmbh_rig{vmbh::hand::make_default_rig(seed, vertices)};
  });
}

vmbh_status vmbh_rig_load_json(const char* path, vmbh_rig** out) {
  return guarded([&] {
    require(path && out, "vmbh_rig_load_json: null argument");
    *out = new vmbh_rig{vmbh::hand::load_rig(path)};
  });
}

vmbh_status vmbh_rig_save_json(const vmbh_rig* rig, const char* path) {
  return guarded([&] {
    require(rig && path, "vmbh_rig_save_json: null argument");
    vmbh::hand::save_rig(rig->value, path);
  });
}

vmbh_status vmbh_rig_vertex_count(const vmbh_rig* rig, size_t* out) {
  return guarded([&] {
    require(rig && out, "vmbh_rig_vertex_count: null argument");
    *out = rig->value.vertex_count();
  });
}

void vmbh_rig_destroy(vmbh_rig* rig) { delete rig; }

}  // extern "C"
