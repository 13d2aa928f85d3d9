#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vmbh/config.hpp"
#include "vmbh/tensor.hpp"

namespace vmbh::verify {

struct GradcheckOptions {
  double eps = 1e-6;
  double tolerance = 1e-6;
  double floor = 1e-9;             // absolute floor of the error denominator
  std::size_t max_coords = 0;      // per input; 0 checks every coordinate
  // Score all inputs as one gradient vector instead of input by input.
  bool joint = false;
  std::uint64_t seed = 0;
};

struct GradcheckResult {
  std::string op;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  std::size_t coords = 0;
  bool passed = false;
};

using GraphFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Compares reverse-mode gradients of a random linear functional of fn(inputs)
// with central differences. For every input that requires grad the error is
// max|analytic - numeric| / max(max|analytic|, max|numeric|, floor) over the
// checked coordinates; the result reports the largest over all inputs, or
// the error of the concatenated gradient vector when `joint` is set.
GradcheckResult gradcheck(const std::string& name, const GraphFn& fn, const std::vector<Tensor>& inputs,
                          const GradcheckOptions& options);

struct GradcheckCase {
  std::string name;
  std::function<GradcheckResult(const PipelineConfig& config, std::uint64_t seed)> run;
};

// Every registered differentiable op plus the end-to-end network case,
// each name listed once.
const std::vector<GradcheckCase>& gradcheck_cases();

using GradcheckReport = std::function<void(const GradcheckResult&)>;
std::vector<GradcheckResult> run_gradcheck_suite(const PipelineConfig& config, std::uint64_t seed,
                                                 const GradcheckReport& report = {});

struct ScanBenchRow {
  std::size_t seq = 0;
  std::uint64_t scan_flops = 0;
  std::uint64_t dense_flops = 0;
  double scan_seconds = 0.0;
  double dense_seconds = 0.0;
};

// Runs the selective scan and the dense quadratic operator on the same random
// input at each length and records counted FLOPs and wall time.
std::vector<ScanBenchRow> bench_scan(const std::vector<std::size_t>& seq_lengths, std::size_t channels,
                                     std::size_t state, std::uint64_t seed);
std::string bench_csv_header();
std::string bench_csv_row(const ScanBenchRow& row);

}  // namespace vmbh::verify
