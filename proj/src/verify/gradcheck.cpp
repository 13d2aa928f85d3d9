#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "vmbh/error.hpp"
#include "vmbh/flops.hpp"
#include "vmbh/ops.hpp"
#include "vmbh/rng.hpp"
#include "vmbh/ssm.hpp"
#include "vmbh/verify.hpp"

namespace vmbh::verify {

namespace {

std::vector<std::size_t> pick_coords(std::size_t n, std::size_t max_coords, Rng& rng) {
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  if (max_coords == 0 || n <= max_coords) return all;
  // Partial Fisher-Yates: a uniformly random subset, sorted for locality.
  for (std::size_t i = 0; i < max_coords; ++i) std::swap(all[i], all[i + rng.index(n - i)]);
  all.resize(max_coords);
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

GradcheckResult gradcheck(const std::string& name, const GraphFn& fn, const std::vector<Tensor>& inputs,
                          const GradcheckOptions& options) {
  Rng rng(options.seed ^ 0x5851f42d4c957f2dULL);
  Tensor weights;
  auto functional = [&](const Tensor& out) {
    if (!weights.defined()) weights = rng.normal_tensor(out.shape(), 1.0);
    if (weights.shape() != out.shape()) throw ContractError("gradcheck: output shape changed between evaluations");
    return sum(mul(out, weights));
  };

  std::vector<Tensor> leaves = inputs;
  for (auto& t : leaves) {
    if (t.requires_grad()) t.zero_grad();
  }
  functional(fn(leaves)).backward();

  GradcheckResult result;
  result.op = name;
  result.tolerance = options.tolerance;
  NoGradGuard no_grad;
  double joint_diff = 0.0, joint_mag = 0.0;
  for (auto& t : leaves) {
    if (!t.requires_grad()) continue;
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) {
      auto g = t.grad();
      analytic.assign(g.begin(), g.end());
    }
    auto coords = pick_coords(t.numel(), options.max_coords, rng);
    double max_diff = 0.0, max_mag = 0.0;
    for (auto i : coords) {
      auto x = t.mutable_data();
      double orig = x[i];
      x[i] = orig + options.eps;
      double fp = functional(fn(leaves)).item();
      x[i] = orig - options.eps;
      double fm = functional(fn(leaves)).item();
      x[i] = orig;
      double numeric = (fp - fm) / (2.0 * options.eps);
      max_diff = std::max(max_diff, std::fabs(numeric - analytic[i]));
      max_mag = std::max({max_mag, std::fabs(numeric), std::fabs(analytic[i])});
    }
    result.coords += coords.size();
    joint_diff = std::max(joint_diff, max_diff);
    joint_mag = std::max(joint_mag, max_mag);
    double err = max_diff / std::max(max_mag, options.floor);
    if (!(err <= result.max_rel_err)) result.max_rel_err = std::isnan(err) ? INFINITY : err;
  }
  if (options.joint) {
    double err = joint_diff / std::max(joint_mag, options.floor);
    result.max_rel_err = std::isnan(err) ? INFINITY : err;
  }
  for (auto& t : leaves) {
    if (t.requires_grad()) t.zero_grad();
  }
  result.passed = result.max_rel_err <= options.tolerance;
  return result;
}

std::vector<GradcheckResult> run_gradcheck_suite(const PipelineConfig& config, std::uint64_t seed,
                                                 const GradcheckReport& report) {
  std::vector<GradcheckResult> results;
  for (const auto& c : gradcheck_cases()) {
    auto r = c.run(config, seed);
    r.op = c.name;
    if (report) report(r);
    results.push_back(std::move(r));
  }
  return results;
}

std::vector<ScanBenchRow> bench_scan(const std::vector<std::size_t>& seq_lengths, std::size_t channels,
                                     std::size_t state, std::uint64_t seed) {
  if (channels == 0 || state == 0) throw ContractError("bench_scan: channels and state must be positive");
  std::vector<ScanBenchRow> rows;
  NoGradGuard no_grad;
  for (auto L : seq_lengths) {
    if (L == 0) throw ContractError("bench_scan: sequence lengths must be >= 1");
    Rng rng(seed + L);
    auto x = rng.uniform_tensor({L, channels}, -1.0, 1.0);
    auto delta = rng.uniform_tensor({L, channels}, 0.01, 0.1);
    auto A = neg(rng.uniform_tensor({channels, state}, 0.5, 2.0));
    auto B = rng.uniform_tensor({L, state}, -1.0, 1.0);
    auto C = rng.uniform_tensor({L, state}, -1.0, 1.0);
    auto D = rng.uniform_tensor({channels}, -1.0, 1.0);
    ScanBenchRow row;
    row.seq = L;
    using clock = std::chrono::steady_clock;
    {
      flops::Scope scope;
      auto t0 = clock::now();
      ssm::selective_scan(x, delta, A, B, C, D);
      row.scan_seconds = std::chrono::duration<double>(clock::now() - t0).count();
      row.scan_flops = scope.elapsed();
    }
    {
      flops::Scope scope;
      auto t0 = clock::now();
      ssm::dense_scan(x, delta, A, B, C, D);
      row.dense_seconds = std::chrono::duration<double>(clock::now() - t0).count();
      row.dense_flops = scope.elapsed();
    }
    rows.push_back(row);
  }
  return rows;
}

std::string bench_csv_header() { return "seq,scan_flops,dense_flops,scan_seconds,dense_seconds"; }

std::string bench_csv_row(const ScanBenchRow& r) {
  std::ostringstream os;
  os << r.seq << ',' << r.scan_flops << ',' << r.dense_flops << ',' << r.scan_seconds << ',' << r.dense_seconds;
  return os.str();
}

}  // namespace vmbh::verify
