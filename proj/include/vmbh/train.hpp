#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vmbh/config.hpp"
#include "vmbh/handmodel.hpp"
#include "vmbh/pipeline.hpp"

namespace vmbh::train {

// Term order: theta_l, theta_r, beta_l, beta_r, joint_l, joint_r, vert_l,
// vert_r, trel.
inline constexpr std::size_t kLossTerms = 9;
extern const std::array<const char*, kLossTerms> kLossTermNames;

struct LossWeights {
  std::array<double, kLossTerms> lambda{1, 1, 1, 1, 1, 1, 1, 1, 1};

  static LossWeights from_config(const PipelineConfig& config);
  void validate() const;  // ConfigError on a negative or non-finite weight
};

struct TrainingSample {
  Tensor image;  // [3,H,W]
  Tensor theta_l, theta_r;
  Tensor beta_l, beta_r;
  Tensor joints_l, joints_r;      // [21,3] mm
  Tensor vertices_l, vertices_r;  // [V,3] mm
  Tensor t_rel;                   // [3] mm
  bool two_hand = false;          // projected hand boxes overlap
};

struct LossValue {
  Tensor total;                              // scalar, differentiable
  std::array<double, kLossTerms> terms{};    // unweighted mean-L1 values
};

// Weighted sum of nine mean-L1 terms. Throws DimensionError naming the
// first term whose prediction and target disagree in shape.
LossValue loss(const pipeline::FullOutput& pred, const TrainingSample& gt, const LossWeights& weights);

class Adam {
 public:
  Adam(ParamList params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // Applies one bias-corrected update from the current gradients. Throws
  // ContractError if a parameter has no gradient.
  void step();
  void zero_grad();

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  std::uint64_t steps() const { return t_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  ParamList params_;
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Step decay: base * decay^(number of milestones <= epoch).
double lr_schedule(std::size_t epoch, double base, const std::vector<std::size_t>& milestones, double decay);
double lr_schedule(std::size_t epoch, const PipelineConfig& config);

struct SynthOptions {
  std::size_t height = 64;
  std::size_t width = 64;
  double noise = 0.0;        // stddev of additive pixel noise
  double blob_sigma = 2.0;   // pixels
  double theta_sigma = 0.2;  // radians
  double trel_half_box = 30.0;                          // mm, per axis
  std::array<double, 3> trel_center{120.0, 0.0, 0.0};   // mm

  static SynthOptions from_config(const PipelineConfig& config);
};

// Pixel position (x = column, y = row) of a world point in millimeters.
struct Projection {
  double center_x, center_y, pixels_per_mm;
  std::array<double, 2> operator()(double x, double y) const {
    return {center_x + pixels_per_mm * x, center_y - pixels_per_mm * y};
  }
};
Projection projection_for(std::size_t height, std::size_t width);

// Adds amplitude-weighted isotropic Gaussian blobs to one [H,W] channel.
void splat_blobs(std::vector<double>& channel, std::size_t height, std::size_t width,
                 const std::vector<std::array<double, 2>>& centers, const std::vector<double>& amplitudes,
                 double sigma);
// Blob amplitude for a joint at world depth z (mm); nearer joints are brighter.
double depth_amplitude(double z);

// World translation applied to a hand's rig-frame geometry: the left root
// lands at -T/2 and the right root at +T/2.
std::array<double, 3> hand_offset(const hand::HandRig& rig, const Tensor& t_rel, bool right_hand);

std::vector<TrainingSample> synth_dataset(const hand::HandRig& rig, std::size_t n, std::uint64_t seed,
                                          const SynthOptions& options);

// Root-aligned mean per-point Euclidean distance in mm.
double mpjpe(const Tensor& pred_joints, const Tensor& gt_joints, std::size_t root_index = 0);
double mpvpe(const Tensor& pred_vertices, const Tensor& gt_vertices, const Tensor& pred_root, const Tensor& gt_root);

struct SplitMetrics {
  double mpjpe_single = 0, mpjpe_two = 0, mpjpe_all = 0;
  double mpvpe_single = 0, mpvpe_two = 0, mpvpe_all = 0;
  std::size_t count_single = 0, count_two = 0;
  double loss = 0;  // mean total loss over the set
};

// Averages over both hands of every sample. Throws ContractError on an empty set.
SplitMetrics evaluate(const pipeline::Model& model, const std::vector<TrainingSample>& data);
std::string metrics_csv(const SplitMetrics& m, const std::string& split_name);

struct ModelCost {
  std::uint64_t params = 0;
  std::uint64_t flops = 0;  // per forward pass, heavy ops only
};
// Closed-form count from the configuration; `vertices` is the rig size and
// `pose_blend` whether the rig carries pose blendshapes.
ModelCost count_params_flops(const PipelineConfig& config, std::size_t vertices, bool pose_blend = false);

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0;
  double total = 0;
  std::array<double, kLossTerms> terms{};
};

std::string loss_csv_header();
std::string loss_csv_row(const StepRecord& r);

struct TrainResult {
  std::vector<StepRecord> trace;
  SplitMetrics initial;  // before the first update
  SplitMetrics final;    // after the last update
};

using StepCallback = std::function<void(const StepRecord&)>;

// Mini-batch training in dataset order. Gradients of a batch are the mean of
// per-sample gradients accumulated in sample order. Throws NumericError with
// the step index when the loss stops being finite.
TrainResult train_loop(pipeline::Model& model, const std::vector<TrainingSample>& data, std::size_t epochs,
                       const StepCallback& on_step = {});

// Record files: magic, u32 version, u32 count, then per record the name, the
// shape and little-endian float64 data.
struct Record {
  std::string name;
  Tensor tensor;
};
void write_records(const std::string& path, const char magic[4], const std::vector<Record>& records);
std::vector<Record> read_records(const std::string& path, const char magic[4]);

void save_checkpoint(const pipeline::Model& model, const std::string& path);
// Throws FormatError naming the first record that differs in name or shape.
void load_checkpoint(pipeline::Model& model, const std::string& path);

void save_dataset(const std::vector<TrainingSample>& data, const std::string& path);
std::vector<TrainingSample> load_dataset(const std::string& path);

}  // namespace vmbh::train
