#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "support/helpers.hpp"
#include "vmbh/error.hpp"
#include "vmbh/ops.hpp"
#include "vmbh/pipeline.hpp"
#include "vmbh/rng.hpp"
#include "vmbh/train.hpp"

using namespace vmbh;
using testing_support::bitwise_equal;
using testing_support::vec;

namespace {

PipelineConfig tiny() {
  auto c = PipelineConfig::toy();
  c.image_height = c.image_width = 16;
  c.backbone_channels = 16;
  c.backbone_stages = 2;
  c.joints = 5;
  c.depth_bins = 4;
  c.ife_depth = 1;
  c.jvm_depth = 1;
  c.block.state_dim = 2;
  c.rig_vertices = 120;
  c.samples = 3;
  c.batch_size = 2;
  return c;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("vmbh_test_" + name)).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Random prediction/target pair with the term shapes the loss expects.
struct LossCase {
  pipeline::FullOutput pred;
  train::TrainingSample gt;
};

LossCase random_loss_case(Rng& rng, std::size_t V) {
  LossCase c;
  auto fill = [&](Tensor& p, Tensor& g, Shape shape) {
    p = rng.normal_tensor(shape, 1.0);
    g = rng.normal_tensor(shape, 1.0);
  };
  fill(c.pred.left.params.theta, c.gt.theta_l, {16, 3});
  fill(c.pred.right.params.theta, c.gt.theta_r, {16, 3});
  fill(c.pred.left.params.beta, c.gt.beta_l, {10});
  fill(c.pred.right.params.beta, c.gt.beta_r, {10});
  fill(c.pred.left.mesh.joints, c.gt.joints_l, {21, 3});
  fill(c.pred.right.mesh.joints, c.gt.joints_r, {21, 3});
  fill(c.pred.left.mesh.vertices, c.gt.vertices_l, {V, 3});
  fill(c.pred.right.mesh.vertices, c.gt.vertices_r, {V, 3});
  fill(c.pred.t_rel, c.gt.t_rel, {3});
  return c;
}

std::array<std::pair<Tensor, Tensor>, 9> term_pairs(const LossCase& c) {
  return {{{c.pred.left.params.theta, c.gt.theta_l},
           {c.pred.right.params.theta, c.gt.theta_r},
           {c.pred.left.params.beta, c.gt.beta_l},
           {c.pred.right.params.beta, c.gt.beta_r},
           {c.pred.left.mesh.joints, c.gt.joints_l},
           {c.pred.right.mesh.joints, c.gt.joints_r},
           {c.pred.left.mesh.vertices, c.gt.vertices_l},
           {c.pred.right.mesh.vertices, c.gt.vertices_r},
           {c.pred.t_rel, c.gt.t_rel}}};
}

}  // namespace

TEST(Loss, MatchesExplicitNineTermSum) {
  Rng rng(71);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    auto c = random_loss_case(rng, 120 + rng.index(40));
    train::LossWeights w;
    for (double& l : w.lambda) l = rng.uniform(0.0, 3.0);
    double expected = 0.0;
    auto pairs = term_pairs(c);
    for (std::size_t i = 0; i < 9; ++i) expected += w.lambda[i] * oracle::mean_abs_error(vec(pairs[i].first), vec(pairs[i].second));
    auto got = train::loss(c.pred, c.gt, w);
    worst = std::max(worst, std::fabs(got.total.item() - expected));
    for (std::size_t i = 0; i < 9; ++i) {
      ASSERT_NEAR(got.terms[i], oracle::mean_abs_error(vec(pairs[i].first), vec(pairs[i].second)), 1e-12);
    }
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(Loss, ZeroWhenPredictionEqualsTarget) {
  Rng rng(72);
  auto c = random_loss_case(rng, 130);
  c.pred.left.params.theta = c.gt.theta_l;
  c.pred.right.params.theta = c.gt.theta_r;
  c.pred.left.params.beta = c.gt.beta_l;
  c.pred.right.params.beta = c.gt.beta_r;
  c.pred.left.mesh.joints = c.gt.joints_l;
  c.pred.right.mesh.joints = c.gt.joints_r;
  c.pred.left.mesh.vertices = c.gt.vertices_l;
  c.pred.right.mesh.vertices = c.gt.vertices_r;
  c.pred.t_rel = c.gt.t_rel;
  EXPECT_EQ(train::loss(c.pred, c.gt, {}).total.item(), 0.0);
}

TEST(Loss, LinearInWeights) {
  Rng rng(73);
  auto c = random_loss_case(rng, 130);
  train::LossWeights only_joint_l;
  only_joint_l.lambda.fill(0.0);
  only_joint_l.lambda[4] = 1.0;
  auto base = train::loss(c.pred, c.gt, only_joint_l).total.item();
  only_joint_l.lambda[4] = 2.0;
  EXPECT_DOUBLE_EQ(train::loss(c.pred, c.gt, only_joint_l).total.item(), 2.0 * base);

  train::LossWeights ones, threes;
  threes.lambda.fill(3.0);
  EXPECT_NEAR(train::loss(c.pred, c.gt, threes).total.item(), 3.0 * train::loss(c.pred, c.gt, ones).total.item(), 1e-11);
}

TEST(Loss, NonNegative) {
  Rng rng(74);
  for (int i = 0; i < 20; ++i) {
    auto c = random_loss_case(rng, 120);
    EXPECT_GT(train::loss(c.pred, c.gt, {}).total.item(), 0.0);
  }
}

TEST(Loss, ShapeMismatchNamesTheTerm) {
  Rng rng(75);
  auto c = random_loss_case(rng, 120);
  c.gt.vertices_r = Tensor::zeros({119, 3});
  try {
    train::loss(c.pred, c.gt, {});
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("vert_r"), std::string::npos) << e.what();
  }
}

TEST(Loss, WeightsValidate) {
  train::LossWeights w;
  w.lambda[2] = -1.0;
  EXPECT_THROW(w.validate(), ConfigError);
  w.lambda[2] = NAN;
  EXPECT_THROW(w.validate(), ConfigError);
}

TEST(Adam, SingleScalarStepClosedForm) {
  auto p = Tensor::from({1}, {0.0}, true);
  train::Adam adam({{"p", p}}, 0.1);
  sum(p).backward();  // g = 1
  adam.step();
  // m_hat = 1, v_hat = 1 -> update = -0.1 / (1 + 1e-8)
  EXPECT_NEAR(p.data()[0], -0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p.data()[0], -0.1, 1e-8);
}

TEST(Adam, TwoStepsMatchHandRolledOracle) {
  Rng rng(76);
  auto p = Tensor::from({3}, {0.3, -1.2, 2.0}, true);
  train::Adam adam({{"p", p}}, 0.05);
  oracle::Adam ref{0.05};
  std::vector<double> shadow = vec(p);
  for (int step = 0; step < 2; ++step) {
    auto target = rng.normal_tensor({3}, 1.0);
    auto f = sum(square(sub(p, target)));
    f.backward();
    ref.step(shadow, std::vector<double>(p.grad().begin(), p.grad().end()));
    adam.step();
    adam.zero_grad();
  }
  EXPECT_LE(oracle::max_abs_diff(vec(p), shadow), 1e-12);
  EXPECT_EQ(adam.steps(), 2u);
  ASSERT_EQ(adam.first_moments().size(), 1u);
  EXPECT_EQ(adam.first_moments()[0].size(), 3u);
}

TEST(Adam, ZeroGradientIsAFixedPoint) {
  auto p = Tensor::from({2}, {1.0, -2.0}, true);
  train::Adam adam({{"p", p}}, 0.1);
  for (int i = 0; i < 5; ++i) {
    sum(scale(p, 0.0)).backward();
    adam.step();
    adam.zero_grad();
  }
  EXPECT_EQ(vec(p), (std::vector<double>{1.0, -2.0}));
}

TEST(Adam, MissingGradientIsAContractError) {
  auto p = Tensor::from({2}, {1.0, 2.0}, true);
  train::Adam adam({{"weights", p}}, 0.1);
  try {
    adam.step();
    FAIL() << "expected ContractError";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("weights"), std::string::npos);
  }
}

TEST(LrSchedule, StepDecayAtMilestones) {
  EXPECT_DOUBLE_EQ(train::lr_schedule(0, 1e-4, {10, 15}, 0.1), 1e-4);
  EXPECT_DOUBLE_EQ(train::lr_schedule(9, 1e-4, {10, 15}, 0.1), 1e-4);
  EXPECT_NEAR(train::lr_schedule(12, 1e-4, {10, 15}, 0.1), 1e-5, 1e-20);
  EXPECT_NEAR(train::lr_schedule(20, 1e-4, {10, 15}, 0.1), 1e-6, 1e-20);
  auto full = PipelineConfig::full();
  EXPECT_DOUBLE_EQ(train::lr_schedule(0, full), 1e-4);
  EXPECT_NEAR(train::lr_schedule(12, full), 1e-5, 1e-20);
  EXPECT_NEAR(train::lr_schedule(20, full), 1e-6, 1e-20);
  EXPECT_DOUBLE_EQ(train::lr_schedule(400, PipelineConfig::toy()), 1e-3);
}

TEST(Synth, GroundTruthIsConsistentWithTheRig) {
  auto rig = hand::make_default_rig(0);
  auto data = train::synth_dataset(rig, 4, 5, {});
  for (const auto& d : data) {
    auto l = hand::lbs(rig, {d.theta_l, d.beta_l});
    auto r = hand::lbs(rig, {d.theta_r, d.beta_r});
    EXPECT_LE(oracle::max_abs_diff(vec(l.joints), vec(d.joints_l)), 1e-9);
    EXPECT_LE(oracle::max_abs_diff(vec(r.vertices), vec(d.vertices_r)), 1e-9);
    for (int a = 0; a < 3; ++a) {
      double center = a == 0 ? 120.0 : 0.0;
      EXPECT_LE(std::fabs(d.t_rel.data()[a] - center), 30.0);
    }
  }
}

TEST(Synth, DeterministicPerSeed) {
  auto rig = hand::make_default_rig(0);
  train::SynthOptions opts;
  opts.noise = 0.05;
  auto a = train::synth_dataset(rig, 3, 9, opts);
  auto b = train::synth_dataset(rig, 3, 9, opts);
  auto c = train::synth_dataset(rig, 3, 10, opts);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(bitwise_equal(a[i].image, b[i].image));
    EXPECT_TRUE(bitwise_equal(a[i].theta_r, b[i].theta_r));
    EXPECT_EQ(a[i].two_hand, b[i].two_hand);
  }
  EXPECT_FALSE(bitwise_equal(a[0].image, c[0].image));
  EXPECT_THROW(train::synth_dataset(rig, 0, 1, opts), ContractError);
}

TEST(Synth, ImageChannelsAndRange) {
  auto rig = hand::make_default_rig(0);
  auto data = train::synth_dataset(rig, 2, 1, {});
  auto img = vec(data[0].image);
  const std::size_t HW = 64 * 64;
  double peak = 0.0;
  for (std::size_t i = 0; i < HW; ++i) {
    ASSERT_GE(img[i], 0.0);
    ASSERT_NEAR(img[2 * HW + i], img[i] + img[HW + i], 1e-15);
    peak = std::max(peak, img[i]);
  }
  EXPECT_GT(peak, 0.2);
}

TEST(Synth, HandChannelsAreGaussianSumsAtProjectedJoints) {
  auto rig = hand::make_default_rig(0);
  train::SynthOptions opts;
  auto data = train::synth_dataset(rig, 5, 3, opts);
  // Blob centers come from the projection; everything else is recomputed here.
  auto project = train::projection_for(opts.height, opts.width);
  const std::size_t H = opts.height, W = opts.width;
  const double inv = 1.0 / (2.0 * opts.blob_sigma * opts.blob_sigma);
  double worst = 0.0;
  for (const auto& d : data) {
    auto img = vec(d.image);
    for (int h = 0; h < 2; ++h) {
      auto jd = vec(h == 0 ? d.joints_l : d.joints_r);
      auto off = train::hand_offset(rig, d.t_rel, h == 1);
      std::vector<double> expected(H * W, 0.0);
      for (std::size_t j = 0; j < 21; ++j) {
        auto c = project(jd[3 * j] + off[0], jd[3 * j + 1] + off[1]);
        double amp = std::clamp(1.0 + (jd[3 * j + 2] + off[2]) / 200.0, 0.25, 1.75);
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            double dx = double(x) - c[0], dy = double(y) - c[1];
            expected[y * W + x] += amp * std::exp(-(dx * dx + dy * dy) * inv);
          }
      }
      std::vector<double> got(img.begin() + long(h * H * W), img.begin() + long((h + 1) * H * W));
      worst = std::max(worst, oracle::max_abs_diff(got, expected));
    }
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(Synth, SingleBlobPeakMatchesCenter) {
  std::vector<double> ch(20 * 30, 0.0);
  train::splat_blobs(ch, 20, 30, {{{12.3, 7.8}}}, {1.0}, 2.0);
  auto it = std::max_element(ch.begin(), ch.end());
  long idx = it - ch.begin();
  EXPECT_EQ(idx % 30, 12);
  EXPECT_EQ(idx / 30, 8);
  EXPECT_DOUBLE_EQ(train::depth_amplitude(0.0), 1.0);
  EXPECT_DOUBLE_EQ(train::depth_amplitude(-1e4), 0.25);
  EXPECT_DOUBLE_EQ(train::depth_amplitude(1e4), 1.75);
}

TEST(Metrics, MpjpeMatchesLoopOracle) {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = rng.normal_tensor({21, 3}, 30.0), g = rng.normal_tensor({21, 3}, 30.0);
    auto pv = vec(p), gv = vec(g);
    EXPECT_NEAR(train::mpjpe(p, g), oracle::aligned_mean_distance(pv, gv, pv.data(), gv.data()), 1e-12);
    auto vp = rng.normal_tensor({252, 3}, 30.0), vg = rng.normal_tensor({252, 3}, 30.0);
    auto rp = rng.normal_tensor({3}, 10.0), rg = rng.normal_tensor({3}, 10.0);
    EXPECT_NEAR(train::mpvpe(vp, vg, rp, rg),
                oracle::aligned_mean_distance(vec(vp), vec(vg), vec(rp).data(), vec(rg).data()), 1e-12);
  }
}

TEST(Metrics, InvariantToCommonTranslation) {
  Rng rng(78);
  auto p = rng.normal_tensor({21, 3}, 30.0), g = rng.normal_tensor({21, 3}, 30.0);
  auto shift = rng.normal_tensor({3}, 100.0);
  EXPECT_NEAR(train::mpjpe(add(p, shift), g), train::mpjpe(p, g), 1e-12);
  EXPECT_NEAR(train::mpjpe(p, add(g, shift)), train::mpjpe(p, g), 1e-12);
  EXPECT_EQ(train::mpjpe(g, g), 0.0);
  EXPECT_NEAR(train::mpjpe(add(g, shift), g), 0.0, 1e-12);
}

TEST(Metrics, MeanSemanticsOfMpvpe) {
  auto v = Tensor::zeros({252, 3});
  auto moved = v.clone();
  moved.mutable_data()[3 * 17 + 1] = 3.0;
  auto root = Tensor::zeros({3});
  EXPECT_DOUBLE_EQ(train::mpvpe(moved, v, root, root), 3.0 / 252.0);
  EXPECT_EQ(train::mpvpe(v, v, root, root), 0.0);
  EXPECT_THROW(train::mpjpe(Tensor::zeros({21, 3}), Tensor::zeros({20, 3})), DimensionError);
}

TEST(Metrics, EvaluateSplitsAndCsv) {
  auto cfg = tiny();
  pipeline::Model model(cfg);
  auto data = train::synth_dataset(model.rig(), 4, 2, train::SynthOptions::from_config(cfg));
  auto m = train::evaluate(model, data);
  EXPECT_EQ(m.count_single + m.count_two, 4u);
  double expected_all = 0.0;
  for (const auto& d : data) {
    auto out = model.forward(d.image);
    expected_all += 0.5 * (train::mpjpe(out.left.mesh.joints, d.joints_l) + train::mpjpe(out.right.mesh.joints, d.joints_r));
  }
  EXPECT_NEAR(m.mpjpe_all, expected_all / 4.0, 1e-10);
  EXPECT_THROW(train::evaluate(model, {}), ContractError);

  train::SplitMetrics only_single;
  only_single.mpjpe_two = only_single.mpvpe_two = NAN;
  only_single.mpjpe_single = only_single.mpjpe_all = 1.5;
  auto csv = train::metrics_csv(only_single, "train");
  EXPECT_EQ(csv, "split,mpjpe_single,mpjpe_two,mpjpe_all,mpvpe_single,mpvpe_two,mpvpe_all\ntrain,1.5,,1.5,0,,0\n");
}

TEST(TrainLoop, ZeroLearningRateGivesFlatTrace) {
  auto cfg = tiny();
  cfg.learning_rate = 0.0;
  pipeline::Model model(cfg);
  auto data = train::synth_dataset(model.rig(), cfg.samples, cfg.seed, train::SynthOptions::from_config(cfg));
  auto result = train::train_loop(model, data, 3);
  ASSERT_EQ(result.trace.size(), 6u);  // 3 epochs x 2 batches
  // Batches are samples {0,1} and {2}; each repeats exactly every epoch.
  for (std::size_t i = 2; i < result.trace.size(); ++i) EXPECT_EQ(result.trace[i].total, result.trace[i % 2].total);
  EXPECT_EQ(result.initial.mpjpe_all, result.final.mpjpe_all);
}

TEST(TrainLoop, ReducesLossAndIsBitwiseReproducible) {
  auto cfg = tiny();
  cfg.batch_size = 3;
  std::vector<std::string> csv[2];
  for (auto& lines : csv) {
    pipeline::Model model(cfg);
    auto data = train::synth_dataset(model.rig(), cfg.samples, cfg.seed, train::SynthOptions::from_config(cfg));
    auto result = train::train_loop(model, data, 20, [&](const train::StepRecord& r) { lines.push_back(train::loss_csv_row(r)); });
    EXPECT_LT(result.trace.back().total, result.trace.front().total);
    EXPECT_LT(result.final.loss, result.initial.loss);
    EXPECT_EQ(result.trace.size(), 20u);
    EXPECT_EQ(result.trace[7].step, 7u);
    EXPECT_EQ(result.trace[7].epoch, 7u);
  }
  EXPECT_EQ(csv[0], csv[1]);
}

TEST(TrainLoop, NonFiniteLossAbortsWithStepIndex) {
  auto cfg = tiny();
  pipeline::Model model(cfg);
  auto data = train::synth_dataset(model.rig(), 3, 0, train::SynthOptions::from_config(cfg));
  auto bad = data[2].t_rel.clone();
  bad.mutable_data()[0] = NAN;
  data[2].t_rel = bad;
  try {
    train::train_loop(model, data, 2);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(train::train_loop(model, {}, 1), ContractError);
}

TEST(TrainLoop, CsvHeader) {
  EXPECT_EQ(train::loss_csv_header(), "step,epoch,lr,total,theta_l,theta_r,beta_l,beta_r,joint_l,joint_r,vert_l,vert_r,trel");
  train::StepRecord r;
  r.step = 3;
  r.lr = 0.5;
  r.total = 2.0;
  EXPECT_EQ(train::loss_csv_row(r), "3,0,0.5,2,0,0,0,0,0,0,0,0,0");
}

TEST(Records, RoundTripAndCorruption) {
  auto path = temp_path("records.bin");
  Rng rng(79);
  std::vector<train::Record> recs{{"a", rng.normal_tensor({2, 3}, 1.0)}, {"scalar", Tensor::from({1}, {7.5})}};
  train::write_records(path, "TEST", recs);
  auto back = train::read_records(path, "TEST");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].name, "a");
  EXPECT_TRUE(bitwise_equal(back[0].tensor, recs[0].tensor));
  EXPECT_THROW(train::read_records(path, "NOPE"), FormatError);

  auto bytes = slurp(path);
  {
    std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() - 5);
  }
  EXPECT_THROW(train::read_records(path, "TEST"), FormatError);
  {
    std::ofstream(path, std::ios::binary) << bytes << "x";
  }
  EXPECT_THROW(train::read_records(path, "TEST"), FormatError);
  std::remove(path.c_str());
  EXPECT_THROW(train::read_records(path, "TEST"), IoError);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  auto cfg = tiny();
  pipeline::Model a(cfg);
  auto p1 = temp_path("ckpt1.vmbh"), p2 = temp_path("ckpt2.vmbh");
  train::save_checkpoint(a, p1);
  cfg.seed = 99;
  pipeline::Model b(cfg);
  train::load_checkpoint(b, p1);
  train::save_checkpoint(b, p2);
  EXPECT_EQ(slurp(p1), slurp(p2));
  auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(bitwise_equal(pa[i].tensor, pb[i].tensor));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST(Checkpoint, MismatchNamesFirstDifferingRecord) {
  auto cfg = tiny();
  pipeline::Model small(cfg);
  auto path = temp_path("ckpt_mismatch.vmbh");
  train::save_checkpoint(small, path);
  cfg.joints = 6;
  pipeline::Model other(cfg);
  std::string first_diff;
  auto ps = small.parameters(), po = other.parameters();
  for (std::size_t i = 0; i < std::min(ps.size(), po.size()) && first_diff.empty(); ++i) {
    if (ps[i].name != po[i].name || ps[i].tensor.shape() != po[i].tensor.shape()) first_diff = po[i].name;
  }
  ASSERT_FALSE(first_diff.empty());
  try {
    train::load_checkpoint(other, path);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(first_diff), std::string::npos) << e.what();
  }
  auto bytes = slurp(path);
  bytes[0] = 'X';
  {
    std::ofstream(path, std::ios::binary) << bytes;
  }
  EXPECT_THROW(train::load_checkpoint(small, path), FormatError);
  std::remove(path.c_str());
}

TEST(Dataset, FileRoundTrip) {
  auto rig = hand::make_default_rig(0);
  auto data = train::synth_dataset(rig, 3, 4, {});
  auto path = temp_path("data.vmbd");
  train::save_dataset(data, path);
  auto back = train::load_dataset(path);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(bitwise_equal(back[i].image, data[i].image));
    EXPECT_TRUE(bitwise_equal(back[i].vertices_l, data[i].vertices_l));
    EXPECT_EQ(back[i].two_hand, data[i].two_hand);
  }
  train::save_dataset({}, path);
  EXPECT_TRUE(train::load_dataset(path).empty());
  std::remove(path.c_str());
}

TEST(Cost, FullProfileIsLargerThanToy) {
  auto full = train::count_params_flops(PipelineConfig::full(), 778);
  auto toy = train::count_params_flops(PipelineConfig::toy(), 252);
  EXPECT_GT(full.params, toy.params);
  EXPECT_GT(full.flops, toy.flops);
}
