#include <cmath>
#include <sstream>

#include "vmbh/error.hpp"
#include "vmbh/train.hpp"

namespace vmbh::train {

std::string loss_csv_header() { return "step,epoch,lr,total,theta_l,theta_r,beta_l,beta_r,joint_l,joint_r,vert_l,vert_r,trel"; }

std::string loss_csv_row(const StepRecord& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.step << ',' << r.epoch << ',' << r.lr << ',' << r.total;
  for (double t : r.terms) os << ',' << t;
  return os.str();
}

TrainResult train_loop(pipeline::Model& model, const std::vector<TrainingSample>& data, std::size_t epochs,
                       const StepCallback& on_step) {
  if (data.empty()) throw ContractError("train_loop: dataset is empty");
  const auto& config = model.config();
  auto weights = LossWeights::from_config(config);
  Adam adam(model.parameters(), config.learning_rate);
  TrainResult result;
  result.initial = evaluate(model, data);

  const std::size_t batch = config.batch_size;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    adam.set_lr(lr_schedule(epoch, config));
    for (std::size_t begin = 0; begin < data.size(); begin += batch) {
      std::size_t end = std::min(data.size(), begin + batch);
      double inv = 1.0 / static_cast<double>(end - begin);
      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.lr = adam.lr();
      adam.zero_grad();
      for (std::size_t i = begin; i < end; ++i) {
        auto value = loss(model.forward(data[i].image), data[i], weights);
        double total = value.total.item();
        if (!std::isfinite(total)) {
          throw NumericError("non-finite loss at step " + std::to_string(step) + " (sample " + std::to_string(i) + ")");
        }
        rec.total += inv * total;
        for (std::size_t t = 0; t < kLossTerms; ++t) rec.terms[t] += inv * value.terms[t];
        scale(value.total, inv).backward();
      }
      adam.step();
      result.trace.push_back(rec);
      if (on_step) on_step(rec);
      ++step;
    }
  }
  result.final = evaluate(model, data);
  return result;
}

}  // namespace vmbh::train
