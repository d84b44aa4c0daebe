#pragma once
// Action-value network over two-channel state volumes:
//   3 x [conv3d(k3, s2, p1, no bias) -> batchnorm -> relu]  (2 -> 8 -> 16 -> 32 channels)
//   -> flatten -> fully connected -> one value per action.
// All parameters live in one flat vector so optimisers, gradient checks and
// serialisation can treat them uniformly.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "beamplan/geometry.hpp"
#include "beamplan/render.hpp"

namespace beamplan {

struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t count = 0;
  friend bool operator==(const ParamBlock&, const ParamBlock&) = default;
};

class QNetwork {
 public:
  static constexpr int kInputChannels = 2;
  static constexpr int kConvLayers = 3;
  static constexpr int kChannels[kConvLayers + 1] = {kInputChannels, 8, 16, 32};

  QNetwork(Index3 input_dims, int action_count, std::uint64_t seed);

  Index3 input_dims() const { return dims_[0]; }
  int action_count() const { return actions_; }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  const ParamBlock& block(const std::string& name) const;

  // Batch-norm running statistics: mean then variance per layer.
  std::span<const double> buffers() const { return buffers_; }

  // Inference mode: batch norm uses running statistics. Throws
  // std::invalid_argument on an input whose dims or channels do not match.
  std::vector<double> forward(const StateTensor& input) const;
  int greedy_action(const StateTensor& input) const;

  struct Batch {
    std::vector<const StateTensor*> inputs;
    std::vector<int> actions;
    std::vector<double> targets;
  };

  // Training-mode mean squared error (1/N) * sum (Q(s_n, a_n) - y_n)^2 with
  // batch statistics. Running statistics are left untouched.
  double loss(const Batch& batch) const;
  // Same loss; writes dLoss/dparameters into `grad` (resized to match).
  // When update_running_stats is set the batch statistics are folded into
  // the running averages.
  double loss_and_gradient(const Batch& batch, std::vector<double>& grad, bool update_running_stats = false);

  void save(const std::filesystem::path& dir) const;
  static QNetwork load(const std::filesystem::path& dir);

  friend bool operator==(const QNetwork&, const QNetwork&) = default;

 private:
  struct Trace;
  double run_training(const Batch& batch, std::vector<double>* grad, bool update_running_stats);
  double run_training(const Batch& batch) const;

  std::size_t conv_weight(int layer) const { return blocks_[3 * layer].offset; }
  std::size_t bn_gamma(int layer) const { return blocks_[3 * layer + 1].offset; }
  std::size_t bn_beta(int layer) const { return blocks_[3 * layer + 2].offset; }
  std::size_t fc_weight() const { return blocks_[3 * kConvLayers].offset; }
  std::size_t fc_bias() const { return blocks_[3 * kConvLayers + 1].offset; }
  std::size_t running_mean(int layer) const;
  std::size_t running_var(int layer) const;
  std::size_t flat_features() const;

  Index3 dims_[kConvLayers + 1];
  int actions_ = 0;
  std::vector<double> params_;
  std::vector<ParamBlock> blocks_;
  std::vector<double> buffers_;
};

// Adam over the flat parameter vector.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(std::span<double> params, std::span<const double> grad);

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

}  // namespace beamplan
