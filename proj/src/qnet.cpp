#include "beamplan/qnet.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "beamplan/kernels.hpp"
#include "beamplan/raw_io.hpp"

namespace beamplan {
namespace {

constexpr int kKernel = 3;
constexpr int kTaps = kKernel * kKernel * kKernel;
constexpr int kStride = 2;
constexpr int kPad = 1;
constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

Index3 conv_out(Index3 in) {
  auto f = [](int n) { return (n + 2 * kPad - kKernel) / kStride + 1; };
  return {f(in.x), f(in.y), f(in.z)};
}

std::size_t volume(Index3 d) { return static_cast<std::size_t>(d.x) * d.y * d.z; }

// Patch matrix of one sample, transposed: cols[p * patch + (c * 27 + tap)].
void im2col(const double* x, int channels, Index3 in, Index3 out, double* cols) {
  const std::size_t patch = static_cast<std::size_t>(channels) * kTaps;
  std::size_t p = 0;
  for (int oz = 0; oz < out.z; ++oz)
    for (int oy = 0; oy < out.y; ++oy)
      for (int ox = 0; ox < out.x; ++ox, ++p) {
        double* row = cols + p * patch;
        for (int c = 0; c < channels; ++c)
          for (int kz = 0; kz < kKernel; ++kz)
            for (int ky = 0; ky < kKernel; ++ky)
              for (int kx = 0; kx < kKernel; ++kx) {
                const int iz = oz * kStride - kPad + kz, iy = oy * kStride - kPad + ky, ix = ox * kStride - kPad + kx;
                const bool inside = iz >= 0 && iz < in.z && iy >= 0 && iy < in.y && ix >= 0 && ix < in.x;
                *row++ = inside ? x[((static_cast<std::size_t>(c) * in.z + iz) * in.y + iy) * in.x + ix] : 0.0;
              }
      }
}

void col2im_add(const double* cols, int channels, Index3 in, Index3 out, double* dx) {
  const std::size_t patch = static_cast<std::size_t>(channels) * kTaps;
  std::size_t p = 0;
  for (int oz = 0; oz < out.z; ++oz)
    for (int oy = 0; oy < out.y; ++oy)
      for (int ox = 0; ox < out.x; ++ox, ++p) {
        const double* row = cols + p * patch;
        for (int c = 0; c < channels; ++c)
          for (int kz = 0; kz < kKernel; ++kz)
            for (int ky = 0; ky < kKernel; ++ky)
              for (int kx = 0; kx < kKernel; ++kx, ++row) {
                const int iz = oz * kStride - kPad + kz, iy = oy * kStride - kPad + ky, ix = ox * kStride - kPad + kx;
                if (iz >= 0 && iz < in.z && iy >= 0 && iy < in.y && ix >= 0 && ix < in.x)
                  dx[((static_cast<std::size_t>(c) * in.z + iz) * in.y + iy) * in.x + ix] += *row;
              }
      }
}

}  // namespace

QNetwork::QNetwork(Index3 input_dims, int action_count, std::uint64_t seed) : actions_(action_count) {
  if (input_dims.x < 1 || input_dims.y < 1 || input_dims.z < 1) throw std::invalid_argument("QNetwork: bad input dims");
  if (action_count < 1) throw std::invalid_argument("QNetwork: action_count must be >= 1");
  dims_[0] = input_dims;
  for (int l = 0; l < kConvLayers; ++l) dims_[l + 1] = conv_out(dims_[l]);

  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t count) {
    blocks_.push_back({std::move(name), offset, count});
    offset += count;
  };
  for (int l = 0; l < kConvLayers; ++l) {
    const std::string tag = std::to_string(l + 1);
    add("conv" + tag + ".weight", static_cast<std::size_t>(kChannels[l + 1]) * kChannels[l] * kTaps);
    add("bn" + tag + ".gamma", kChannels[l + 1]);
    add("bn" + tag + ".beta", kChannels[l + 1]);
  }
  add("fc.weight", static_cast<std::size_t>(actions_) * flat_features());
  add("fc.bias", actions_);
  params_.assign(offset, 0.0);

  std::mt19937_64 rng(seed);
  auto fill_uniform = [&](std::size_t at, std::size_t count, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t i = 0; i < count; ++i) params_[at + i] = u(rng);
  };
  for (int l = 0; l < kConvLayers; ++l) {
    fill_uniform(conv_weight(l), blocks_[3 * l].count, std::sqrt(6.0 / (kChannels[l] * kTaps)));
    std::fill_n(params_.begin() + static_cast<long>(bn_gamma(l)), kChannels[l + 1], 1.0);
  }
  fill_uniform(fc_weight(), blocks_[3 * kConvLayers].count, 1.0 / std::sqrt(static_cast<double>(flat_features())));

  std::size_t buffer_size = 0;
  for (int l = 0; l < kConvLayers; ++l) buffer_size += 2 * static_cast<std::size_t>(kChannels[l + 1]);
  buffers_.assign(buffer_size, 0.0);
  for (int l = 0; l < kConvLayers; ++l) std::fill_n(buffers_.begin() + static_cast<long>(running_var(l)), kChannels[l + 1], 1.0);
}

const ParamBlock& QNetwork::block(const std::string& name) const {
  for (const auto& b : blocks_)
    if (b.name == name) return b;
  throw std::out_of_range("QNetwork: no parameter block '" + name + "'");
}

std::size_t QNetwork::running_mean(int layer) const {
  std::size_t off = 0;
  for (int l = 0; l < layer; ++l) off += 2 * static_cast<std::size_t>(kChannels[l + 1]);
  return off;
}
std::size_t QNetwork::running_var(int layer) const { return running_mean(layer) + kChannels[layer + 1]; }
std::size_t QNetwork::flat_features() const { return kChannels[kConvLayers] * volume(dims_[kConvLayers]); }

struct QNetwork::Trace {
  int n = 0;
  std::vector<double> cols[kConvLayers];
  std::vector<double> xhat[kConvLayers];
  std::vector<double> inv_std[kConvLayers];
  std::vector<double> act[kConvLayers];
  std::vector<double> q;
};

namespace {

void check_input(const StateTensor& t, Index3 dims) {
  if (!(t.dims == dims) || t.channels != QNetwork::kInputChannels || t.data.size() != 2 * volume(dims))
    throw std::invalid_argument("QNetwork: input dims " + to_string(t.dims) + " do not match network input " +
                                to_string(dims));
}

}  // namespace

std::vector<double> QNetwork::forward(const StateTensor& input) const {
  check_input(input, dims_[0]);
  std::vector<double> x = input.data;
  std::vector<double> cols;
  for (int l = 0; l < kConvLayers; ++l) {
    const int cin = kChannels[l], cout = kChannels[l + 1];
    const std::size_t positions = volume(dims_[l + 1]);
    const std::size_t patch = static_cast<std::size_t>(cin) * kTaps;
    cols.assign(positions * patch, 0.0);
    im2col(x.data(), cin, dims_[l], dims_[l + 1], cols.data());
    std::vector<double> y(static_cast<std::size_t>(cout) * positions);
    for (int co = 0; co < cout; ++co) {
      const std::span<const double> w(params_.data() + conv_weight(l) + co * patch, patch);
      const double rm = buffers_[running_mean(l) + co];
      const double inv = 1.0 / std::sqrt(buffers_[running_var(l) + co] + kBnEps);
      const double gamma = params_[bn_gamma(l) + co], beta = params_[bn_beta(l) + co];
      for (std::size_t p = 0; p < positions; ++p) {
        const double z = kernels::dot(w, std::span<const double>(cols.data() + p * patch, patch));
        y[co * positions + p] = std::max(0.0, gamma * ((z - rm) * inv) + beta);
      }
    }
    x = std::move(y);
  }
  const std::size_t features = flat_features();
  std::vector<double> q(actions_);
  for (int a = 0; a < actions_; ++a)
    q[a] = params_[fc_bias() + a] +
           kernels::dot(std::span<const double>(params_.data() + fc_weight() + a * features, features), x);
  return q;
}

int QNetwork::greedy_action(const StateTensor& input) const {
  const auto q = forward(input);
  return static_cast<int>(std::max_element(q.begin(), q.end()) - q.begin());
}

double QNetwork::loss(const Batch& batch) const { return run_training(batch); }

double QNetwork::run_training(const Batch& batch) const {
  QNetwork copy = *this;
  return copy.run_training(batch, nullptr, false);
}

double QNetwork::loss_and_gradient(const Batch& batch, std::vector<double>& grad, bool update_running_stats) {
  return run_training(batch, &grad, update_running_stats);
}

double QNetwork::run_training(const Batch& batch, std::vector<double>* grad, bool update_running_stats) {
  const int n = static_cast<int>(batch.inputs.size());
  if (n < 1 || batch.actions.size() != batch.inputs.size() || batch.targets.size() != batch.inputs.size())
    throw std::invalid_argument("QNetwork: malformed batch");
  for (const StateTensor* t : batch.inputs) check_input(*t, dims_[0]);
  for (int a : batch.actions)
    if (a < 0 || a >= actions_) throw std::invalid_argument("QNetwork: batch action out of range");

  Trace tr;
  tr.n = n;
  const std::size_t in_size = 2 * volume(dims_[0]);
  std::vector<double> x(n * in_size);
  for (int s = 0; s < n; ++s) std::copy(batch.inputs[s]->data.begin(), batch.inputs[s]->data.end(), x.begin() + s * in_size);

  for (int l = 0; l < kConvLayers; ++l) {
    const int cin = kChannels[l], cout = kChannels[l + 1];
    const std::size_t pos = volume(dims_[l + 1]);
    const std::size_t patch = static_cast<std::size_t>(cin) * kTaps;
    const std::size_t in_per = static_cast<std::size_t>(cin) * volume(dims_[l]);
    const std::size_t out_per = static_cast<std::size_t>(cout) * pos;

    auto& cols = tr.cols[l];
    cols.assign(n * pos * patch, 0.0);
    for (int s = 0; s < n; ++s) im2col(x.data() + s * in_per, cin, dims_[l], dims_[l + 1], cols.data() + s * pos * patch);

    std::vector<double> z(n * out_per);
    for (int s = 0; s < n; ++s)
      for (int co = 0; co < cout; ++co) {
        const std::span<const double> w(params_.data() + conv_weight(l) + co * patch, patch);
        for (std::size_t p = 0; p < pos; ++p)
          z[s * out_per + co * pos + p] = kernels::dot(w, std::span<const double>(cols.data() + (s * pos + p) * patch, patch));
      }

    auto& xhat = tr.xhat[l];
    auto& inv_std = tr.inv_std[l];
    auto& act = tr.act[l];
    xhat.resize(z.size());
    act.resize(z.size());
    inv_std.resize(cout);
    const double m = static_cast<double>(n * pos);
    for (int co = 0; co < cout; ++co) {
      double sum = 0.0;
      for (int s = 0; s < n; ++s)
        for (std::size_t p = 0; p < pos; ++p) sum += z[s * out_per + co * pos + p];
      const double mean = sum / m;
      double ss = 0.0;
      for (int s = 0; s < n; ++s)
        for (std::size_t p = 0; p < pos; ++p) {
          const double d = z[s * out_per + co * pos + p] - mean;
          ss += d * d;
        }
      const double var = ss / m;
      inv_std[co] = 1.0 / std::sqrt(var + kBnEps);
      const double gamma = params_[bn_gamma(l) + co], beta = params_[bn_beta(l) + co];
      for (int s = 0; s < n; ++s)
        for (std::size_t p = 0; p < pos; ++p) {
          const std::size_t i = s * out_per + co * pos + p;
          xhat[i] = (z[i] - mean) * inv_std[co];
          act[i] = std::max(0.0, gamma * xhat[i] + beta);
        }
      if (update_running_stats) {
        const double unbiased = m > 1.0 ? ss / (m - 1.0) : var;
        double& rm = buffers_[running_mean(l) + co];
        double& rv = buffers_[running_var(l) + co];
        rm = (1.0 - kBnMomentum) * rm + kBnMomentum * mean;
        rv = (1.0 - kBnMomentum) * rv + kBnMomentum * unbiased;
      }
    }
    x = act;
  }

  const std::size_t features = flat_features();
  tr.q.resize(static_cast<std::size_t>(n) * actions_);
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < actions_; ++a)
      tr.q[s * actions_ + a] =
          params_[fc_bias() + a] +
          kernels::dot(std::span<const double>(params_.data() + fc_weight() + a * features, features),
                       std::span<const double>(x.data() + s * features, features));

  double loss = 0.0;
  std::vector<double> dq(tr.q.size(), 0.0);
  for (int s = 0; s < n; ++s) {
    const double err = tr.q[s * actions_ + batch.actions[s]] - batch.targets[s];
    loss += err * err;
    dq[s * actions_ + batch.actions[s]] = 2.0 * err / n;
  }
  loss /= n;
  if (!grad) return loss;

  grad->assign(params_.size(), 0.0);
  std::vector<double>& g = *grad;

  // Fully connected layer.
  std::vector<double> dh(static_cast<std::size_t>(n) * features, 0.0);
  for (int s = 0; s < n; ++s)
    for (int a = 0; a < actions_; ++a) {
      const double d = dq[s * actions_ + a];
      if (d == 0.0) continue;
      kernels::axpy(d, std::span<const double>(x.data() + s * features, features),
                    std::span<double>(g.data() + fc_weight() + a * features, features));
      g[fc_bias() + a] += d;
      kernels::axpy(d, std::span<const double>(params_.data() + fc_weight() + a * features, features),
                    std::span<double>(dh.data() + s * features, features));
    }

  std::vector<double> dact = std::move(dh);
  for (int l = kConvLayers - 1; l >= 0; --l) {
    const int cin = kChannels[l], cout = kChannels[l + 1];
    const std::size_t pos = volume(dims_[l + 1]);
    const std::size_t patch = static_cast<std::size_t>(cin) * kTaps;
    const std::size_t in_per = static_cast<std::size_t>(cin) * volume(dims_[l]);
    const std::size_t out_per = static_cast<std::size_t>(cout) * pos;
    const double m = static_cast<double>(n * pos);

    // ReLU then batch norm.
    std::vector<double> dz(dact.size());
    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] = tr.act[l][i] > 0.0 ? dact[i] : 0.0;
    for (int co = 0; co < cout; ++co) {
      double dbeta = 0.0, dgamma = 0.0;
      for (int s = 0; s < n; ++s)
        for (std::size_t p = 0; p < pos; ++p) {
          const std::size_t i = s * out_per + co * pos + p;
          dbeta += dz[i];
          dgamma += dz[i] * tr.xhat[l][i];
        }
      g[bn_gamma(l) + co] += dgamma;
      g[bn_beta(l) + co] += dbeta;
      const double k = params_[bn_gamma(l) + co] * tr.inv_std[l][co] / m;
      for (int s = 0; s < n; ++s)
        for (std::size_t p = 0; p < pos; ++p) {
          const std::size_t i = s * out_per + co * pos + p;
          dz[i] = k * (m * dz[i] - dbeta - tr.xhat[l][i] * dgamma);
        }
    }

    // Convolution.
    std::vector<double> dcols(l > 0 ? n * pos * patch : 0, 0.0);
    for (int s = 0; s < n; ++s)
      for (int co = 0; co < cout; ++co) {
        const std::span<double> dw(g.data() + conv_weight(l) + co * patch, patch);
        const std::span<const double> w(params_.data() + conv_weight(l) + co * patch, patch);
        for (std::size_t p = 0; p < pos; ++p) {
          const double d = dz[s * out_per + co * pos + p];
          if (d == 0.0) continue;
          kernels::axpy(d, std::span<const double>(tr.cols[l].data() + (s * pos + p) * patch, patch), dw);
          if (l > 0) kernels::axpy(d, w, std::span<double>(dcols.data() + (s * pos + p) * patch, patch));
        }
      }
    if (l == 0) break;
    dact.assign(n * in_per, 0.0);
    for (int s = 0; s < n; ++s)
      col2im_add(dcols.data() + s * pos * patch, cin, dims_[l], dims_[l + 1], dact.data() + s * in_per);
  }
  return loss;
}

void QNetwork::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json m;
  m["format_version"] = 1;
  m["input_dims"] = {dims_[0].x, dims_[0].y, dims_[0].z};
  m["action_count"] = actions_;
  m["params_file"] = "params.raw";  // float64 little-endian
  m["buffers_file"] = "buffers.raw";
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : blocks_) blocks.push_back({{"name", b.name}, {"offset", b.offset}, {"count", b.count}});
  m["blocks"] = blocks;
  rawio::write_f64(dir / "params.raw", params_);
  rawio::write_f64(dir / "buffers.raw", buffers_);
  rawio::write_json(dir / "manifest.json", m);
}

QNetwork QNetwork::load(const std::filesystem::path& dir) {
  const auto m = nlohmann::json::parse(rawio::read_text(dir / "manifest.json"));
  if (m.at("format_version").get<int>() != 1) throw std::runtime_error("QNetwork: unsupported weights format");
  const auto d = m.at("input_dims").get<std::array<int, 3>>();
  QNetwork net({d[0], d[1], d[2]}, m.at("action_count").get<int>(), 0);
  const auto params = rawio::read_f64(dir / m.at("params_file").get<std::string>());
  const auto buffers = rawio::read_f64(dir / m.at("buffers_file").get<std::string>());
  if (params.size() != net.params_.size() || buffers.size() != net.buffers_.size())
    throw std::runtime_error("QNetwork: weight payload does not match the architecture");
  net.params_.assign(params.begin(), params.end());
  net.buffers_.assign(buffers.begin(), buffers.end());
  return net;
}

void AdamOptimizer::step(std::span<double> params, std::span<const double> grad) {
  if (grad.size() != params.size()) throw std::invalid_argument("Adam: gradient size mismatch");
  if (m_.empty()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

}  // namespace beamplan
