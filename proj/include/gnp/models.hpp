/*
 * Copyright 2026 The GNP Lab Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gnp/ad_linalg.hpp"
#include "gnp/autodiff.hpp"
#include "gnp/conv.hpp"
#include "gnp/encoding.hpp"
#include "gnp/gp.hpp"
#include "gnp/rng.hpp"

namespace gnp {

/// Mean and covariance of a predictive f.d.d. as tape variables.
struct PredictiveVars {
  Var mean;
  Var cov;
};

struct ForwardOptions {
  // Extra interval the discretization must cover besides the data.
  std::optional<Interval> grid_extent;
  // Zero the identity source channel of the kernel encoding.
  bool zero_source_channel = false;
  // Leave out the homogeneous noise term.
  bool skip_noise = false;
};

/// Stack of "same" convolutions with leaky-ReLU between layers and a linear
/// last layer. Holds parameter indices into the owning model.
struct ConvStack {
  std::size_t first_param = 0;
  std::size_t layers = 0;

  Var apply(std::span<const Var> params, Var x) const {
    for (std::size_t l = 0; l < layers; ++l) {
      const Var& w = params[first_param + 2 * l];
      const Var& b = params[first_param + 2 * l + 1];
      x = ad::conv(x, w, b);
      if (l + 1 < layers) x = ad::pointwise(x, ad::Activation::leaky_relu);
    }
    return x;
  }
};

struct ConvStackSpec {
  std::size_t layers = 6;
  std::size_t channels = 16;
  std::size_t kernel = 5;

  std::size_t receptive_field_nodes() const { return layers * (kernel - 1) + 1; }
  bool operator==(const ConvStackSpec&) const = default;
};

/// Base for models mapping (context, target inputs) to a Gaussian predictive.
class PredictionModel {
 public:
  virtual ~PredictionModel() = default;

  virtual std::string_view kind() const = 0;
  virtual nlohmann::json config_json() const = 0;

  virtual PredictiveVars forward(Tape& tape, std::span<const Var> params, const Dataset& context,
                                 std::span<const double> targets,
                                 const ForwardOptions& opt = {}) const = 0;

  std::vector<Tensor>& parameters() noexcept { return params_; }
  const std::vector<Tensor>& parameters() const noexcept { return params_; }
  const std::vector<std::string>& parameter_names() const noexcept { return names_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  std::vector<Var> bind(Tape& tape, bool requires_grad = true) const {
    std::vector<Var> vars;
    vars.reserve(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      vars.push_back(tape.parameter(params_[i], i, requires_grad));
    }
    return vars;
  }

  /// Evaluation without gradients.
  GaussianFDD predict(const Dataset& context, std::span<const double> targets,
                      const ForwardOptions& opt = {}) const {
    Tape tape;
    const auto vars = bind(tape, false);
    const auto out = forward(tape, vars, context, targets, opt);
    GaussianFDD fdd;
    fdd.x.assign(targets.begin(), targets.end());
    fdd.mean = to_vector(out.mean.value());
    fdd.cov = to_matrix(out.cov.value());
    return fdd;
  }

 protected:
  std::size_t add_parameter(std::string name, Tensor value) {
    names_.push_back(std::move(name));
    params_.push_back(std::move(value));
    return params_.size() - 1;
  }

  ConvStack add_conv_stack(const std::string& prefix, std::size_t spatial_dims,
                           std::size_t in_channels, std::size_t out_channels,
                           const ConvStackSpec& spec, double last_gain, Rng& rng) {
    ConvStack s{params_.size(), spec.layers};
    for (std::size_t l = 0; l < spec.layers; ++l) {
      const std::size_t cin = l == 0 ? in_channels : spec.channels;
      const std::size_t cout = l + 1 == spec.layers ? out_channels : spec.channels;
      Shape ws;
      for (std::size_t d = 0; d < spatial_dims; ++d) ws.push_back(spec.kernel);
      ws.push_back(cin);
      ws.push_back(cout);
      const std::size_t taps = shape_numel(ws) / (cin * cout);
      double bound = std::sqrt(6.0 / static_cast<double>(taps * (cin + cout)));
      if (l + 1 == spec.layers) bound *= last_gain;
      std::uniform_real_distribution<double> u(-bound, bound);
      Tensor w(ws);
      for (auto& v : w.data()) v = u(rng);
      add_parameter(prefix + std::to_string(l) + ".weight", std::move(w));
      add_parameter(prefix + std::to_string(l) + ".bias", Tensor({cout}));
    }
    return s;
  }

  std::vector<Tensor> params_;
  std::vector<std::string> names_;
};

enum class PsdMode { factor_product, nearest_psd };

struct GNPConfig {
  double points_per_unit = 20.0;
  double margin = 0.1;
  ConvStackSpec mean_cnn{6, 16, 5};
  ConvStackSpec kernel_cnn{6, 8, 5};
  double init_lengthscale = 0.1;  // 2 / points_per_unit
  bool tie_decoder = true;
  PsdMode psd_mode = PsdMode::factor_product;
  bool normalise_mean_encoding = true;
  double init_noise_var = 0.05 * 0.05;
  double kernel_output_gain = 1.0;
  double max_receptive_field = 8.0;
  std::uint64_t seed = 0;

  bool operator==(const GNPConfig&) const = default;

  void validate() const {
    if (!(points_per_unit > 0.0) || margin < 0.0 || !(init_lengthscale > 0.0) ||
        !(init_noise_var > 0.0)) {
      throw std::invalid_argument("gnp config: non-positive discretization or initialisation");
    }
    for (const auto* s : {&mean_cnn, &kernel_cnn}) {
      if (s->layers == 0 || s->channels == 0 || s->kernel % 2 == 0) {
        throw std::invalid_argument("gnp config: CNN needs >= 1 layer, >= 1 channel, odd kernel");
      }
      const double rf = static_cast<double>(s->receptive_field_nodes()) / points_per_unit;
      if (rf > max_receptive_field) {
        throw std::invalid_argument("gnp config: receptive field " + std::to_string(rf) +
                                    " exceeds " + std::to_string(max_receptive_field) + " units");
      }
    }
  }
};

/// Gaussian neural process: a 1D ConvDeepSet mean map plus a kernel map that
/// encodes the context as a 3-channel image on the product grid, runs a 2D CNN
/// and decodes the resulting PSD matrix at the targets.
class GNPModel final : public PredictionModel {
 public:
  explicit GNPModel(GNPConfig config = {}) : config_(config) {
    config_.validate();
    Rng rng = make_rng(config_.seed, {0x676e70});
    const double log_l = std::log(config_.init_lengthscale);
    mean_lengthscale_ = add_parameter("mean.log_lengthscale", Tensor::scalar(log_l));
    kernel_lengthscale_ = add_parameter("kernel.log_lengthscale", Tensor::scalar(log_l));
    if (!config_.tie_decoder) {
      decoder_lengthscale_ = add_parameter("kernel.decoder_log_lengthscale", Tensor::scalar(log_l));
    }
    noise_ = add_parameter("noise.raw_variance",
                           Tensor::scalar(ad::softplus_inverse(config_.init_noise_var)));
    mean_cnn_ = add_conv_stack("mean.conv", 1, 2, 1, config_.mean_cnn, 1.0, rng);
    kernel_cnn_ = add_conv_stack("kernel.conv", 2, 3, 1, config_.kernel_cnn,
                                 config_.kernel_output_gain, rng);
  }

  std::string_view kind() const override { return "gnp"; }
  const GNPConfig& config() const noexcept { return config_; }

  nlohmann::json config_json() const override;

  std::pair<Grid1D, Grid2D> grids(const Dataset& context, std::span<const double> targets,
                                  const ForwardOptions& opt = {}) const {
    return build_grids(context, targets, config_.points_per_unit, config_.margin,
                       opt.grid_extent);
  }

  double noise_var() const { return ad::softplus_value(params_[noise_].item()); }

  /// Mean at the targets: encode, normalise, 1D CNN, EQ-bump interpolation.
  Var mean_map(Tape& tape, std::span<const Var> p, const Dataset& context, const Grid1D& grid,
               std::span<const double> targets) const {
    Var ell = ad::exp(p[mean_lengthscale_]);
    Var enc = encode_mean(tape, context, grid, ell);
    if (config_.normalise_mean_encoding) {
      Var data = ad::channel(enc, 0);
      Var density = ad::channel(enc, 1);
      enc = ad::stack_channels({ad::divide(data, density, 1e-8), density});
    }
    Var f = mean_cnn_.apply(p, enc);                        // M x 1
    Var psi = ad::bump_matrix(targets, grid.nodes(), ell);  // T x M
    return ad::reshape(ad::matmul(psi, f), {targets.size()});
  }

  /// Covariance on the grid: CNN(H) F^T F or the nearest-PSD projection of
  /// CNN(H), depending on the configured mode. Returns M x M.
  Var kernel_grid(std::span<const Var> p, const Var& encoding) const {
    const std::size_t m = encoding.shape()[0];
    Var f = ad::reshape(kernel_cnn_.apply(p, encoding), {m, m});
    if (config_.psd_mode == PsdMode::nearest_psd) return ad::psd_project(f);
    return ad::matmul(f, ad::transpose(f));
  }

  /// Kernel map without the noise term: Psi' K Psi'^T at the targets.
  Var kernel_map(std::span<const Var> p, const Var& encoding, const Grid1D& grid,
                 std::span<const double> targets) const {
    const std::size_t m = encoding.shape()[0];
    Var psi = ad::bump_matrix(targets, grid.nodes(), decoder_lengthscale(p));
    if (config_.psd_mode == PsdMode::factor_product) {
      // Psi' F F^T Psi'^T = (Psi' F)(Psi' F)^T
      Var f = ad::reshape(kernel_cnn_.apply(p, encoding), {m, m});
      Var g = ad::matmul(psi, f);
      return ad::matmul(g, ad::transpose(g));
    }
    Var k = kernel_grid(p, encoding);
    return ad::matmul(ad::matmul(psi, k), ad::transpose(psi));
  }

  Var encode(Tape& tape, std::span<const Var> p, const Dataset& context, const Grid2D& grid,
             const ForwardOptions& opt = {}) const {
    return encode_kernel(tape, context, grid, ad::exp(p[kernel_lengthscale_]),
                         !opt.zero_source_channel);
  }

  PredictiveVars forward(Tape& tape, std::span<const Var> p, const Dataset& context,
                         std::span<const double> targets,
                         const ForwardOptions& opt = {}) const override {
    if (targets.empty()) throw std::invalid_argument("gnp forward: no target inputs");
    const auto [g1, g2] = grids(context, targets, opt);
    Var mean = mean_map(tape, p, context, g1, targets);
    Var h = encode(tape, p, context, g2, opt);
    Var cov = kernel_map(p, h, g1, targets);
    if (!opt.skip_noise) cov = ad::add_diag(cov, ad::softplus(p[noise_]));
    return {mean, cov};
  }

 private:
  Var decoder_lengthscale(std::span<const Var> p) const {
    return ad::exp(p[decoder_lengthscale_ ? *decoder_lengthscale_ : kernel_lengthscale_]);
  }

  GNPConfig config_;
  std::size_t mean_lengthscale_ = 0;
  std::size_t kernel_lengthscale_ = 0;
  std::optional<std::size_t> decoder_lengthscale_;
  std::size_t noise_ = 0;
  ConvStack mean_cnn_;
  ConvStack kernel_cnn_;
};

struct ConvCNPConfig {
  double points_per_unit = 20.0;
  double margin = 0.1;
  ConvStackSpec cnn{6, 16, 5};
  double init_lengthscale = 0.1;
  double min_variance = 1e-4;
  std::uint64_t seed = 0;

  bool operator==(const ConvCNPConfig&) const = default;

  void validate() const {
    if (!(points_per_unit > 0.0) || margin < 0.0 || !(init_lengthscale > 0.0) ||
        !(min_variance > 0.0)) {
      throw std::invalid_argument("convcnp config: invalid discretization or initialisation");
    }
    if (cnn.layers == 0 || cnn.channels == 0 || cnn.kernel % 2 == 0) {
      throw std::invalid_argument("convcnp config: CNN needs >= 1 layer, >= 1 channel, odd kernel");
    }
  }
};

/// ConvCNP baseline: the 1D pipeline with a mean head and a variance head;
/// the predictive covariance is diagonal.
class ConvCNPModel final : public PredictionModel {
 public:
  explicit ConvCNPModel(ConvCNPConfig config = {}) : config_(config) {
    config_.validate();
    Rng rng = make_rng(config_.seed, {0x636e70});
    lengthscale_ = add_parameter("log_lengthscale", Tensor::scalar(std::log(config_.init_lengthscale)));
    cnn_ = add_conv_stack("conv", 1, 2, 2, config_.cnn, 1.0, rng);
  }

  std::string_view kind() const override { return "convcnp"; }
  const ConvCNPConfig& config() const noexcept { return config_; }
  nlohmann::json config_json() const override;

  PredictiveVars forward(Tape& tape, std::span<const Var> p, const Dataset& context,
                         std::span<const double> targets,
                         const ForwardOptions& opt = {}) const override {
    if (targets.empty()) throw std::invalid_argument("convcnp forward: no target inputs");
    const auto [grid, unused] = build_grids(context, targets, config_.points_per_unit,
                                            config_.margin, opt.grid_extent);
    (void)unused;
    Var ell = ad::exp(p[lengthscale_]);
    Var enc = encode_mean(tape, context, grid, ell);
    Var data = ad::channel(enc, 0);
    Var density = ad::channel(enc, 1);
    enc = ad::stack_channels({ad::divide(data, density, 1e-8), density});
    Var f = cnn_.apply(p, enc);  // M x 2
    Var psi = ad::bump_matrix(targets, grid.nodes(), ell);
    Var heads = ad::matmul(psi, f);  // T x 2
    Var mean = ad::channel(heads, 0);
    Var floor = tape.constant(Tensor({targets.size()}, config_.min_variance));
    Var var = ad::add(ad::softplus(ad::channel(heads, 1)), floor);
    return {mean, ad::diag_embed(var)};
  }

 private:
  ConvCNPConfig config_;
  std::size_t lengthscale_ = 0;
  ConvStack cnn_;
};

struct PriorCovariance {
  std::vector<double> lags;
  std::vector<double> covariance;
};

/// Prior covariance of a GNP at the given lags, read off the kernel map with
/// an empty context. Each lag is evaluated on the pair {-lag/2, lag/2} with the
/// grid forced to cover `window`, so the pair sits in the interior of a grid
/// of the size seen in training. The noise term is excluded.
inline PriorCovariance extract_prior_covariance(const GNPModel& model, std::span<const double> lags,
                                                Interval window = {-2.0, 2.0}) {
  PriorCovariance out;
  ForwardOptions opt;
  opt.grid_extent = window;
  opt.skip_noise = true;
  for (double lag : lags) {
    const std::vector<double> t{-0.5 * lag, 0.5 * lag};
    const GaussianFDD fdd = model.predict(Dataset{}, t, opt);
    out.lags.push_back(lag);
    out.covariance.push_back(fdd.cov(0, 1));
  }
  return out;
}

// Config JSON

inline void to_json(nlohmann::json& j, const ConvStackSpec& s) {
  j = {{"layers", s.layers}, {"channels", s.channels}, {"kernel", s.kernel}};
}

inline void from_json(const nlohmann::json& j, ConvStackSpec& s) {
  detail::reject_unknown(j, "cnn", {"layers", "channels", "kernel"});
  if (j.contains("layers")) s.layers = j.at("layers").get<std::size_t>();
  if (j.contains("channels")) s.channels = j.at("channels").get<std::size_t>();
  if (j.contains("kernel")) s.kernel = j.at("kernel").get<std::size_t>();
}

inline void to_json(nlohmann::json& j, const GNPConfig& c) {
  j = {{"points_per_unit", c.points_per_unit},
       {"margin", c.margin},
       {"mean_cnn", c.mean_cnn},
       {"kernel_cnn", c.kernel_cnn},
       {"init_lengthscale", c.init_lengthscale},
       {"tie_decoder", c.tie_decoder},
       {"psd_mode", c.psd_mode == PsdMode::factor_product ? "factor_product" : "nearest_psd"},
       {"normalise_mean_encoding", c.normalise_mean_encoding},
       {"init_noise_var", c.init_noise_var},
       {"kernel_output_gain", c.kernel_output_gain},
       {"max_receptive_field", c.max_receptive_field},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, GNPConfig& c) {
  detail::reject_unknown(j, "gnp model",
                         {"kind", "points_per_unit", "margin", "mean_cnn", "kernel_cnn",
                          "init_lengthscale", "tie_decoder", "psd_mode",
                          "normalise_mean_encoding", "init_noise_var", "kernel_output_gain",
                          "max_receptive_field", "seed"});
  c = GNPConfig{};
  if (j.contains("points_per_unit")) c.points_per_unit = j.at("points_per_unit").get<double>();
  if (j.contains("margin")) c.margin = j.at("margin").get<double>();
  if (j.contains("mean_cnn")) j.at("mean_cnn").get_to(c.mean_cnn);
  if (j.contains("kernel_cnn")) j.at("kernel_cnn").get_to(c.kernel_cnn);
  if (j.contains("init_lengthscale")) c.init_lengthscale = j.at("init_lengthscale").get<double>();
  if (j.contains("tie_decoder")) c.tie_decoder = j.at("tie_decoder").get<bool>();
  if (j.contains("psd_mode")) {
    const auto m = j.at("psd_mode").get<std::string>();
    if (m == "factor_product") c.psd_mode = PsdMode::factor_product;
    else if (m == "nearest_psd") c.psd_mode = PsdMode::nearest_psd;
    else throw std::invalid_argument("gnp model: unknown psd_mode '" + m + "'");
  }
  if (j.contains("normalise_mean_encoding")) {
    c.normalise_mean_encoding = j.at("normalise_mean_encoding").get<bool>();
  }
  if (j.contains("init_noise_var")) c.init_noise_var = j.at("init_noise_var").get<double>();
  if (j.contains("kernel_output_gain")) {
    c.kernel_output_gain = j.at("kernel_output_gain").get<double>();
  }
  if (j.contains("max_receptive_field")) {
    c.max_receptive_field = j.at("max_receptive_field").get<double>();
  }
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
}

inline void to_json(nlohmann::json& j, const ConvCNPConfig& c) {
  j = {{"points_per_unit", c.points_per_unit}, {"margin", c.margin},
       {"cnn", c.cnn},                         {"init_lengthscale", c.init_lengthscale},
       {"min_variance", c.min_variance},       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ConvCNPConfig& c) {
  detail::reject_unknown(j, "convcnp model",
                         {"kind", "points_per_unit", "margin", "cnn", "init_lengthscale",
                          "min_variance", "seed"});
  c = ConvCNPConfig{};
  if (j.contains("points_per_unit")) c.points_per_unit = j.at("points_per_unit").get<double>();
  if (j.contains("margin")) c.margin = j.at("margin").get<double>();
  if (j.contains("cnn")) j.at("cnn").get_to(c.cnn);
  if (j.contains("init_lengthscale")) c.init_lengthscale = j.at("init_lengthscale").get<double>();
  if (j.contains("min_variance")) c.min_variance = j.at("min_variance").get<double>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
}

inline nlohmann::json GNPModel::config_json() const {
  nlohmann::json j = config_;
  j["kind"] = "gnp";
  return j;
}

inline nlohmann::json ConvCNPModel::config_json() const {
  nlohmann::json j = config_;
  j["kind"] = "convcnp";
  return j;
}

/// Builds an untrained model from a "model" config section.
inline std::unique_ptr<PredictionModel> make_model(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "gnp") return std::make_unique<GNPModel>(j.get<GNPConfig>());
  if (kind == "convcnp") return std::make_unique<ConvCNPModel>(j.get<ConvCNPConfig>());
  throw std::invalid_argument("unknown model kind '" + kind + "'");
}

}  // namespace gnp
