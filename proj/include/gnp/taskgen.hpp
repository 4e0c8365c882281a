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
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gnp/gp.hpp"
#include "gnp/kernels.hpp"
#include "gnp/rng.hpp"

namespace gnp {

enum class GeneratorKind { eq, matern52, weakly_periodic, sawtooth, mixture };

inline std::string_view to_string(GeneratorKind k) {
  switch (k) {
    case GeneratorKind::eq: return "eq";
    case GeneratorKind::matern52: return "matern52";
    case GeneratorKind::weakly_periodic: return "weakly_periodic";
    case GeneratorKind::sawtooth: return "sawtooth";
    case GeneratorKind::mixture: return "mixture";
  }
  return "?";
}

inline GeneratorKind generator_kind_from_string(std::string_view s) {
  if (s == "eq") return GeneratorKind::eq;
  if (s == "matern52") return GeneratorKind::matern52;
  if (s == "weakly_periodic") return GeneratorKind::weakly_periodic;
  if (s == "sawtooth") return GeneratorKind::sawtooth;
  if (s == "mixture") return GeneratorKind::mixture;
  throw std::invalid_argument("unknown generator kind '" + std::string(s) + "'");
}

/// Sawtooth functions y = amplitude * frac(direction * freq * x + phase) with
/// freq ~ U[freq_min, freq_max], phase ~ U[0, 1], direction = +-1.
struct SawtoothSpec {
  double freq_min = 3.0;
  double freq_max = 5.0;
  double amplitude = 1.0;

  bool operator==(const SawtoothSpec&) const = default;
};

struct SawtoothLatents {
  double freq = 1.0;
  double phase = 0.0;
  double direction = 1.0;
};

struct GeneratorSpec {
  GeneratorKind kind = GeneratorKind::eq;
  KernelSpec kernel = KernelSpec::eq();
  SawtoothSpec sawtooth;
  double noise_std = 0.05;
  std::vector<GeneratorSpec> components;

  static GeneratorSpec gp(KernelKind k, double noise_std = 0.05) {
    GeneratorSpec g;
    g.kind = k == KernelKind::eq         ? GeneratorKind::eq
             : k == KernelKind::matern52 ? GeneratorKind::matern52
                                         : GeneratorKind::weakly_periodic;
    g.kernel = KernelSpec::defaults(k);
    g.noise_std = noise_std;
    return g;
  }

  static GeneratorSpec make_sawtooth(double noise_std = 0.05) {
    GeneratorSpec g;
    g.kind = GeneratorKind::sawtooth;
    g.noise_std = noise_std;
    return g;
  }

  /// EQ, Matern-5/2, weakly periodic and sawtooth with equal probability.
  static GeneratorSpec make_mixture(double noise_std = 0.05) {
    GeneratorSpec g;
    g.kind = GeneratorKind::mixture;
    g.noise_std = noise_std;
    g.components = {gp(KernelKind::eq, noise_std), gp(KernelKind::matern52, noise_std),
                    gp(KernelKind::weakly_periodic, noise_std), make_sawtooth(noise_std)};
    return g;
  }

  static GeneratorSpec defaults(GeneratorKind k) {
    switch (k) {
      case GeneratorKind::eq: return gp(KernelKind::eq);
      case GeneratorKind::matern52: return gp(KernelKind::matern52);
      case GeneratorKind::weakly_periodic: return gp(KernelKind::weakly_periodic);
      case GeneratorKind::sawtooth: return make_sawtooth();
      case GeneratorKind::mixture: return make_mixture();
    }
    return gp(KernelKind::eq);
  }

  bool is_gp() const noexcept {
    return kind == GeneratorKind::eq || kind == GeneratorKind::matern52 ||
           kind == GeneratorKind::weakly_periodic;
  }

  double noise_var() const noexcept { return noise_std * noise_std; }

  void validate() const {
    if (!(noise_std > 0.0)) throw std::invalid_argument("generator: noise_std must be > 0");
    if (is_gp()) kernel.validate();
    if (kind == GeneratorKind::sawtooth &&
        !(sawtooth.freq_min > 0.0 && sawtooth.freq_max >= sawtooth.freq_min)) {
      throw std::invalid_argument("generator: invalid sawtooth frequency range");
    }
    if (kind == GeneratorKind::mixture) {
      if (components.empty()) throw std::invalid_argument("generator: mixture without components");
      for (const auto& c : components) {
        if (c.kind == GeneratorKind::mixture) {
          throw std::invalid_argument("generator: nested mixtures are not supported");
        }
        c.validate();
      }
    }
  }

  bool operator==(const GeneratorSpec&) const = default;
};

struct Interval {
  double lo = -2.0;
  double hi = 2.0;

  double width() const noexcept { return hi - lo; }
  bool contains(double x) const noexcept { return x >= lo && x <= hi; }
  bool operator==(const Interval&) const = default;
};

enum class SplitKind { interp_in_range, interp_beyond_range, extrapolation };

inline std::string_view to_string(SplitKind k) {
  switch (k) {
    case SplitKind::interp_in_range: return "interp_in_range";
    case SplitKind::interp_beyond_range: return "interp_beyond_range";
    case SplitKind::extrapolation: return "extrapolation";
  }
  return "?";
}

inline SplitKind split_kind_from_string(std::string_view s) {
  if (s == "interp_in_range") return SplitKind::interp_in_range;
  if (s == "interp_beyond_range") return SplitKind::interp_beyond_range;
  if (s == "extrapolation") return SplitKind::extrapolation;
  throw std::invalid_argument("unknown split kind '" + std::string(s) + "'");
}

/// Input intervals for the context and target roles of a split.
struct SplitSpec {
  SplitKind kind = SplitKind::interp_in_range;
  Interval context;
  Interval target;

  /// Training range [lo, hi]; beyond-range interpolation shifts both roles by
  /// `shift`; extrapolation puts targets in [hi, hi + (hi - lo) / 2].
  static SplitSpec make(SplitKind kind, Interval train = {-2.0, 2.0}, double shift = 4.0) {
    SplitSpec s{kind, train, train};
    if (kind == SplitKind::interp_beyond_range) {
      s.context = {train.lo + shift, train.hi + shift};
      s.target = s.context;
    } else if (kind == SplitKind::extrapolation) {
      s.target = {train.hi, train.hi + 0.5 * train.width()};
    }
    return s;
  }

  void validate() const {
    if (!(context.lo < context.hi) || !(target.lo < target.hi)) {
      throw std::invalid_argument("split: intervals must satisfy lo < hi");
    }
    if (kind == SplitKind::extrapolation &&
        !(target.lo >= context.hi || target.hi <= context.lo)) {
      throw std::invalid_argument("split: extrapolation target interval overlaps the context");
    }
  }

  bool operator==(const SplitSpec&) const = default;
};

/// Context size ~ U{context_min, ..., context_max}; fixed target count.
struct EpisodeSizes {
  std::size_t context_min = 0;
  std::size_t context_max = 10;
  std::size_t targets = 16;

  void validate() const {
    if (context_max < context_min) throw std::invalid_argument("sizes: context_max < context_min");
    if (targets == 0) throw std::invalid_argument("sizes: targets must be >= 1");
  }

  bool operator==(const EpisodeSizes&) const = default;
};

struct Episode {
  Dataset context;
  Dataset target;
  SplitKind split = SplitKind::interp_in_range;
  GeneratorKind source = GeneratorKind::eq;  // component that produced the data
};

inline std::vector<double> sawtooth_eval(const SawtoothSpec& spec, std::span<const double> x,
                                         const SawtoothLatents& z) {
  if (!(z.freq > 0.0)) throw std::invalid_argument("sawtooth: frequency must be > 0");
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double u = z.direction * z.freq * x[i] + z.phase;
    y[i] = spec.amplitude * (u - std::floor(u));
  }
  return y;
}

inline SawtoothLatents draw_sawtooth_latents(const SawtoothSpec& spec, Rng& rng) {
  std::uniform_real_distribution<double> freq(spec.freq_min, spec.freq_max);
  std::uniform_real_distribution<double> phase(0.0, 1.0);
  std::bernoulli_distribution flip(0.5);
  SawtoothLatents z;
  z.freq = freq(rng);
  z.phase = phase(rng);
  z.direction = flip(rng) ? -1.0 : 1.0;
  return z;
}

/// Uniform choice of a mixture component; non-mixtures return themselves.
inline const GeneratorSpec& mixture_draw(const GeneratorSpec& gen, Rng& rng) {
  if (gen.kind != GeneratorKind::mixture) return gen;
  std::uniform_int_distribution<std::size_t> pick(0, gen.components.size() - 1);
  return gen.components[pick(rng)];
}

namespace detail {

inline std::vector<double> uniform_inputs(const Interval& iv, std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(iv.lo, iv.hi);
  std::vector<double> x(n);
  for (auto& v : x) v = u(rng);
  return x;
}

}  // namespace detail

/// Draws one episode: inputs uniform on the split's intervals, outputs from a
/// single function draw (shared by context and target) plus N(0, noise_std^2).
inline Episode sample_episode(const GeneratorSpec& gen, const SplitSpec& split,
                              const EpisodeSizes& sizes, Rng& rng) {
  const GeneratorSpec& g = mixture_draw(gen, rng);
  std::uniform_int_distribution<std::size_t> nc_dist(sizes.context_min, sizes.context_max);
  const std::size_t nc = nc_dist(rng);
  Episode ep;
  ep.split = split.kind;
  ep.source = g.kind;
  ep.context.x = detail::uniform_inputs(split.context, nc, rng);
  ep.target.x = detail::uniform_inputs(split.target, sizes.targets, rng);

  std::vector<double> all = ep.context.x;
  all.insert(all.end(), ep.target.x.begin(), ep.target.x.end());
  std::vector<double> y;
  if (g.is_gp()) {
    y = gp_sample(g.kernel, all, g.noise_var(), rng);
  } else {
    y = sawtooth_eval(g.sawtooth, all, draw_sawtooth_latents(g.sawtooth, rng));
    std::normal_distribution<double> noise(0.0, g.noise_std);
    for (auto& v : y) v += noise(rng);
  }
  ep.context.y.assign(y.begin(), y.begin() + static_cast<long>(nc));
  ep.target.y.assign(y.begin() + static_cast<long>(nc), y.end());
  return ep;
}

enum class OracleMode { full, diag };

/// Exact predictive for noisy observations of a GP generator: posterior plus
/// noise_var on the diagonal; diag mode drops the correlations. Non-GP
/// generators have no tractable oracle and yield nullopt.
inline std::optional<GaussianFDD> oracle_predict(const GeneratorSpec& gen, const Dataset& context,
                                                 std::span<const double> targets,
                                                 OracleMode mode) {
  if (!gen.is_gp()) return std::nullopt;
  GaussianFDD out = gp_posterior(gen.kernel, context, gen.noise_var(), targets);
  out.cov.diagonal().array() += gen.noise_var();
  if (mode == OracleMode::diag) {
    const Vector d = out.cov.diagonal();
    out.cov = d.asDiagonal();
  }
  return out;
}

// JSON

inline void to_json(nlohmann::json& j, const SawtoothSpec& s) {
  j = {{"freq_min", s.freq_min}, {"freq_max", s.freq_max}, {"amplitude", s.amplitude}};
}

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::string_view where,
                           std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw std::invalid_argument(std::string(where) + ": object expected");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw std::invalid_argument(std::string(where) + ": unknown key '" + key + "'");
  }
}

}  // namespace detail

inline void from_json(const nlohmann::json& j, SawtoothSpec& s) {
  detail::reject_unknown(j, "sawtooth", {"freq_min", "freq_max", "amplitude"});
  s = SawtoothSpec{};
  if (j.contains("freq_min")) s.freq_min = j.at("freq_min").get<double>();
  if (j.contains("freq_max")) s.freq_max = j.at("freq_max").get<double>();
  if (j.contains("amplitude")) s.amplitude = j.at("amplitude").get<double>();
}

inline void to_json(nlohmann::json& j, const GeneratorSpec& g) {
  j = {{"kind", std::string(to_string(g.kind))}, {"noise_std", g.noise_std}};
  if (g.is_gp()) j["kernel"] = g.kernel;
  if (g.kind == GeneratorKind::sawtooth) j["sawtooth"] = g.sawtooth;
  if (g.kind == GeneratorKind::mixture) j["components"] = g.components;
}

inline void from_json(const nlohmann::json& j, GeneratorSpec& g) {
  detail::reject_unknown(j, "generator", {"kind", "noise_std", "kernel", "sawtooth", "components"});
  g = GeneratorSpec::defaults(generator_kind_from_string(j.at("kind").get<std::string>()));
  if (j.contains("noise_std")) {
    g.noise_std = j.at("noise_std").get<double>();
    for (auto& c : g.components) c.noise_std = g.noise_std;
  }
  if (j.contains("kernel")) {
    if (!g.is_gp()) throw std::invalid_argument("generator: kernel given for non-GP generator");
    g.kernel = j.at("kernel").get<KernelSpec>();
    if (to_string(g.kernel.kind) != to_string(g.kind)) {
      throw std::invalid_argument("generator: kernel kind does not match generator kind");
    }
  }
  if (j.contains("sawtooth")) g.sawtooth = j.at("sawtooth").get<SawtoothSpec>();
  if (j.contains("components")) {
    if (g.kind != GeneratorKind::mixture) {
      throw std::invalid_argument("generator: components given for non-mixture generator");
    }
    g.components = j.at("components").get<std::vector<GeneratorSpec>>();
  }
  g.validate();
}

inline void to_json(nlohmann::json& j, const SplitSpec& s) {
  j = {{"kind", std::string(to_string(s.kind))},
       {"context", {s.context.lo, s.context.hi}},
       {"target", {s.target.lo, s.target.hi}}};
}

inline void from_json(const nlohmann::json& j, SplitSpec& s) {
  detail::reject_unknown(j, "split", {"kind", "context", "target"});
  s = SplitSpec::make(split_kind_from_string(j.at("kind").get<std::string>()));
  auto interval = [](const nlohmann::json& v) {
    if (!v.is_array() || v.size() != 2) {
      throw std::invalid_argument("split: interval must be [lo, hi]");
    }
    return Interval{v[0].get<double>(), v[1].get<double>()};
  };
  if (j.contains("context")) s.context = interval(j.at("context"));
  if (j.contains("target")) s.target = interval(j.at("target"));
  s.validate();
}

inline void to_json(nlohmann::json& j, const EpisodeSizes& s) {
  j = {{"context_min", s.context_min}, {"context_max", s.context_max}, {"targets", s.targets}};
}

inline void from_json(const nlohmann::json& j, EpisodeSizes& s) {
  detail::reject_unknown(j, "episodes", {"context_min", "context_max", "targets"});
  s = EpisodeSizes{};
  if (j.contains("context_min")) s.context_min = j.at("context_min").get<std::size_t>();
  if (j.contains("context_max")) s.context_max = j.at("context_max").get<std::size_t>();
  if (j.contains("targets")) s.targets = j.at("targets").get<std::size_t>();
  s.validate();
}

inline void to_json(nlohmann::json& j, const Episode& e) {
  j = {{"split", std::string(to_string(e.split))},
       {"source", std::string(to_string(e.source))},
       {"context", {{"x", e.context.x}, {"y", e.context.y}}},
       {"target", {{"x", e.target.x}, {"y", e.target.y}}}};
}

/// One JSON object per line.
inline void write_episode_corpus(std::ostream& os, std::span<const Episode> episodes) {
  for (const auto& e : episodes) os << nlohmann::json(e).dump() << '\n';
}

}  // namespace gnp
