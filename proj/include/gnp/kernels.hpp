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
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

#include "gnp/linalg.hpp"

namespace gnp {

enum class KernelKind { eq, matern52, weakly_periodic };

inline std::string_view to_string(KernelKind k) {
  switch (k) {
    case KernelKind::eq: return "eq";
    case KernelKind::matern52: return "matern52";
    case KernelKind::weakly_periodic: return "weakly_periodic";
  }
  return "?";
}

inline KernelKind kernel_kind_from_string(std::string_view s) {
  if (s == "eq") return KernelKind::eq;
  if (s == "matern52") return KernelKind::matern52;
  if (s == "weakly_periodic") return KernelKind::weakly_periodic;
  throw std::invalid_argument("unknown kernel kind '" + std::string(s) + "'");
}

/// Stationary unit-variance kernel.
///
/// eq:              exp(-r^2 / (2 l^2))
/// matern52:        (1 + sqrt5 r/l + 5 r^2 / (3 l^2)) exp(-sqrt5 r/l)
/// weakly_periodic: exp(-r^2 / (2 l^2)) exp(-2 sin^2(pi r / period) / lp^2)
struct KernelSpec {
  KernelKind kind = KernelKind::eq;
  double lengthscale = 1.0;
  double period = 1.0;
  double periodic_lengthscale = 1.0;

  static KernelSpec eq(double l = 1.0) { return {KernelKind::eq, l, 1.0, 1.0}; }
  static KernelSpec matern52(double l = 0.5) { return {KernelKind::matern52, l, 1.0, 1.0}; }
  static KernelSpec weakly_periodic(double l = 2.0, double period = 1.0, double lp = 1.0) {
    return {KernelKind::weakly_periodic, l, period, lp};
  }

  /// Defaults per kind: EQ l = 1, Matern l = 0.5, weakly periodic (2, 1, 1).
  static KernelSpec defaults(KernelKind kind) {
    switch (kind) {
      case KernelKind::eq: return eq();
      case KernelKind::matern52: return matern52();
      case KernelKind::weakly_periodic: return weakly_periodic();
    }
    return eq();
  }

  void validate() const {
    if (!(lengthscale > 0.0) || !(period > 0.0) || !(periodic_lengthscale > 0.0) ||
        !std::isfinite(lengthscale) || !std::isfinite(period) ||
        !std::isfinite(periodic_lengthscale)) {
      throw std::invalid_argument("kernel parameters must be positive and finite");
    }
  }

  double operator()(double r) const {
    switch (kind) {
      case KernelKind::eq: return std::exp(-0.5 * r * r / (lengthscale * lengthscale));
      case KernelKind::matern52: {
        const double s = std::sqrt(5.0) * std::abs(r) / lengthscale;
        return (1.0 + s + s * s / 3.0) * std::exp(-s);
      }
      case KernelKind::weakly_periodic: {
        const double sn = std::sin(std::numbers::pi * r / period);
        return std::exp(-0.5 * r * r / (lengthscale * lengthscale)) *
               std::exp(-2.0 * sn * sn / (periodic_lengthscale * periodic_lengthscale));
      }
    }
    return 0.0;
  }

  bool operator==(const KernelSpec&) const = default;
};

/// K[i][j] = k(x1[i] - x2[j]).
inline Matrix kernel_eval(const KernelSpec& spec, std::span<const double> x1,
                          std::span<const double> x2) {
  spec.validate();
  Matrix k(static_cast<Eigen::Index>(x1.size()), static_cast<Eigen::Index>(x2.size()));
  for (std::size_t i = 0; i < x1.size(); ++i)
    for (std::size_t j = 0; j < x2.size(); ++j)
      k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = spec(x1[i] - x2[j]);
  return k;
}

inline void to_json(nlohmann::json& j, const KernelSpec& k) {
  j = nlohmann::json{{"kind", std::string(to_string(k.kind))}, {"lengthscale", k.lengthscale}};
  if (k.kind == KernelKind::weakly_periodic) {
    j["period"] = k.period;
    j["periodic_lengthscale"] = k.periodic_lengthscale;
  }
}

inline void from_json(const nlohmann::json& j, KernelSpec& k) {
  if (!j.is_object()) throw std::invalid_argument("kernel: object expected");
  for (const auto& [key, _] : j.items()) {
    if (key != "kind" && key != "lengthscale" && key != "period" && key != "periodic_lengthscale") {
      throw std::invalid_argument("kernel: unknown key '" + key + "'");
    }
  }
  k = KernelSpec::defaults(kernel_kind_from_string(j.at("kind").get<std::string>()));
  if (j.contains("lengthscale")) k.lengthscale = j.at("lengthscale").get<double>();
  if (j.contains("period")) k.period = j.at("period").get<double>();
  if (j.contains("periodic_lengthscale")) {
    k.periodic_lengthscale = j.at("periodic_lengthscale").get<double>();
  }
  k.validate();
}

}  // namespace gnp
