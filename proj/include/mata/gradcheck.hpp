// Copyright 2026  The mata-fusion Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mata/autodiff.hpp"
#include "mata/error.hpp"
#include "mata/random.hpp"

namespace mata {

struct GradCheckOptions {
  double step = 1e-5;
  /// Upper bound on coordinates probed; larger parameter sets are sampled.
  std::size_t max_coordinates = 10000;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates_checked = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Builds a scalar loss on a fresh tape from the current parameter values.
using LossBuilder = std::function<Var(Tape<double>&)>;

/// Compares the tape's gradient with central differences,
/// |analytic - numeric| / max(1, |analytic|, |numeric|), maximised over the
/// probed coordinates. Runs in double precision only.
inline GradCheckResult gradient_check(const LossBuilder& loss, std::span<Parameter<double>* const> params,
                                      RandomSource& rng, GradCheckOptions opts = {}) {
  Tape<double> tape;
  auto evaluate = [&]() {
    tape.clear();
    Var out = loss(tape);
    const double v = tape.value(out)[0];
    if (!std::isfinite(v)) throw NumericError("gradient check aborted: loss is not finite");
    return std::pair{out, v};
  };

  zero_grads(params);
  auto [root, base] = evaluate();
  (void)base;
  tape.backward(root);

  struct Coord {
    std::size_t param;
    std::size_t index;
  };
  std::vector<Coord> coords;
  std::size_t total = 0;
  for (auto* p : params) total += p->value.size();
  if (total <= opts.max_coordinates) {
    for (std::size_t k = 0; k < params.size(); ++k)
      for (std::size_t i = 0; i < params[k]->value.size(); ++i) coords.push_back({k, i});
  } else {
    for (std::size_t n = 0; n < opts.max_coordinates; ++n) {
      std::size_t flat = static_cast<std::size_t>(rng.below(total));
      std::size_t k = 0;
      while (flat >= params[k]->value.size()) flat -= params[k++]->value.size();
      coords.push_back({k, flat});
    }
  }

  GradCheckResult result;
  for (const Coord& c : coords) {
    Parameter<double>& p = *params[c.param];
    const double saved = p.value[c.index];
    p.value[c.index] = saved + opts.step;
    const double up = evaluate().second;
    p.value[c.index] = saved - opts.step;
    const double down = evaluate().second;
    p.value[c.index] = saved;
    const double numeric = (up - down) / (2.0 * opts.step);
    const double analytic = p.grad[c.index];
    const double err =
        std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
    ++result.coordinates_checked;
    if (err >= result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_parameter = p.name;
      result.worst_index = c.index;
      result.worst_analytic = analytic;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

}  // namespace mata
