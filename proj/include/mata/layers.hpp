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

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mata/autodiff.hpp"
#include "mata/error.hpp"
#include "mata/random.hpp"
#include "mata/tensor.hpp"

namespace mata::nn {

enum class Mode { Train, Eval };

enum class Activation { None, ReLU };

struct Conv1DSpec {
  std::size_t filters = 1;
  std::size_t kernel_size = 3;
};

struct MaxPool1DSpec {
  std::size_t window = 2;
};

struct DenseSpec {
  std::size_t units = 1;
  Activation activation = Activation::None;
};

struct DropoutSpec {
  double rate = 0.0;
};

struct MultiHeadAttentionSpec {
  std::size_t heads = 8;
  std::size_t model_dim = 120;
};

using LayerSpec = std::variant<Conv1DSpec, MaxPool1DSpec, DenseSpec, DropoutSpec, MultiHeadAttentionSpec>;

inline void validate(const Conv1DSpec& s) {
  if (s.filters < 1) throw ConfigError("conv1d: filters must be >= 1");
  if (s.kernel_size % 2 == 0) throw ConfigError("conv1d: kernel size must be odd");
}
inline void validate(const MaxPool1DSpec& s) {
  if (s.window < 1) throw ConfigError("maxpool1d: window must be >= 1");
}
inline void validate(const DenseSpec& s) {
  if (s.units < 1) throw ConfigError("dense: units must be >= 1");
}
inline void validate(const DropoutSpec& s) {
  if (!(s.rate >= 0.0 && s.rate < 1.0)) throw ConfigError("dropout: rate must be in [0, 1)");
}
inline void validate(const MultiHeadAttentionSpec& s) {
  if (s.heads < 1) throw ConfigError("attention: heads must be >= 1");
  if (s.model_dim % s.heads != 0) throw ConfigError("attention: model dim must be divisible by heads");
}
inline void validate(const LayerSpec& s) {
  std::visit([](const auto& v) { validate(v); }, s);
}

enum class Init { KaimingUniform, LeCunUniform, XavierUniform };

/// Uniform initialisation; `fan_out` only matters for Xavier.
template <typename T>
Tensor<T> init_uniform(Shape shape, Init kind, std::size_t fan_in, std::size_t fan_out, RandomSource rng) {
  double bound = 0.0;
  switch (kind) {
    case Init::KaimingUniform:
      bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      break;
    case Init::LeCunUniform:
      bound = std::sqrt(3.0 / static_cast<double>(fan_in));
      break;
    case Init::XavierUniform:
      bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      break;
  }
  Tensor<T> t(std::move(shape));
  for (T& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

/// Same-padded 1-D convolution over [B x L x Cin].
template <typename T>
class Conv1D {
 public:
  Conv1D(const std::string& name, std::size_t in_channels, Conv1DSpec spec, const RandomSource& rng)
      : spec_((validate(spec), spec)),
        kernel(name + ".kernel",
               init_uniform<T>({spec.kernel_size, in_channels, spec.filters}, Init::KaimingUniform,
                               spec.kernel_size * in_channels, spec.filters, rng.derive(name + ".kernel"))),
        bias(name + ".bias", Tensor<T>({spec.filters})) {}

  Var forward(Tape<T>& tp, Var x) { return ops::conv1d(tp, x, tp.parameter(kernel), tp.parameter(bias)); }

  std::vector<Parameter<T>*> parameters() { return {&kernel, &bias}; }
  const Conv1DSpec& spec() const { return spec_; }

 private:
  Conv1DSpec spec_;

 public:
  Parameter<T> kernel;
  Parameter<T> bias;
};

/// Fully connected layer on [B x in].
template <typename T>
class Dense {
 public:
  Dense(const std::string& name, std::size_t in, DenseSpec spec, const RandomSource& rng,
        Init init = Init::KaimingUniform)
      : spec_((validate(spec), spec)),
        weight(name + ".weight", init_uniform<T>({in, spec.units}, init, in, spec.units, rng.derive(name + ".weight"))),
        bias(name + ".bias", Tensor<T>({spec.units})) {}

  Var forward(Tape<T>& tp, Var x) {
    Var y = ops::affine(tp, x, tp.parameter(weight), tp.parameter(bias));
    return spec_.activation == Activation::ReLU ? ops::relu(tp, y) : y;
  }

  std::vector<Parameter<T>*> parameters() { return {&weight, &bias}; }
  const DenseSpec& spec() const { return spec_; }

 private:
  DenseSpec spec_;

 public:
  Parameter<T> weight;
  Parameter<T> bias;
};

template <typename T>
Var maxpool1d(Tape<T>& tp, Var x, const MaxPool1DSpec& spec) {
  return ops::maxpool1d(tp, x, spec.window);
}

template <typename T>
Var dropout(Tape<T>& tp, Var x, const DropoutSpec& spec, Mode mode, RandomSource& rng) {
  return ops::dropout(tp, x, spec.rate, mode == Mode::Train, rng);
}

/// Self-attention over token rows: input [(B*tokens) x D], output the same.
/// Q, K, V and the output projection are D x D affine maps.
template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention(const std::string& name, MultiHeadAttentionSpec spec, const RandomSource& rng)
      : spec_((validate(spec), spec)),
        query(name + ".query", spec.model_dim, {spec.model_dim, Activation::None}, rng, Init::XavierUniform),
        key(name + ".key", spec.model_dim, {spec.model_dim, Activation::None}, rng, Init::XavierUniform),
        value(name + ".value", spec.model_dim, {spec.model_dim, Activation::None}, rng, Init::XavierUniform),
        output(name + ".output", spec.model_dim, {spec.model_dim, Activation::None}, rng, Init::XavierUniform) {}

  Var forward(Tape<T>& tp, Var x, std::size_t tokens) {
    Var q = query.forward(tp, x);
    Var k = key.forward(tp, x);
    Var v = value.forward(tp, x);
    Var heads = ops::attention(tp, q, k, v, tokens, spec_.heads, &last_weights);
    return output.forward(tp, heads);
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (Dense<T>* d : {&query, &key, &value, &output})
      for (auto* p : d->parameters()) out.push_back(p);
    return out;
  }

  const MultiHeadAttentionSpec& spec() const { return spec_; }

 private:
  MultiHeadAttentionSpec spec_;

 public:
  Dense<T> query;
  Dense<T> key;
  Dense<T> value;
  Dense<T> output;
  /// [B x heads x tokens x tokens] from the most recent forward.
  Tensor<T> last_weights;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  explicit AdamState(AdamConfig c = {}) : config(c) {}

  AdamConfig config;
  long step = 0;
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
};

/// One bias-corrected Adam update. Gradients are read, not cleared.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state) {
  if (state.first_moment.empty()) {
    for (auto* p : params) {
      state.first_moment.emplace_back(p->value.shape());
      state.second_moment.emplace_back(p->value.shape());
    }
  }
  if (state.first_moment.size() != params.size())
    throw ConfigError("adam: parameter list changed between steps");
  ++state.step;
  const AdamConfig& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T lr = static_cast<T>(c.learning_rate), eps = static_cast<T>(c.epsilon);
  const T inv_bc1 = static_cast<T>(1.0 / bc1), inv_bc2 = static_cast<T>(1.0 / bc2);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<T>& p = *params[k];
    Tensor<T>& m = state.first_moment[k];
    Tensor<T>& v = state.second_moment[k];
    if (m.shape() != p.value.shape()) throw DimensionError("adam: moment shape mismatch for " + p.name);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const T g = p.grad[i];
      m[i] = b1 * m[i] + (T{1} - b1) * g;
      v[i] = b2 * v[i] + (T{1} - b2) * g * g;
      const T mhat = m[i] * inv_bc1;
      const T vhat = v[i] * inv_bc2;
      p.value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace mata::nn
