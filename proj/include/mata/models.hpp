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

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mata/autodiff.hpp"
#include "mata/error.hpp"
#include "mata/layers.hpp"
#include "mata/ot.hpp"
#include "mata/random.hpp"
#include "mata/tensor.hpp"

namespace mata {

/// The four downstream architectures.
enum class Variant { Individual, ConcatFusion, OTFusion, MATA };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Individual:
      return "individual";
    case Variant::ConcatFusion:
      return "concat";
    case Variant::OTFusion:
      return "ot";
    case Variant::MATA:
      return "mata";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::Individual, Variant::ConcatFusion, Variant::OTFusion, Variant::MATA})
    if (s == variant_name(v)) return v;
  throw ConfigError("unknown model variant '" + s + "' (expected individual|concat|ot|mata)");
}

inline bool is_fusion(Variant v) { return v != Variant::Individual; }
inline bool uses_transport(Variant v) { return v == Variant::OTFusion || v == Variant::MATA; }

/// Fixed layer sizes of the architectures.
namespace arch {
inline constexpr std::size_t kernel_size = 3;
inline constexpr std::size_t pool_window = 2;
inline constexpr std::size_t individual_filters1 = 64;
inline constexpr std::size_t individual_filters2 = 128;
inline constexpr std::size_t branch_filters1 = 32;
inline constexpr std::size_t branch_filters2 = 64;
inline constexpr std::size_t projection_dim = 120;
inline constexpr std::size_t attention_heads = 8;
inline constexpr std::size_t hidden_units = 128;
/// Segments of the transport fusion: u12, x1, x2, u21, x2, x1.
inline constexpr std::size_t transport_tokens = 6;
inline constexpr std::size_t concat_tokens = 2;

/// Sequence length after the two conv/pool blocks.
inline std::size_t pooled_length(std::size_t dim) { return dim / pool_window / pool_window; }
}  // namespace arch

struct ModelSpec {
  Variant variant = Variant::MATA;
  std::size_t dim1 = 768;
  /// Second embedding width; ignored by Individual.
  std::size_t dim2 = 768;
  std::size_t num_classes = 2;
  ot::SinkhornConfig sinkhorn;
  double dropout_rate = 0.3;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
    if (arch::pooled_length(dim1) < 1 || (is_fusion(variant) && arch::pooled_length(dim2) < 1))
      throw ConfigError("model: embedding dims must be >= 4");
    nn::validate(nn::DropoutSpec{dropout_rate});
    if (uses_transport(variant)) sinkhorn.validate();
  }

  friend bool operator==(const ModelSpec& a, const ModelSpec& b) {
    return a.variant == b.variant && a.dim1 == b.dim1 && (!is_fusion(a.variant) || a.dim2 == b.dim2) &&
           a.num_classes == b.num_classes && a.dropout_rate == b.dropout_rate && a.seed == b.seed &&
           a.sinkhorn.epsilon == b.sinkhorn.epsilon && a.sinkhorn.max_iterations == b.sinkhorn.max_iterations &&
           a.sinkhorn.tolerance == b.sinkhorn.tolerance && a.sinkhorn.log_domain == b.sinkhorn.log_domain;
  }
};

/// A mini-batch. Fusion models take index-aligned rows of `x1` and `x2`;
/// when both id lists are present they must agree position by position.
template <typename T>
struct Batch {
  Tensor<T> x1;
  Tensor<T> x2;
  std::vector<std::string> ids1;
  std::vector<std::string> ids2;
};

template <typename T>
class Model {
 public:
  explicit Model(ModelSpec spec) : spec_((spec.validate(), spec)) {
    const RandomSource init(spec_.seed, "init");
    if (spec_.variant == Variant::Individual) {
      branch1_.emplace("individual", spec_.dim1, arch::individual_filters1, arch::individual_filters2, 0, init);
      head_in_ = arch::pooled_length(spec_.dim1) * arch::individual_filters2;
    } else {
      branch1_.emplace("branch1", spec_.dim1, arch::branch_filters1, arch::branch_filters2, arch::projection_dim,
                       init);
      branch2_.emplace("branch2", spec_.dim2, arch::branch_filters1, arch::branch_filters2, arch::projection_dim,
                       init);
      head_in_ = arch::projection_dim * tokens();
      if (spec_.variant != Variant::OTFusion)
        attention_.emplace("attention", nn::MultiHeadAttentionSpec{arch::attention_heads, arch::projection_dim},
                           init);
    }
    hidden_.emplace("head.hidden", head_in_, nn::DenseSpec{arch::hidden_units, nn::Activation::ReLU}, init);
    output_.emplace("head.output", arch::hidden_units, nn::DenseSpec{spec_.num_classes, nn::Activation::None}, init,
                    nn::Init::LeCunUniform);
  }

  // Parameters are referenced by address from tapes; keep instances put.
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelSpec& spec() const { return spec_; }

  /// Token count seen by attention (0 when the variant has no attention).
  std::size_t tokens() const {
    switch (spec_.variant) {
      case Variant::ConcatFusion:
        return arch::concat_tokens;
      case Variant::OTFusion:
      case Variant::MATA:
        return arch::transport_tokens;
      default:
        return 0;
    }
  }

  /// Width of the features entering the classifier head.
  std::size_t head_width() const { return head_in_; }

  /// Pre-head features: flattened conv output (Individual) or the
  /// concatenated fusion segments, before attention.
  Var features(Tape<T>& tp, const Batch<T>& batch) {
    check_batch(batch);
    Var f1 = branch1_->forward(tp, tp.constant(batch.x1));
    if (spec_.variant == Variant::Individual) return f1;
    Var f2 = branch2_->forward(tp, tp.constant(batch.x2));
    if (spec_.variant == Variant::ConcatFusion) return ops::concat_last(tp, {f1, f2});

    ot::CostMatrix<T> cost = ot::cost_matrix(tp.value(f1), tp.value(f2));
    if (pinned_plan) {
      if (pinned_plan->gamma.shape() != cost.values.shape())
        throw DimensionError("pinned transport plan does not match batch");
      last_plan = *pinned_plan;
    } else {
      last_plan = ot::sinkhorn(cost, spec_.sinkhorn);
      if (solve_log) solve_log->append(spec_.sinkhorn, *last_plan);
    }
    Var u12 = ot::transport(tp, *last_plan, f2);
    Var u21 = ot::transport_reverse(tp, *last_plan, f1);
    return ops::concat_last(tp, {u12, f1, f2, u21, f2, f1});
  }

  /// Logits [B x num_classes]. Train mode draws dropout masks from `rng`.
  Var forward(Tape<T>& tp, const Batch<T>& batch, nn::Mode mode, RandomSource* rng = nullptr) {
    Var h = features(tp, batch);
    if (attention_) {
      const std::size_t b = tp.value(h).dim(0);
      Var tok = ops::reshape(tp, h, {b * tokens(), arch::projection_dim});
      Var att = attention_->forward(tp, tok, tokens());
      h = ops::reshape(tp, att, {b, head_in_});
    }
    h = hidden_->forward(tp, h);
    if (mode == nn::Mode::Train && spec_.dropout_rate > 0.0) {
      if (!rng) throw ConfigError("train-mode forward needs a dropout random source");
      h = ops::dropout(tp, h, spec_.dropout_rate, true, *rng);
    }
    return output_->forward(tp, h);
  }

  /// Softmax probabilities in eval mode.
  Tensor<T> predict_proba(const Batch<T>& batch) {
    Tape<T> tp;
    return ops::softmax_rows(tp.value(forward(tp, batch, nn::Mode::Eval)));
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    auto add = [&out](std::vector<Parameter<T>*> ps) { out.insert(out.end(), ps.begin(), ps.end()); };
    add(branch1_->parameters());
    if (branch2_) add(branch2_->parameters());
    if (attention_) add(attention_->parameters());
    add(hidden_->parameters());
    add(output_->parameters());
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->value.size();
    return n;
  }

  /// Layers in parameter declaration order, for checkpoint headers.
  std::vector<std::pair<std::string, nn::LayerSpec>> layer_specs() const {
    std::vector<std::pair<std::string, nn::LayerSpec>> out;
    branch1_->describe(out);
    if (branch2_) branch2_->describe(out);
    if (attention_) out.emplace_back("attention", attention_->spec());
    out.emplace_back("head.hidden", hidden_->spec());
    out.emplace_back("head.dropout", nn::DropoutSpec{spec_.dropout_rate});
    out.emplace_back("head.output", output_->spec());
    return out;
  }

  std::vector<Tensor<T>> snapshot() {
    std::vector<Tensor<T>> out;
    for (auto* p : parameters()) out.push_back(p->value);
    return out;
  }

  void restore(const std::vector<Tensor<T>>& values) {
    auto ps = parameters();
    if (values.size() != ps.size()) throw DimensionError("restore: parameter count mismatch");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (values[i].shape() != ps[i]->value.shape())
        throw DimensionError("restore: shape mismatch for " + ps[i]->name);
      ps[i]->value = values[i];
    }
  }

  nn::MultiHeadAttention<T>* attention() { return attention_ ? &*attention_ : nullptr; }

  /// When set, used instead of solving Sinkhorn (the plan is a constant of
  /// the forward pass; pinning it makes the whole pass a fixed function).
  std::optional<ot::TransportPlan<T>> pinned_plan;
  /// Plan used by the most recent transport-fusion forward.
  std::optional<ot::TransportPlan<T>> last_plan;
  /// Optional per-solve diagnostics sink.
  ot::SolveLog* solve_log = nullptr;

 private:
  /// conv/ReLU/pool x2, flatten, optional linear projection.
  class Branch {
   public:
    Branch(const std::string& name, std::size_t dim, std::size_t f1, std::size_t f2, std::size_t proj,
           const RandomSource& rng)
        : name_(name),
          dim_(dim),
          conv1_(name + ".conv1", 1, {f1, arch::kernel_size}, rng),
          conv2_(name + ".conv2", f1, {f2, arch::kernel_size}, rng) {
      if (proj)
        proj_.emplace(name + ".projection", arch::pooled_length(dim) * f2, nn::DenseSpec{proj, nn::Activation::None},
                      rng, nn::Init::LeCunUniform);
    }

    Var forward(Tape<T>& tp, Var x) {
      const std::size_t b = tp.value(x).dim(0);
      Var h = ops::reshape(tp, x, {b, dim_, 1});
      h = ops::maxpool1d(tp, ops::relu(tp, conv1_.forward(tp, h)), arch::pool_window);
      h = ops::maxpool1d(tp, ops::relu(tp, conv2_.forward(tp, h)), arch::pool_window);
      h = ops::reshape(tp, h, {b, tp.value(h).size() / b});
      return proj_ ? proj_->forward(tp, h) : h;
    }

    std::vector<Parameter<T>*> parameters() {
      std::vector<Parameter<T>*> out = conv1_.parameters();
      for (auto* p : conv2_.parameters()) out.push_back(p);
      if (proj_)
        for (auto* p : proj_->parameters()) out.push_back(p);
      return out;
    }

    void describe(std::vector<std::pair<std::string, nn::LayerSpec>>& out) const {
      out.emplace_back(name_ + ".conv1", conv1_.spec());
      out.emplace_back(name_ + ".pool1", nn::MaxPool1DSpec{arch::pool_window});
      out.emplace_back(name_ + ".conv2", conv2_.spec());
      out.emplace_back(name_ + ".pool2", nn::MaxPool1DSpec{arch::pool_window});
      if (proj_) out.emplace_back(name_ + ".projection", proj_->spec());
    }

   private:
    std::string name_;
    std::size_t dim_;
    nn::Conv1D<T> conv1_;
    nn::Conv1D<T> conv2_;
    std::optional<nn::Dense<T>> proj_;
  };

  void check_batch(const Batch<T>& batch) const {
    if (batch.x1.rank() != 2 || batch.x1.dim(1) != spec_.dim1)
      throw DimensionError("batch x1 " + shape_string(batch.x1.shape()) + " does not match dim " +
                           std::to_string(spec_.dim1));
    if (!is_fusion(spec_.variant)) return;
    if (batch.x2.rank() != 2 || batch.x2.dim(1) != spec_.dim2 || batch.x2.dim(0) != batch.x1.dim(0))
      throw DimensionError("batch x2 " + shape_string(batch.x2.shape()) + " does not pair with x1 " +
                           shape_string(batch.x1.shape()));
    if (!batch.ids1.empty() || !batch.ids2.empty()) {
      if (batch.ids1 != batch.ids2) throw DataError("misaligned pair batch: sample ids differ between sources");
    }
  }

  ModelSpec spec_;
  std::size_t head_in_ = 0;
  std::optional<Branch> branch1_;
  std::optional<Branch> branch2_;
  std::optional<nn::MultiHeadAttention<T>> attention_;
  std::optional<nn::Dense<T>> hidden_;
  std::optional<nn::Dense<T>> output_;
};

template <typename T>
Model<T> build_individual(const ModelSpec& spec) {
  if (spec.variant != Variant::Individual) throw ConfigError("build_individual: spec is not individual");
  return Model<T>(spec);
}

template <typename T>
Model<T> build_concat_fusion(const ModelSpec& spec) {
  if (spec.variant != Variant::ConcatFusion) throw ConfigError("build_concat_fusion: spec is not concat");
  return Model<T>(spec);
}

template <typename T>
Model<T> build_ot_fusion(const ModelSpec& spec) {
  if (spec.variant != Variant::OTFusion) throw ConfigError("build_ot_fusion: spec is not ot");
  return Model<T>(spec);
}

template <typename T>
Model<T> build_mata(const ModelSpec& spec) {
  if (spec.variant != Variant::MATA) throw ConfigError("build_mata: spec is not mata");
  return Model<T>(spec);
}

}  // namespace mata
