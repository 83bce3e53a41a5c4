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
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "mata/dataset.hpp"
#include "mata/layers.hpp"
#include "mata/metrics.hpp"
#include "mata/models.hpp"

namespace mata::eval {

struct TrainConfig {
  std::size_t epochs = 50;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t patience = 8;
  double validation_fraction = 0.15;
  double dropout_rate = 0.3;
  std::uint64_t seed = 0;
  /// When false there is no validation carve-out and every epoch runs.
  bool early_stopping = true;

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learningRate must be > 0");
    if (batch_size < 1) throw ConfigError("train: batchSize must be >= 1");
    if (early_stopping) {
      if (patience < 1) throw ConfigError("train: earlyStopPatience must be >= 1");
      if (!(validation_fraction > 0.0 && validation_fraction < 0.5))
        throw ConfigError("train: validationFraction must be in (0, 0.5)");
    }
    nn::validate(nn::DropoutSpec{dropout_rate});
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  /// NaN when there is no validation subset.
  double val_loss = std::numeric_limits<double>::quiet_NaN();
};

/// Tracks the best validation loss; `update` returns true when training
/// should stop after this epoch.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  bool update(std::size_t epoch, double loss) {
    if (loss < best_loss_) {
      best_loss_ = loss;
      best_epoch_ = epoch;
      stale_ = 0;
      improved_ = true;
    } else {
      ++stale_;
      improved_ = false;
    }
    return stale_ >= patience_;
  }

  bool improved() const { return improved_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  std::size_t patience_;
  std::size_t stale_ = 0;
  std::size_t best_epoch_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
  bool improved_ = false;
};

/// Rows of `table` at `rows`, as a model batch.
inline Batch<float> gather(const data::SampleTable& table, std::span<const std::size_t> rows) {
  Batch<float> b;
  auto take = [&](const Tensor<float>& x) {
    const std::size_t d = x.dim(1);
    Tensor<float> out({rows.size(), d});
    for (std::size_t i = 0; i < rows.size(); ++i)
      std::copy_n(x.data() + rows[i] * d, d, out.data() + i * d);
    return out;
  };
  b.x1 = take(table.x1);
  if (table.paired()) {
    b.x2 = take(table.x2);
    for (std::size_t r : rows) b.ids1.push_back(table.ids[r]);
    b.ids2 = b.ids1;
  }
  return b;
}

inline std::vector<int> gather_labels(const data::SampleTable& table, std::span<const std::size_t> rows) {
  std::vector<int> out;
  for (std::size_t r : rows) out.push_back(table.labels[r]);
  return out;
}

struct Evaluation {
  double loss = 0.0;
  std::vector<int> predictions;
};

/// Eval-mode pass over `rows` in order, in consecutive batches of
/// `batch_size` (the last one partial). Loss is the per-sample mean.
inline Evaluation evaluate(Model<float>& model, const data::SampleTable& table, const std::vector<std::size_t>& rows,
                           std::size_t batch_size) {
  Evaluation ev;
  double total = 0.0;
  for (std::size_t start = 0; start < rows.size(); start += batch_size) {
    const std::span<const std::size_t> chunk(rows.data() + start, std::min(batch_size, rows.size() - start));
    const auto labels = gather_labels(table, chunk);
    Tape<float> tp;
    Var logits = model.forward(tp, gather(table, chunk), nn::Mode::Eval);
    total += static_cast<double>(tp.value(ops::cross_entropy(tp, logits, labels))[0]) * static_cast<double>(chunk.size());
    const Tensor<float>& z = tp.value(logits);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const float* row = z.data() + i * z.dim(1);
      ev.predictions.push_back(static_cast<int>(std::max_element(row, row + z.dim(1)) - row));
    }
  }
  ev.loss = rows.empty() ? 0.0 : total / static_cast<double>(rows.size());
  return ev;
}

/// Stratified carve-out: per class, a seeded shuffle then the first
/// round(n_c * fraction) members go to validation.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(
    const data::SampleTable& table, const std::vector<std::size_t>& rows, double fraction, RandomSource rng) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t r : rows) by_class[table.labels[r]].push_back(r);
  std::vector<std::size_t> train, val;
  for (auto& [label, members] : by_class) {
    rng.shuffle(members);
    const auto n_val = static_cast<std::size_t>(std::lround(static_cast<double>(members.size()) * fraction));
    val.insert(val.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
    train.insert(train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

struct FoldTraining {
  std::unique_ptr<Model<float>> model;
  std::vector<EpochStats> curves;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> val_rows;
  /// 1-based epoch whose weights were kept.
  std::size_t best_epoch = 0;
};

/// Called after each epoch; returning false ends training early.
using EpochHook = std::function<bool(const EpochStats&, Model<float>&)>;

/// Trains one model on `rows` of `table`. `stream` seeds the validation
/// carve-out, batch shuffling and dropout masks.
inline FoldTraining train_fold(const ModelSpec& spec, const data::SampleTable& table,
                               const std::vector<std::size_t>& rows, const TrainConfig& cfg,
                               const RandomSource& stream, const EpochHook& hook = {},
                               ot::SolveLog* solve_log = nullptr) {
  cfg.validate();
  if (rows.empty()) throw DataError("train_fold: empty training set");
  if (is_fusion(spec.variant) && !table.paired()) throw DataError("train_fold: fusion model needs an aligned pair");
  FoldTraining out;
  if (cfg.early_stopping) {
    std::tie(out.train_rows, out.val_rows) =
        split_validation(table, rows, cfg.validation_fraction, stream.derive("validation"));
    if (out.val_rows.empty() || out.train_rows.empty())
      throw DataError("train_fold: training set too small for a validation carve-out");
  } else {
    out.train_rows = rows;
  }
  ModelSpec s = spec;
  s.dropout_rate = cfg.dropout_rate;
  out.model = std::make_unique<Model<float>>(s);
  Model<float>& model = *out.model;
  model.solve_log = solve_log;
  auto params = model.parameters();
  nn::AdamState<float> adam({cfg.learning_rate});
  RandomSource shuffle = stream.derive("shuffle");
  RandomSource dropout = stream.derive("dropout");
  EarlyStopper stopper(cfg.patience);
  std::vector<Tensor<float>> best;
  std::vector<std::size_t> order = out.train_rows;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> chunk(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      const auto labels = gather_labels(table, chunk);
      Tape<float> tp;
      zero_grads(std::span<Parameter<float>* const>(params));
      try {
        Var loss = ops::cross_entropy(tp, model.forward(tp, gather(table, chunk), nn::Mode::Train, &dropout), labels);
        tp.backward(loss);
        total += static_cast<double>(tp.value(loss)[0]) * static_cast<double>(chunk.size());
      } catch (const NumericError& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + " batch " + std::to_string(start / cfg.batch_size) +
                            ": " + e.what());
      }
      nn::adam_step(std::span<Parameter<float>* const>(params), adam);
      for (auto* p : params)
        if (!p->value.all_finite())
          throw TrainingError("epoch " + std::to_string(epoch) + ": parameter " + p->name + " became non-finite");
    }
    EpochStats st{epoch, total / static_cast<double>(order.size())};
    bool stop = false;
    if (cfg.early_stopping) {
      try {
        st.val_loss = evaluate(model, table, out.val_rows, cfg.batch_size).loss;
      } catch (const NumericError& e) {
        throw TrainingError("epoch " + std::to_string(epoch) + " validation: " + e.what());
      }
      if (!std::isfinite(st.val_loss))
        throw TrainingError("epoch " + std::to_string(epoch) + ": non-finite validation loss");
      stop = stopper.update(epoch, st.val_loss);
      if (stopper.improved()) best = model.snapshot();
    }
    out.curves.push_back(st);
    if (hook && !hook(st, model)) break;
    if (stop) break;
  }
  if (cfg.early_stopping) {
    model.restore(best);
    out.best_epoch = stopper.best_epoch();
  } else {
    out.best_epoch = out.curves.size();
  }
  return out;
}

struct FoldResult {
  /// The exact spec the fold's model was built from (derived init seed).
  ModelSpec spec;
  Metrics metrics;
  std::vector<EpochStats> curves;
  std::vector<std::string> test_ids;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<int> predictions;
  std::size_t best_epoch = 0;
  /// Final weights, in Model::parameters() order (empty unless kept).
  std::vector<Tensor<float>> weights;
};

struct RunResult {
  std::string name;
  ModelSpec spec;
  TrainConfig train;
  std::vector<std::string> sources;
  std::vector<std::string> label_names;
  std::vector<FoldResult> folds;
  double mean_accuracy = 0.0;
  double mean_macro_f1 = 0.0;
  double wall_seconds = 0.0;
};

/// One variant to run on a shared split.
struct RunPlan {
  std::string name;
  ModelSpec spec;
  TrainConfig train;
  const data::SampleTable* table = nullptr;
  std::vector<std::string> sources;
  bool keep_weights = false;
  /// Receives one line per Sinkhorn solve when set.
  ot::SolveLog* solve_log = nullptr;
};

/// Runs fn(0..n-1) on up to `workers` threads. Every task runs; the
/// exception of the lowest failing index is rethrown.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto guarded = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) guarded(i);
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

namespace detail {

/// Rethrows the active exception with `prefix` prepended, keeping its category.
[[noreturn]] inline void rethrow_annotated(std::exception_ptr e, const std::string& prefix) {
  try {
    std::rethrow_exception(e);
  } catch (const ConfigError& x) {
    throw ConfigError(prefix + x.what());
  } catch (const DataError& x) {
    throw DataError(prefix + x.what());
  } catch (const FormatError& x) {
    throw FormatError(prefix + x.what());
  } catch (const DimensionError& x) {
    throw DimensionError(prefix + x.what());
  } catch (const Error& x) {
    throw TrainingError(prefix + x.what());
  } catch (const std::exception& x) {
    throw TrainingError(prefix + x.what());
  }
}

}  // namespace detail

/// Throws TrainingError if any fold's test ids reached its training or
/// validation subset.
inline void audit_leakage(const RunResult& r) {
  for (std::size_t f = 0; f < r.folds.size(); ++f) {
    const auto& fold = r.folds[f];
    std::set<std::string> seen(fold.train_ids.begin(), fold.train_ids.end());
    seen.insert(fold.val_ids.begin(), fold.val_ids.end());
    for (const auto& id : fold.test_ids)
      if (seen.count(id))
        throw TrainingError("run '" + r.name + "' fold " + std::to_string(f) + ": test sample '" + id +
                            "' leaked into training");
  }
}

/// Trains and tests every plan on every fold of `split` (fold i is the
/// test set, the remaining folds train). Jobs are independent, so the
/// results do not depend on `workers`.
inline std::vector<RunResult> run_experiments(const std::vector<RunPlan>& plans, const data::FoldSplit& split,
                                              std::size_t workers = 1) {
  if (plans.empty()) throw ConfigError("run_experiments: no variants to run");
  const std::size_t k = split.folds.size();
  std::vector<RunResult> results(plans.size());
  std::vector<double> seconds(plans.size() * k, 0.0);
  for (std::size_t r = 0; r < plans.size(); ++r) {
    const auto& p = plans[r];
    if (!p.table) throw ConfigError("run '" + p.name + "': no data");
    p.train.validate();
    results[r] = {p.name, p.spec, p.train, p.sources, p.table->label_names, std::vector<FoldResult>(k)};
  }

  parallel_for(plans.size() * k, workers, [&](std::size_t job) {
    const std::size_t r = job / k, f = job % k;
    const RunPlan& plan = plans[r];
    const auto t0 = std::chrono::steady_clock::now();
    try {
      std::vector<std::size_t> train_rows;
      for (std::size_t g = 0; g < k; ++g)
        if (g != f) train_rows.insert(train_rows.end(), split.folds[g].begin(), split.folds[g].end());
      std::sort(train_rows.begin(), train_rows.end());
      const RandomSource stream = RandomSource(plan.train.seed, "fold" + std::to_string(f));
      ModelSpec spec = plan.spec;
      spec.seed = stream.derive("init").next_u64();
      FoldTraining trained = train_fold(spec, *plan.table, train_rows, plan.train, stream, {}, plan.solve_log);
      const auto& test_rows = split.folds[f];
      Evaluation ev = evaluate(*trained.model, *plan.table, test_rows, plan.train.batch_size);
      FoldResult& out = results[r].folds[f];
      out.spec = trained.model->spec();
      out.metrics = compute_metrics(gather_labels(*plan.table, test_rows), ev.predictions, plan.table->num_classes());
      out.curves = std::move(trained.curves);
      out.predictions = std::move(ev.predictions);
      out.best_epoch = trained.best_epoch;
      for (std::size_t i : test_rows) out.test_ids.push_back(plan.table->ids[i]);
      for (std::size_t i : trained.train_rows) out.train_ids.push_back(plan.table->ids[i]);
      for (std::size_t i : trained.val_rows) out.val_ids.push_back(plan.table->ids[i]);
      if (plan.keep_weights) out.weights = trained.model->snapshot();
    } catch (...) {
      detail::rethrow_annotated(std::current_exception(),
                                "run '" + plan.name + "' fold " + std::to_string(f) + ": ");
    }
    seconds[job] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  });

  for (std::size_t r = 0; r < plans.size(); ++r) {
    auto& res = results[r];
    for (std::size_t f = 0; f < k; ++f) {
      res.mean_accuracy += res.folds[f].metrics.accuracy;
      res.mean_macro_f1 += res.folds[f].metrics.macro_f1;
      res.wall_seconds += seconds[r * k + f];
    }
    res.mean_accuracy /= static_cast<double>(k);
    res.mean_macro_f1 /= static_cast<double>(k);
    audit_leakage(res);
  }
  return results;
}

inline RunResult run_experiment(const RunPlan& plan, const data::FoldSplit& split, std::size_t workers = 1) {
  return run_experiments({plan}, split, workers).front();
}

}  // namespace mata::eval
