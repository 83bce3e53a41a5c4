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


#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "mata/training.hpp"

namespace mata::eval {
namespace {

struct Fixture {
  data::SampleTable pair;
  data::SampleTable first;
  data::FoldSplit split;
};

Fixture small_problem(std::size_t per_class = 16, std::size_t dim = 16) {
  data::SyntheticSpec spec;
  spec.samples_per_class = per_class;
  spec.dim1 = spec.dim2 = dim;
  auto [a, b] = data::synthesize_pair(spec);
  Fixture f{data::make_table(a, b, data::align_pair(a, b)), {}, {}};
  f.first = f.pair.single(0);
  f.split = data::stratified_kfold(f.pair.labels, 4, 3);
  return f;
}

ModelSpec small_spec(Variant v, std::size_t dim = 16) {
  ModelSpec s;
  s.variant = v;
  s.dim1 = s.dim2 = dim;
  s.num_classes = 4;
  return s;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = i;
  return r;
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.validation_fraction = 0.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c.early_stopping = false;
  EXPECT_NO_THROW(c.validate());
  c = {};
  c.patience = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.dropout_rate = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(EarlyStopper, IncreasingLossStopsAfterPatience) {
  EarlyStopper s(8);
  std::size_t stopped = 0;
  for (std::size_t epoch = 1; epoch <= 50 && !stopped; ++epoch)
    if (s.update(epoch, static_cast<double>(epoch))) stopped = epoch;
  EXPECT_EQ(stopped, 9u);
  EXPECT_EQ(s.best_epoch(), 1u);
}

TEST(EarlyStopper, TiesAreNotImprovements) {
  EarlyStopper s(2);
  EXPECT_FALSE(s.update(1, 1.0));
  EXPECT_TRUE(s.improved());
  EXPECT_FALSE(s.update(2, 1.0));
  EXPECT_FALSE(s.improved());
  EXPECT_TRUE(s.update(3, 1.0));
  EXPECT_EQ(s.best_epoch(), 1u);
}

TEST(EarlyStopper, ImprovementResetsPatience) {
  EarlyStopper s(2);
  s.update(1, 3.0);
  s.update(2, 4.0);
  EXPECT_FALSE(s.update(3, 2.0));
  EXPECT_FALSE(s.update(4, 5.0));
  EXPECT_TRUE(s.update(5, 5.0));
  EXPECT_EQ(s.best_epoch(), 3u);
  EXPECT_DOUBLE_EQ(s.best_loss(), 2.0);
}

TEST(SplitValidation, StratifiedAndDisjoint) {
  auto f = small_problem(20);
  auto rows = all_rows(f.pair.size());
  auto [train, val] = split_validation(f.pair, rows, 0.15, RandomSource(1, "v"));
  EXPECT_EQ(train.size() + val.size(), rows.size());
  std::vector<int> per_class(4, 0);
  for (std::size_t r : val) ++per_class[f.pair.labels[r]];
  for (int c : per_class) EXPECT_EQ(c, 3);  // round(20 * 0.15)
  std::set<std::size_t> t(train.begin(), train.end());
  for (std::size_t r : val) EXPECT_FALSE(t.count(r));
}

TEST(TrainFold, RestoredWeightsHaveBestValidationLoss) {
  auto f = small_problem();
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.patience = 3;
  cfg.validation_fraction = 0.25;
  cfg.learning_rate = 1e-2;
  for (Variant v : {Variant::Individual, Variant::MATA}) {
    const auto& table = v == Variant::Individual ? f.first : f.pair;
    auto out = train_fold(small_spec(v), table, all_rows(table.size()), cfg, RandomSource(5, "fold"));
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    for (const auto& e : out.curves)
      if (e.val_loss < best) {
        best = e.val_loss;
        best_epoch = e.epoch;
      }
    EXPECT_EQ(out.best_epoch, best_epoch);
    EXPECT_EQ(evaluate(*out.model, table, out.val_rows, cfg.batch_size).loss, best);
    if (out.curves.size() < cfg.epochs) {
      EXPECT_EQ(out.curves.size(), out.best_epoch + cfg.patience);
    }
  }
}

TEST(TrainFold, SameSeedGivesIdenticalCurves) {
  auto f = small_problem();
  TrainConfig cfg;
  cfg.epochs = 6;
  for (Variant v : {Variant::ConcatFusion, Variant::OTFusion}) {
    auto a = train_fold(small_spec(v), f.pair, all_rows(f.pair.size()), cfg, RandomSource(2, "fold"));
    auto b = train_fold(small_spec(v), f.pair, all_rows(f.pair.size()), cfg, RandomSource(2, "fold"));
    ASSERT_EQ(a.curves.size(), b.curves.size());
    for (std::size_t i = 0; i < a.curves.size(); ++i) {
      EXPECT_EQ(a.curves[i].train_loss, b.curves[i].train_loss);
      EXPECT_EQ(a.curves[i].val_loss, b.curves[i].val_loss);
    }
    EXPECT_EQ(a.model->snapshot(), b.model->snapshot());
    auto c = train_fold(small_spec(v), f.pair, all_rows(f.pair.size()), cfg, RandomSource(3, "fold"));
    EXPECT_NE(a.curves.front().train_loss, c.curves.front().train_loss);
  }
}

TEST(TrainFold, OverfitsTinySet) {
  auto f = small_problem(16);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.early_stopping = false;
  const auto rows = all_rows(f.first.size());
  std::size_t reached = 0;
  auto hook = [&](const EpochStats& st, Model<float>& m) {
    auto ev = evaluate(m, f.first, rows, cfg.batch_size);
    if (compute_metrics(f.first.labels, ev.predictions, 4).accuracy == 1.0) {
      reached = st.epoch;
      return false;
    }
    return true;
  };
  // Individual on one modality alone cannot separate the merged pair in
  // general, but 64 points in 16 dims are still linearly shatterable.
  auto out = train_fold(small_spec(Variant::Individual), f.first, rows, cfg, RandomSource(4, "fold"), hook);
  EXPECT_GT(reached, 0u);
  EXPECT_TRUE(std::isnan(out.curves.front().val_loss));
}

TEST(TrainFold, NonFiniteInputAbortsWithDiagnostics) {
  auto f = small_problem();
  f.first.x1(3, 2) = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.early_stopping = false;
  try {
    train_fold(small_spec(Variant::Individual), f.first, all_rows(f.first.size()), cfg, RandomSource(1, "x"));
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos) << e.what();
  }
}

TEST(TrainFold, FusionNeedsPair) {
  auto f = small_problem();
  EXPECT_THROW(train_fold(small_spec(Variant::MATA), f.first, {0, 1}, {}, RandomSource(1, "x")), DataError);
  EXPECT_THROW(train_fold(small_spec(Variant::Individual), f.first, {}, {}, RandomSource(1, "x")), DataError);
}

RunPlan plan(const char* name, Variant v, const data::SampleTable& t) {
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.seed = 9;
  return {name, small_spec(v), cfg, &t, {}};
}

TEST(RunExperiment, EverySampleTestedOnceAndMeansAreAverages) {
  auto f = small_problem();
  auto r = run_experiment(plan("mata", Variant::MATA, f.pair), f.split);
  ASSERT_EQ(r.folds.size(), 4u);
  std::multiset<std::string> tested;
  double acc = 0, f1 = 0;
  for (const auto& fold : r.folds) {
    tested.insert(fold.test_ids.begin(), fold.test_ids.end());
    acc += fold.metrics.accuracy;
    f1 += fold.metrics.macro_f1;
    EXPECT_EQ(fold.train_ids.size() + fold.val_ids.size() + fold.test_ids.size(), f.pair.size());
  }
  EXPECT_EQ(tested, std::multiset<std::string>(f.pair.ids.begin(), f.pair.ids.end()));
  EXPECT_DOUBLE_EQ(r.mean_accuracy, acc / 4);
  EXPECT_DOUBLE_EQ(r.mean_macro_f1, f1 / 4);
  EXPECT_NO_THROW(audit_leakage(r));
}

TEST(RunExperiment, LeakageAuditCatchesOverlap) {
  auto f = small_problem();
  auto r = run_experiment(plan("ind", Variant::Individual, f.first), f.split);
  r.folds[1].train_ids.push_back(r.folds[1].test_ids.front());
  EXPECT_THROW(audit_leakage(r), TrainingError);
}

bool same_results(const std::vector<RunResult>& a, const std::vector<RunResult>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t r = 0; r < a.size(); ++r) {
    if (a[r].mean_accuracy != b[r].mean_accuracy || a[r].mean_macro_f1 != b[r].mean_macro_f1) return false;
    for (std::size_t f = 0; f < a[r].folds.size(); ++f) {
      const auto &x = a[r].folds[f], &y = b[r].folds[f];
      if (!(x.metrics == y.metrics) || x.predictions != y.predictions || x.best_epoch != y.best_epoch) return false;
      for (std::size_t e = 0; e < x.curves.size(); ++e)
        if (x.curves[e].train_loss != y.curves[e].train_loss || x.curves[e].val_loss != y.curves[e].val_loss)
          return false;
    }
  }
  return true;
}

TEST(RunExperiment, ParallelMatchesSerial) {
  auto f = small_problem();
  std::vector<RunPlan> plans = {plan("ind", Variant::Individual, f.first), plan("ot", Variant::OTFusion, f.pair)};
  auto serial = run_experiments(plans, f.split, 1);
  auto parallel = run_experiments(plans, f.split, 3);
  EXPECT_TRUE(same_results(serial, parallel));
}

TEST(RunExperiment, FoldFailuresNameTheFold) {
  auto f = small_problem();
  f.first.x1(f.split.folds[2].front(), 0) = std::numeric_limits<float>::infinity();
  try {
    run_experiment(plan("ind", Variant::Individual, f.first), f.split);
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("run 'ind' fold 0"), std::string::npos) << e.what();
  }
}

TEST(RunExperiment, EmptyPlanListIsConfigError) {
  auto f = small_problem();
  EXPECT_THROW(run_experiments({}, f.split), ConfigError);
}

TEST(ParallelFor, RethrowsLowestFailingIndex) {
  std::vector<int> hit(10, 0);
  try {
    parallel_for(10, 4, [&](std::size_t i) {
      hit[i] = 1;
      if (i == 3 || i == 7) throw DataError("task " + std::to_string(i));
    });
    FAIL();
  } catch (const DataError& e) {
    EXPECT_STREQ(e.what(), "task 3");
  }
  for (int h : hit) EXPECT_EQ(h, 1);
}

}  // namespace
}  // namespace mata::eval
