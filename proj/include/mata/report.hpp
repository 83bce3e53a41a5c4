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

#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mata/serialize.hpp"
#include "mata/training.hpp"

namespace mata::report {

inline const char* regime_name(Variant v) {
  switch (v) {
    case Variant::Individual:
      return "Individual Representations";
    case Variant::ConcatFusion:
      return "Fusion with Concatenation";
    case Variant::OTFusion:
      return "Fusion with OT";
    case Variant::MATA:
      return "Fusion with MATA";
  }
  return "?";
}

/// A [0, 1] fraction as a percentage with two decimals: 0.764705 -> "76.47".
inline std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
  return buf;
}

/// Run names become file-name fragments; anything outside [A-Za-z0-9._-]
/// maps to '_'.
inline std::string file_stem(const std::string& run) {
  std::string out = run;
  for (char& c : out)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-')) c = '_';
  return out;
}

inline Json to_json(const eval::TrainConfig& c) {
  return Json{{"epochs", c.epochs},
              {"learningRate", c.learning_rate},
              {"batchSize", c.batch_size},
              {"earlyStopping", c.early_stopping},
              {"earlyStopPatience", c.patience},
              {"validationFraction", c.validation_fraction},
              {"dropoutRate", c.dropout_rate},
              {"seed", c.seed}};
}

namespace detail {

/// Indices of `runs` grouped by regime, regimes in table order and runs in
/// input order within a regime.
inline std::vector<std::vector<std::size_t>> grouped(const std::vector<eval::RunResult>& runs) {
  std::vector<std::vector<std::size_t>> out;
  for (Variant v : {Variant::Individual, Variant::ConcatFusion, Variant::OTFusion, Variant::MATA}) {
    std::vector<std::size_t> g;
    for (std::size_t i = 0; i < runs.size(); ++i)
      if (runs[i].spec.variant == v) g.push_back(i);
    if (!g.empty()) out.push_back(g);
  }
  return out;
}

}  // namespace detail

/// Table with one row per run, grouped by regime.
inline std::string text(const std::vector<eval::RunResult>& runs) {
  std::size_t width = 24;
  for (const auto& r : runs) width = std::max(width, r.name.size() + 4);
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-*s %9s %9s\n", static_cast<int>(width), "Run", "Accuracy", "F1");
  out << line << std::string(width + 20, '-') << "\n";
  for (const auto& group : detail::grouped(runs)) {
    out << regime_name(runs[group.front()].spec.variant) << "\n";
    for (std::size_t i : group) {
      const auto& r = runs[i];
      std::snprintf(line, sizeof line, "  %-*s %9s %9s\n", static_cast<int>(width - 2), r.name.c_str(),
                    percent(r.mean_accuracy).c_str(), percent(r.mean_macro_f1).c_str());
      out << line;
    }
  }
  if (!runs.empty())
    out << "\nScores in %, mean over " << runs.front().folds.size() << " folds; F1 is macro-averaged.\n";
  return out.str();
}

/// One row per run: run, regime, then accuracy and macro-F1 per fold (percent).
inline std::string csv(const std::vector<eval::RunResult>& runs) {
  std::size_t k = runs.empty() ? 0 : runs.front().folds.size();
  std::ostringstream out;
  out << "run,regime";
  for (std::size_t f = 0; f < k; ++f) out << ",fold" << f << "_accuracy,fold" << f << "_f1";
  out << "\n";
  for (const auto& group : detail::grouped(runs))
    for (std::size_t i : group) {
      const auto& r = runs[i];
      out << r.name << "," << regime_name(r.spec.variant);
      for (const auto& fold : r.folds) out << "," << percent(fold.metrics.accuracy) << "," << percent(fold.metrics.macro_f1);
      out << "\n";
    }
  return out.str();
}

/// Full detail, minus wall-clock time so that reruns are byte-identical.
inline Json json(const std::vector<eval::RunResult>& runs) {
  Json doc{{"runs", Json::array()}};
  for (const auto& group : detail::grouped(runs))
    for (std::size_t i : group) {
      const auto& r = runs[i];
      Json run{{"name", r.name},
               {"regime", regime_name(r.spec.variant)},
               {"variant", variant_name(r.spec.variant)},
               {"sources", r.sources},
               {"labelNames", r.label_names},
               {"meanAccuracy", r.mean_accuracy},
               {"meanMacroF1", r.mean_macro_f1},
               {"meanAccuracyPercent", percent(r.mean_accuracy)},
               {"meanMacroF1Percent", percent(r.mean_macro_f1)},
               {"model", r.spec},
               {"train", to_json(r.train)},
               {"folds", Json::array()}};
      for (std::size_t f = 0; f < r.folds.size(); ++f) {
        const auto& fold = r.folds[f];
        run["folds"].push_back(Json{{"fold", f},
                                    {"accuracy", fold.metrics.accuracy},
                                    {"macroF1", fold.metrics.macro_f1},
                                    {"perClassF1", fold.metrics.per_class_f1},
                                    {"precision", fold.metrics.precision},
                                    {"recall", fold.metrics.recall},
                                    {"confusion", fold.metrics.confusion},
                                    {"testSize", fold.test_ids.size()},
                                    {"trainSize", fold.train_ids.size()},
                                    {"validationSize", fold.val_ids.size()},
                                    {"epochsRun", fold.curves.size()},
                                    {"bestEpoch", fold.best_epoch},
                                    {"initSeed", fold.spec.seed}});
      }
      doc["runs"].push_back(std::move(run));
    }
  return doc;
}

/// Confusion counts summed over folds; rows are true classes.
inline std::string confusion_csv(const eval::RunResult& r) {
  const std::size_t c = r.label_names.size();
  std::vector<std::vector<long>> total(c, std::vector<long>(c, 0));
  for (const auto& fold : r.folds)
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j) total[i][j] += fold.metrics.confusion[i][j];
  std::ostringstream out;
  out << "true\\predicted";
  for (const auto& n : r.label_names) out << "," << n;
  out << "\n";
  for (std::size_t i = 0; i < c; ++i) {
    out << r.label_names[i];
    for (long v : total[i]) out << "," << v;
    out << "\n";
  }
  return out.str();
}

inline std::string curves_csv(const eval::RunResult& r) {
  std::ostringstream out;
  out << "fold,epoch,trainLoss,valLoss\n";
  char buf[64];
  for (std::size_t f = 0; f < r.folds.size(); ++f)
    for (const auto& e : r.folds[f].curves) {
      out << f << "," << e.epoch << ",";
      std::snprintf(buf, sizeof buf, "%.9g", e.train_loss);
      out << buf << ",";
      if (std::isnan(e.val_loss)) {
        out << "\n";
      } else {
        std::snprintf(buf, sizeof buf, "%.9g", e.val_loss);
        out << buf << "\n";
      }
    }
  return out.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
  if (!out) throw Error("cannot write " + p.string());
}

/// Writes the fixed output layout into `dir`:
/// report.{txt,csv,json}, confusion_<run>.csv, curves_<run>.csv and, for
/// folds that kept their weights, checkpoint_<run>_fold<i>.bin.
inline std::vector<std::filesystem::path> write_all(const std::filesystem::path& dir,
                                                    const std::vector<eval::RunResult>& runs) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  auto put = [&](const std::string& name, const std::string& content) {
    write_file(dir / name, content);
    written.push_back(dir / name);
  };
  put("report.txt", text(runs));
  put("report.csv", csv(runs));
  put("report.json", json(runs).dump(2) + "\n");
  for (const auto& r : runs) {
    const std::string stem = file_stem(r.name);
    put("confusion_" + stem + ".csv", confusion_csv(r));
    put("curves_" + stem + ".csv", curves_csv(r));
    for (std::size_t f = 0; f < r.folds.size(); ++f) {
      if (r.folds[f].weights.empty()) continue;
      Model<float> model(r.folds[f].spec);
      model.restore(r.folds[f].weights);
      const auto path = dir / ("checkpoint_" + stem + "_fold" + std::to_string(f) + ".bin");
      checkpoint::write(path.string(), model);
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace mata::report
