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
#include <string>
#include <vector>

#include "mata/error.hpp"

namespace mata::eval {

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> per_class_f1;
  /// confusion[true][predicted].
  std::vector<std::vector<long>> confusion;

  std::size_t num_classes() const { return confusion.size(); }
  friend bool operator==(const Metrics&, const Metrics&) = default;
};

/// Accuracy, per-class precision/recall/F1 and macro-F1 over all
/// `num_classes` classes. Any 0/0 ratio is 0, so a class that is never
/// predicted and never present contributes an F1 of 0 to the macro mean.
inline Metrics compute_metrics(const std::vector<int>& y_true, const std::vector<int>& y_pred, std::size_t num_classes) {
  if (y_true.size() != y_pred.size())
    throw DataError("compute_metrics: " + std::to_string(y_true.size()) + " labels vs " +
                    std::to_string(y_pred.size()) + " predictions");
  if (num_classes == 0) throw DataError("compute_metrics: num_classes must be positive");
  Metrics m;
  m.confusion.assign(num_classes, std::vector<long>(num_classes, 0));
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const int t = y_true[i], p = y_pred[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= num_classes || static_cast<std::size_t>(p) >= num_classes)
      throw DataError("compute_metrics: label out of range at position " + std::to_string(i));
    ++m.confusion[t][p];
  }
  auto ratio = [](double a, double b) { return b == 0.0 ? 0.0 : a / b; };
  long correct = 0;
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    long predicted = 0, actual = 0;
    for (std::size_t o = 0; o < num_classes; ++o) {
      predicted += m.confusion[o][c];
      actual += m.confusion[c][o];
    }
    const double tp = static_cast<double>(m.confusion[c][c]);
    correct += m.confusion[c][c];
    const double p = ratio(tp, static_cast<double>(predicted));
    const double r = ratio(tp, static_cast<double>(actual));
    m.precision.push_back(p);
    m.recall.push_back(r);
    m.per_class_f1.push_back(ratio(2.0 * p * r, p + r));
    f1_sum += m.per_class_f1.back();
  }
  m.accuracy = ratio(static_cast<double>(correct), static_cast<double>(y_true.size()));
  m.macro_f1 = f1_sum / static_cast<double>(num_classes);
  return m;
}

}  // namespace mata::eval
