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
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <string>
#include <vector>

#include "mata/autodiff.hpp"
#include "mata/error.hpp"
#include "mata/tensor.hpp"

namespace mata::ot {

/// Pairwise Euclidean distances between the rows of two feature matrices,
/// divided by their maximum. Entries lie in [0, 1].
template <typename T>
struct CostMatrix {
  Tensor<T> values;
  std::size_t source_size = 0;
  std::size_t target_size = 0;
  /// Largest raw distance before normalization (0 for identical batches).
  T raw_max{0};
};

struct SinkhornConfig {
  double epsilon = 0.1;
  int max_iterations = 1000;
  /// Threshold on |row sums - a|_1 + |col sums - b|_1.
  double tolerance = 1e-6;
  bool log_domain = true;

  void validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("sinkhorn epsilon must be > 0");
    if (max_iterations < 1) throw ConfigError("sinkhorn max_iterations must be >= 1");
    if (!(tolerance > 0.0)) throw ConfigError("sinkhorn tolerance must be > 0");
  }
};

/// Entropic coupling between a source batch (rows) and a target batch
/// (columns) under uniform marginals.
template <typename T>
struct TransportPlan {
  Tensor<T> gamma;
  std::vector<T> row_marginal;
  std::vector<T> col_marginal;
  int iterations = 0;
  double marginal_error = 0.0;
  bool converged = false;
};

template <typename T>
CostMatrix<T> cost_matrix(const Tensor<T>& x1, const Tensor<T>& x2) {
  if (x1.rank() != 2 || x2.rank() != 2 || x1.dim(1) != x2.dim(1))
    throw DimensionError("cost_matrix: feature dimension mismatch " + shape_string(x1.shape()) + " vs " +
                         shape_string(x2.shape()));
  const std::size_t n1 = x1.dim(0), n2 = x2.dim(0), d = x1.dim(1);
  CostMatrix<T> m{Tensor<T>({n1, n2}), n1, n2, T{0}};
  for (std::size_t i = 0; i < n1; ++i)
    for (std::size_t j = 0; j < n2; ++j) {
      T s{0};
      for (std::size_t c = 0; c < d; ++c) {
        const T diff = x1(i, c) - x2(j, c);
        s += diff * diff;
      }
      m.values(i, j) = std::sqrt(s);
      m.raw_max = std::max(m.raw_max, m.values(i, j));
    }
  if (m.raw_max > T{0})
    for (T& v : m.values.values()) v /= m.raw_max;
  return m;
}

namespace detail {

template <typename T>
double marginal_error(const Tensor<T>& gamma, const std::vector<T>& a, const std::vector<T>& b) {
  const std::size_t n1 = a.size(), n2 = b.size();
  std::vector<double> cols(n2, 0.0);
  double err = 0.0;
  for (std::size_t i = 0; i < n1; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n2; ++j) {
      row += gamma(i, j);
      cols[j] += gamma(i, j);
    }
    err += std::abs(row - static_cast<double>(a[i]));
  }
  for (std::size_t j = 0; j < n2; ++j) err += std::abs(cols[j] - static_cast<double>(b[j]));
  return err;
}

template <typename T>
T log_sum_exp(const T* v, std::size_t n) {
  const T mx = *std::max_element(v, v + n);
  if (!std::isfinite(mx)) return mx;
  T s{0};
  for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - mx);
  return mx + std::log(s);
}

template <typename T>
void sinkhorn_log(const Tensor<T>& cost, T eps, const SinkhornConfig& cfg, TransportPlan<T>& plan) {
  const std::size_t n1 = cost.dim(0), n2 = cost.dim(1);
  const T log_a = std::log(plan.row_marginal[0]);
  const T log_b = std::log(plan.col_marginal[0]);
  std::vector<T> f(n1, T{0}), g(n2, T{0}), buf(std::max(n1, n2));
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    for (std::size_t i = 0; i < n1; ++i) {
      for (std::size_t j = 0; j < n2; ++j) buf[j] = (g[j] - cost(i, j)) / eps;
      f[i] = eps * (log_a - log_sum_exp(buf.data(), n2));
    }
    for (std::size_t j = 0; j < n2; ++j) {
      for (std::size_t i = 0; i < n1; ++i) buf[i] = (f[i] - cost(i, j)) / eps;
      g[j] = eps * (log_b - log_sum_exp(buf.data(), n1));
    }
    for (std::size_t i = 0; i < n1; ++i)
      for (std::size_t j = 0; j < n2; ++j) plan.gamma(i, j) = std::exp((f[i] + g[j] - cost(i, j)) / eps);
    if (!plan.gamma.all_finite())
      throw SolverError("sinkhorn: non-finite potentials; use 64-bit precision or a larger epsilon");
    plan.iterations = it;
    plan.marginal_error = marginal_error(plan.gamma, plan.row_marginal, plan.col_marginal);
    if (plan.marginal_error <= cfg.tolerance) {
      plan.converged = true;
      return;
    }
  }
}

template <typename T>
void sinkhorn_scaling(const Tensor<T>& cost, T eps, const SinkhornConfig& cfg, TransportPlan<T>& plan) {
  const std::size_t n1 = cost.dim(0), n2 = cost.dim(1);
  Tensor<T> kernel({n1, n2});
  for (std::size_t i = 0; i < kernel.size(); ++i) kernel[i] = std::exp(-cost[i] / eps);
  for (std::size_t i = 0; i < n1; ++i) {
    T row{0};
    for (std::size_t j = 0; j < n2; ++j) row += kernel(i, j);
    if (!(row > T{0}) || !std::isfinite(row))
      throw SolverError("sinkhorn: kernel exp(-M/eps) underflows; use 64-bit precision or a larger epsilon");
  }
  std::vector<T> u(n1, T{1}), v(n2, T{1});
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    for (std::size_t i = 0; i < n1; ++i) {
      T s{0};
      for (std::size_t j = 0; j < n2; ++j) s += kernel(i, j) * v[j];
      u[i] = plan.row_marginal[i] / s;
    }
    for (std::size_t j = 0; j < n2; ++j) {
      T s{0};
      for (std::size_t i = 0; i < n1; ++i) s += kernel(i, j) * u[i];
      v[j] = plan.col_marginal[j] / s;
    }
    for (std::size_t i = 0; i < n1; ++i)
      for (std::size_t j = 0; j < n2; ++j) plan.gamma(i, j) = u[i] * kernel(i, j) * v[j];
    if (!plan.gamma.all_finite())
      throw SolverError("sinkhorn: scaling vectors overflowed; use 64-bit precision or a larger epsilon");
    plan.iterations = it;
    plan.marginal_error = marginal_error(plan.gamma, plan.row_marginal, plan.col_marginal);
    if (plan.marginal_error <= cfg.tolerance) {
      plan.converged = true;
      return;
    }
  }
}

}  // namespace detail

/// Entropic OT plan for `cost` with uniform marginals. Stops once the L1
/// marginal violation is within `cfg.tolerance` or after
/// `cfg.max_iterations`; a plan that did not converge is still returned with
/// `converged == false`.
template <typename T>
TransportPlan<T> sinkhorn(const CostMatrix<T>& m, const SinkhornConfig& cfg = {}) {
  cfg.validate();
  const Tensor<T>& cost = m.values;
  if (cost.rank() != 2) throw DimensionError("sinkhorn: cost must be a matrix");
  const std::size_t n1 = cost.dim(0), n2 = cost.dim(1);
  TransportPlan<T> plan;
  plan.gamma = Tensor<T>({n1, n2});
  plan.row_marginal.assign(n1, T{1} / static_cast<T>(n1));
  plan.col_marginal.assign(n2, T{1} / static_cast<T>(n2));
  const T eps = static_cast<T>(cfg.epsilon);
  if (cfg.log_domain)
    detail::sinkhorn_log(cost, eps, cfg, plan);
  else
    detail::sinkhorn_scaling(cost, eps, cfg, plan);
  return plan;
}

/// diag(1/a) * gamma: rows of the plan renormalized to sum to one (up to the
/// solver's residual), so applying it averages target rows.
template <typename T>
Tensor<T> barycentric_map(const TransportPlan<T>& plan) {
  Tensor<T> p = plan.gamma;
  const std::size_t n1 = p.dim(0), n2 = p.dim(1);
  for (std::size_t i = 0; i < n1; ++i)
    for (std::size_t j = 0; j < n2; ++j) p(i, j) /= plan.row_marginal[i];
  return p;
}

/// diag(1/b) * gamma^T.
template <typename T>
Tensor<T> barycentric_map_reverse(const TransportPlan<T>& plan) {
  Tensor<T> p = transposed(plan.gamma);
  const std::size_t n2 = p.dim(0), n1 = p.dim(1);
  for (std::size_t j = 0; j < n2; ++j)
    for (std::size_t i = 0; i < n1; ++i) p(j, i) /= plan.col_marginal[j];
  return p;
}

/// Moves target features onto the source batch: row i is the plan-weighted
/// average of the rows of `x2`.
template <typename T>
Tensor<T> transport(const TransportPlan<T>& plan, const Tensor<T>& x2) {
  if (x2.rank() != 2 || plan.gamma.dim(1) != x2.dim(0))
    throw DimensionError("transport: plan " + shape_string(plan.gamma.shape()) + " vs features " +
                         shape_string(x2.shape()));
  return matmul(barycentric_map(plan), x2);
}

template <typename T>
Tensor<T> transport_reverse(const TransportPlan<T>& plan, const Tensor<T>& x1) {
  if (x1.rank() != 2 || plan.gamma.dim(0) != x1.dim(0))
    throw DimensionError("transport_reverse: plan " + shape_string(plan.gamma.shape()) + " vs features " +
                         shape_string(x1.shape()));
  return matmul(barycentric_map_reverse(plan), x1);
}

/// Tape versions: the plan enters as a constant, gradients flow only into
/// the transported features.
template <typename T>
Var transport(Tape<T>& tp, const TransportPlan<T>& plan, Var x2) {
  if (plan.gamma.dim(1) != tp.value(x2).dim(0)) throw DimensionError("transport: plan/batch mismatch");
  return ops::matmul(tp, tp.constant(barycentric_map(plan)), x2);
}

template <typename T>
Var transport_reverse(Tape<T>& tp, const TransportPlan<T>& plan, Var x1) {
  if (plan.gamma.dim(0) != tp.value(x1).dim(0)) throw DimensionError("transport_reverse: plan/batch mismatch");
  return ops::matmul(tp, tp.constant(barycentric_map_reverse(plan)), x1);
}

/// Appends one JSON line per solve: {"epsilon", "iterations",
/// "marginal_error", "converged", "rows", "cols"}.
class SolveLog {
 public:
  explicit SolveLog(const std::string& path) : out_(path, std::ios::app) {
    if (!out_) throw ConfigError("cannot open sinkhorn log " + path);
  }

  template <typename T>
  void append(const SinkhornConfig& cfg, const TransportPlan<T>& plan) {
    char line[256];
    std::snprintf(line, sizeof line,
                  "{\"epsilon\":%.17g,\"iterations\":%d,\"marginalError\":%.17g,\"converged\":%s,"
                  "\"rows\":%zu,\"cols\":%zu}\n",
                  cfg.epsilon, plan.iterations, plan.marginal_error, plan.converged ? "true" : "false",
                  plan.gamma.dim(0), plan.gamma.dim(1));
    std::lock_guard lock(mu_);
    out_ << line;
    out_.flush();
  }

 private:
  std::mutex mu_;
  std::ofstream out_;
};

}  // namespace mata::ot
