// Copyright 2026 The lmkit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Linear-chain CRF over an L x K emission matrix.
//
// score(y) = start[y0] + sum_t emit[t, y_t] + sum_t trans[y_t, y_t+1] + stop[y_L-1]

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "lmkit/core/error.hpp"
#include "lmkit/nn/graph.hpp"

namespace lmkit::tagger {

using nn::Mat;

template <class T>
struct CrfParams {
  Mat<T> transitions;  // K x K, from row tag to column tag
  Mat<T> start;        // 1 x K
  Mat<T> stop;         // 1 x K

  static CrfParams zeros(int k) {
    return {Mat<T>::Zero(k, k), Mat<T>::Zero(1, k), Mat<T>::Zero(1, k)};
  }
  int tags() const { return static_cast<int>(transitions.rows()); }
};

namespace detail {

inline double log_sum_exp(const double* v, int n) {
  double m = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) m = std::max(m, v[i]);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

template <class T>
void check_shapes(const Mat<T>& e, const Mat<T>& trans, const Mat<T>& start, const Mat<T>& stop) {
  const auto k = e.cols();
  if (e.rows() < 1) throw ConfigError("crf: empty sequence");
  if (trans.rows() != k || trans.cols() != k || start.size() != k || stop.size() != k) {
    throw InvariantError("crf: shape mismatch");
  }
}

// alpha[t][k]: log-sum of prefix scores ending in tag k at t (emission at t
// included). beta[t][k]: log-sum of suffix scores after t given tag k at t,
// stop score included.
template <class T>
void forward_backward(const Mat<T>& e, const Mat<T>& trans, const Mat<T>& start,
                      const Mat<T>& stop, std::vector<std::vector<double>>* alpha,
                      std::vector<std::vector<double>>* beta) {
  const int len = static_cast<int>(e.rows()), k = static_cast<int>(e.cols());
  std::vector<double> buf(k);
  if (alpha) {
    alpha->assign(len, std::vector<double>(k));
    for (int j = 0; j < k; ++j) (*alpha)[0][j] = double(start(0, j)) + double(e(0, j));
    for (int t = 1; t < len; ++t) {
      for (int j = 0; j < k; ++j) {
        for (int i = 0; i < k; ++i) buf[i] = (*alpha)[t - 1][i] + double(trans(i, j));
        (*alpha)[t][j] = log_sum_exp(buf.data(), k) + double(e(t, j));
      }
    }
  }
  if (beta) {
    beta->assign(len, std::vector<double>(k));
    for (int i = 0; i < k; ++i) (*beta)[len - 1][i] = double(stop(0, i));
    for (int t = len - 2; t >= 0; --t) {
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
          buf[j] = double(trans(i, j)) + double(e(t + 1, j)) + (*beta)[t + 1][j];
        }
        (*beta)[t][i] = log_sum_exp(buf.data(), k);
      }
    }
  }
}

}  // namespace detail

template <class T>
double crf_score(const Mat<T>& emissions, const CrfParams<T>& crf, const std::vector<int>& tags) {
  detail::check_shapes(emissions, crf.transitions, crf.start, crf.stop);
  if (static_cast<Eigen::Index>(tags.size()) != emissions.rows()) {
    throw InvariantError("crf_score: tag count mismatch");
  }
  double s = double(crf.start(0, tags[0]));
  for (std::size_t t = 0; t < tags.size(); ++t) {
    s += double(emissions(static_cast<Eigen::Index>(t), tags[t]));
    if (t > 0) s += double(crf.transitions(tags[t - 1], tags[t]));
  }
  return s + double(crf.stop(0, tags.back()));
}

// log of the sum over all K^L tag sequences of exp(score).
template <class T>
double crf_log_partition(const Mat<T>& emissions, const CrfParams<T>& crf) {
  detail::check_shapes(emissions, crf.transitions, crf.start, crf.stop);
  std::vector<std::vector<double>> alpha;
  detail::forward_backward(emissions, crf.transitions, crf.start, crf.stop, &alpha, nullptr);
  const int k = static_cast<int>(emissions.cols());
  std::vector<double> last(k);
  for (int j = 0; j < k; ++j) last[j] = alpha.back()[j] + double(crf.stop(0, j));
  return detail::log_sum_exp(last.data(), k);
}

struct ViterbiPath {
  std::vector<int> tags;
  double score = 0.0;
};

// Best-scoring sequence. Among equal-scoring sequences the one with the
// smallest tag at the earliest differing position wins: suffix maxima are
// computed right to left, then tags are chosen left to right taking the
// smallest index that attains the maximum.
template <class T>
ViterbiPath crf_viterbi(const Mat<T>& emissions, const CrfParams<T>& crf) {
  detail::check_shapes(emissions, crf.transitions, crf.start, crf.stop);
  const int len = static_cast<int>(emissions.rows()), k = static_cast<int>(emissions.cols());
  // suffix[t][i]: best score after position t given tag i at t (stop included).
  std::vector<std::vector<double>> suffix(len, std::vector<double>(k));
  for (int i = 0; i < k; ++i) suffix[len - 1][i] = double(crf.stop(0, i));
  for (int t = len - 2; t >= 0; --t) {
    for (int i = 0; i < k; ++i) {
      double best = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        best = std::max(best, double(crf.transitions(i, j)) + double(emissions(t + 1, j)) +
                                  suffix[t + 1][j]);
      }
      suffix[t][i] = best;
    }
  }
  ViterbiPath out;
  auto pick = [&](auto value_of) {
    int arg = 0;
    double best = value_of(0);
    for (int j = 1; j < k; ++j) {
      const double v = value_of(j);
      if (v > best) {
        best = v;
        arg = j;
      }
    }
    return arg;
  };
  out.tags.push_back(pick([&](int j) {
    return double(crf.start(0, j)) + double(emissions(0, j)) + suffix[0][j];
  }));
  for (int t = 1; t < len; ++t) {
    const int prev = out.tags.back();
    out.tags.push_back(pick([&](int j) {
      return double(crf.transitions(prev, j)) + double(emissions(t, j)) + suffix[t][j];
    }));
  }
  out.score = crf_score(emissions, crf, out.tags);
  return out;
}

// Negative log-likelihood of `tags`: log partition minus gold score, as a
// differentiable graph node.
template <class T>
nn::Var crf_nll(nn::Graph<T>& g, nn::Var emissions, nn::Var transitions, nn::Var start,
                nn::Var stop, const std::vector<int>& tags) {
  const auto& e = g.value(emissions);
  CrfParams<T> crf{g.value(transitions), g.value(start), g.value(stop)};
  const double log_z = crf_log_partition(e, crf);
  const double gold = crf_score(e, crf, tags);
  Mat<T> out(1, 1);
  out(0, 0) = static_cast<T>(std::max(0.0, log_z - gold));  // rounding can dip below 0
  return g.custom(
      {emissions, transitions, start, stop}, std::move(out),
      [=](nn::Graph<T>& gr, const Mat<T>& d) {
        const auto& e = gr.value(emissions);
        const auto& tr = gr.value(transitions);
        const auto& st = gr.value(start);
        const auto& sp = gr.value(stop);
        const int len = static_cast<int>(e.rows()), k = static_cast<int>(e.cols());
        std::vector<std::vector<double>> alpha, beta;
        detail::forward_backward(e, tr, st, sp, &alpha, &beta);
        const T scale = d(0, 0);
        Mat<T> de = Mat<T>::Zero(len, k), dtr = Mat<T>::Zero(k, k);
        Mat<T> dst = Mat<T>::Zero(1, k), dsp = Mat<T>::Zero(1, k);
        for (int t = 0; t < len; ++t) {
          for (int j = 0; j < k; ++j) {
            de(t, j) = static_cast<T>(std::exp(alpha[t][j] + beta[t][j] - log_z));
          }
        }
        dst.row(0) = de.row(0);
        for (int j = 0; j < k; ++j) {
          dsp(0, j) = static_cast<T>(std::exp(alpha[len - 1][j] + double(sp(0, j)) - log_z));
        }
        for (int t = 0; t + 1 < len; ++t) {
          for (int i = 0; i < k; ++i) {
            for (int j = 0; j < k; ++j) {
              dtr(i, j) += static_cast<T>(std::exp(alpha[t][i] + double(tr(i, j)) +
                                                   double(e(t + 1, j)) + beta[t + 1][j] - log_z));
            }
          }
        }
        for (int t = 0; t < len; ++t) {
          de(t, tags[t]) -= 1;
          if (t > 0) dtr(tags[t - 1], tags[t]) -= 1;
        }
        dst(0, tags.front()) -= 1;
        dsp(0, tags.back()) -= 1;
        gr.accumulate(emissions, de * scale);
        gr.accumulate(transitions, dtr * scale);
        gr.accumulate(start, dst * scale);
        gr.accumulate(stop, dsp * scale);
      });
}

}  // namespace lmkit::tagger
