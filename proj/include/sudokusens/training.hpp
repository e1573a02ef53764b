#pragma once

// Shared training utilities: optimizer configuration, early stopping, and a
// central-difference gradient checker run in double precision.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "sudokusens/nn.hpp"
#include "sudokusens/rng.hpp"

namespace sudoku::train {

struct OptimizerConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0; // 0 disables clipping

  nlohmann::json to_json() const {
    return {{"lr", lr},
            {"beta1", beta1},
            {"beta2", beta2},
            {"eps", eps},
            {"clip_norm", clip_norm}};
  }
  static OptimizerConfig from_json(const nlohmann::json& j) {
    OptimizerConfig c;
    c.lr = j.at("lr").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.eps = j.at("eps").get<double>();
    c.clip_norm = j.at("clip_norm").get<double>();
    return c;
  }
};

template <typename T>
nn::Adam<T> make_adam(const OptimizerConfig& c) {
  nn::Adam<T> a;
  a.lr = c.lr;
  a.beta1 = c.beta1;
  a.beta2 = c.beta2;
  a.eps = c.eps;
  return a;
}

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_metric = 0;
};

// Tracks the best validation metric; stops after `patience` epochs without
// improvement.
struct EarlyStopper {
  int patience = 10;
  bool minimize = true;
  double best = std::numeric_limits<double>::quiet_NaN();
  int best_epoch = -1;
  int stale = 0;

  bool update(int epoch, double metric) {
    const bool improved =
        std::isnan(best) || (minimize ? metric < best : metric > best);
    if (improved) {
      best = metric;
      best_epoch = epoch;
      stale = 0;
    } else {
      ++stale;
    }
    return improved;
  }
  bool should_stop() const { return stale >= patience; }
};

struct GradCheckReport {
  double max_rel_err = 0;
  std::string worst_param;
  int64_t worst_index = -1;
  double analytic_at_worst = 0;
  double numeric_at_worst = 0;
  int64_t checked = 0;
};

// Compares analytic gradients against central differences on a random
// subset of parameter coordinates. `build` must deterministically produce
// the same scalar loss graph for the current store contents (freeze any
// sampled noise outside the closure). Relative error uses
// |a - n| / max(|a|, |n|, 1e-8).
template <typename BuildFn>
GradCheckReport gradient_check(nn::ParamStore<double>& store, BuildFn build,
                               Rng& rng, int64_t max_coords = 200) {
  GradCheckReport rep;

  std::unordered_map<std::string, Tensor<double>> analytic;
  std::vector<std::string> names;
  {
    ag::Graph<double> g;
    nn::Binder<double> binder(g, store, true);
    ag::Var<double> loss = build(g, binder);
    g.backward(loss);
    for (const auto& [name, id] : binder.bound) {
      auto it = analytic.find(name);
      if (it == analytic.end()) {
        analytic.emplace(name, g.grad(id));
        names.push_back(name);
      } else {
        // same parameter bound twice: gradients add
        for (int64_t i = 0; i < it->second.numel(); ++i)
          it->second.data[static_cast<size_t>(i)] +=
              g.grad(id).data[static_cast<size_t>(i)];
      }
    }
  }

  int64_t total = 0;
  for (const auto& n : names) total += analytic.at(n).numel();
  std::vector<int64_t> coords(static_cast<size_t>(total));
  for (int64_t i = 0; i < total; ++i) coords[static_cast<size_t>(i)] = i;
  const int64_t take = std::min<int64_t>(max_coords, total);
  for (int64_t i = 0; i < take; ++i) {
    const int64_t j = i + static_cast<int64_t>(rng.index(
                              static_cast<uint64_t>(total - i)));
    std::swap(coords[static_cast<size_t>(i)], coords[static_cast<size_t>(j)]);
  }

  auto eval_loss = [&]() {
    ag::Graph<double> g;
    nn::Binder<double> binder(g, store, false);
    ag::Var<double> loss = build(g, binder);
    return loss.val().data[0];
  };

  for (int64_t c = 0; c < take; ++c) {
    int64_t flat = coords[static_cast<size_t>(c)];
    std::string name;
    int64_t idx = -1;
    for (const auto& n : names) {
      const int64_t sz = analytic.at(n).numel();
      if (flat < sz) {
        name = n;
        idx = flat;
        break;
      }
      flat -= sz;
    }
    auto& pv = store.at(name).data[static_cast<size_t>(idx)];
    const double x0 = pv;
    const double h = 1e-5 * std::max(1.0, std::abs(x0));
    pv = x0 + h;
    const double fp = eval_loss();
    pv = x0 - h;
    const double fm = eval_loss();
    pv = x0;
    const double numeric = (fp - fm) / (2 * h);
    const double a = analytic.at(name).data[static_cast<size_t>(idx)];
    const double rel =
        std::abs(a - numeric) /
        std::max({std::abs(a), std::abs(numeric), 1e-8});
    ++rep.checked;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_param = name;
      rep.worst_index = idx;
      rep.analytic_at_worst = a;
      rep.numeric_at_worst = numeric;
    }
  }
  return rep;
}

} // namespace sudoku::train
