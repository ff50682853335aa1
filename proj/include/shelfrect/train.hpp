#pragma once

// AdamW with a per-epoch cosine schedule, on-the-fly augmentation and
// best-validation checkpoint selection. Config and history files are
// `key = value` lines; history records are separated by blank lines.

#include <algorithm>
#include <cmath>
#include <functional>
#include <istream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "shelfrect/augment.hpp"
#include "shelfrect/dataset.hpp"
#include "shelfrect/error.hpp"
#include "shelfrect/eval.hpp"
#include "shelfrect/model.hpp"
#include "shelfrect/rng.hpp"
#include "shelfrect/text.hpp"

namespace shelfrect {

struct TrainConfig {
  int epochs = 51;
  int batch_size = 80;
  double lr0 = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double lr_min = 1e-6;
  AugmentConfig augment{0.5, 0};
  std::uint64_t seed = 0;
  int eval_every = 1;
  int threads = 1;

  void check() const {
    if (epochs < 1) throw OutOfRange("epochs must be at least 1");
    if (batch_size < 1) throw OutOfRange("batch size must be at least 1");
    if (!(lr_min >= 0.0 && lr_min <= lr0)) throw OutOfRange("need 0 <= lr_min <= lr0");
    if (!(weight_decay >= 0.0)) throw OutOfRange("weight decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw OutOfRange("betas must be in [0, 1)");
    if (!(epsilon > 0.0)) throw OutOfRange("epsilon must be positive");
    if (eval_every < 1) throw OutOfRange("eval_every must be at least 1");
    if (threads < 1) throw OutOfRange("threads must be at least 1");
    augment.check();
  }
};

/// Everything a run needs: architecture, loss weights and optimisation.
struct RunConfig {
  std::string profile = "paper";
  ModelConfig model;
  TrainConfig train;

  /// Full-scale settings: 224 px, 51 epochs, batch 80, lr 1e-4 -> 1e-6.
  static RunConfig paper() { return RunConfig{}; }

  /// Single-CPU settings: 56 px input, a network that reduces the input to a
  /// 1x1 map, batch 16, 30 epochs, a larger initial step.
  static RunConfig desk() {
    RunConfig c;
    c.profile = "desk";
    c.model.input_size = 56;
    c.model.widths = {8, 12, 16, 24, 32, 48};
    c.train.batch_size = 16;
    c.train.epochs = 30;
    c.train.lr0 = 2e-3;
    c.train.lr_min = 2e-5;
    return c;
  }

  static RunConfig profile_named(std::string_view name) {
    if (name == "paper") return paper();
    if (name == "desk") return desk();
    throw ParseError("unknown profile '" + std::string(name) + "' (expected paper or desk)");
  }

  void check() const {
    model.check();
    train.check();
  }
};

inline std::string format_config(const RunConfig& c) {
  std::string widths;
  for (std::size_t i = 0; i < c.model.widths.size(); ++i) widths += (i ? "," : "") + std::to_string(c.model.widths[i]);
  std::ostringstream os;
  auto kv = [&](const char* k, const std::string& v) { os << k << " = " << v << "\n"; };
  auto num = [](double v) { return text::format_double(v); };
  kv("profile", c.profile);
  kv("paper_scale_backbone", "ConvNeXt-Nano");
  kv("input_size", std::to_string(c.model.input_size));
  kv("channels", std::to_string(c.model.channels));
  kv("widths", widths);
  kv("head", std::string(to_string(c.model.head)));
  kv("lambda", num(c.model.lambda));
  kv("normalize", c.model.normalize ? "true" : "false");
  kv("side_weight", num(c.model.side_weight));
  kv("epochs", std::to_string(c.train.epochs));
  kv("batch_size", std::to_string(c.train.batch_size));
  kv("lr0", num(c.train.lr0));
  kv("lr_min", num(c.train.lr_min));
  kv("weight_decay", num(c.train.weight_decay));
  kv("beta1", num(c.train.beta1));
  kv("beta2", num(c.train.beta2));
  kv("epsilon", num(c.train.epsilon));
  kv("augment.probability", num(c.train.augment.probability));
  kv("augment.seed", std::to_string(c.train.augment.seed));
  kv("seed", std::to_string(c.train.seed));
  kv("eval_every", std::to_string(c.train.eval_every));
  kv("threads", std::to_string(c.train.threads));
  return os.str();
}

inline bool parse_bool(std::string_view s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ParseError("expected a boolean, got '" + std::string(s) + "'");
}

inline std::uint64_t parse_u64(std::string_view s) {
  const auto v = text::parse_int(s);
  if (v < 0) throw ParseError("expected a non-negative integer, got '" + std::string(s) + "'");
  return static_cast<std::uint64_t>(v);
}

/// Applies one `key = value` setting. Unknown keys are errors.
inline void apply_setting(RunConfig& c, std::string_view key, std::string_view value) {
  auto to_int = [&] { return static_cast<int>(text::parse_int(value)); };
  if (key == "profile") {
    c = RunConfig::profile_named(value);
  } else if (key == "paper_scale_backbone") {
    // informational
  } else if (key == "input_size") {
    c.model.input_size = to_int();
  } else if (key == "channels") {
    c.model.channels = to_int();
  } else if (key == "widths") {
    c.model.widths.clear();
    for (auto w : text::split_fields(value, ",")) c.model.widths.push_back(static_cast<int>(text::parse_int(w)));
  } else if (key == "head") {
    c.model.head = parse_head(value);
  } else if (key == "lambda") {
    c.model.lambda = text::parse_double(value);
  } else if (key == "normalize") {
    c.model.normalize = parse_bool(value);
  } else if (key == "side_weight") {
    c.model.side_weight = text::parse_double(value);
  } else if (key == "epochs") {
    c.train.epochs = to_int();
  } else if (key == "batch_size") {
    c.train.batch_size = to_int();
  } else if (key == "lr0") {
    c.train.lr0 = text::parse_double(value);
  } else if (key == "lr_min") {
    c.train.lr_min = text::parse_double(value);
  } else if (key == "weight_decay") {
    c.train.weight_decay = text::parse_double(value);
  } else if (key == "beta1") {
    c.train.beta1 = text::parse_double(value);
  } else if (key == "beta2") {
    c.train.beta2 = text::parse_double(value);
  } else if (key == "epsilon") {
    c.train.epsilon = text::parse_double(value);
  } else if (key == "augment.probability") {
    c.train.augment.probability = text::parse_double(value);
  } else if (key == "augment.seed") {
    c.train.augment.seed = parse_u64(value);
  } else if (key == "seed") {
    c.train.seed = parse_u64(value);
  } else if (key == "eval_every") {
    c.train.eval_every = to_int();
  } else if (key == "threads") {
    c.train.threads = to_int();
  } else {
    throw ParseError("unknown config key '" + std::string(key) + "'");
  }
}

/// Reads `key = value` lines on top of `base`. A `profile` line resets to that
/// profile, so it should come first.
inline RunConfig parse_config(std::istream& in, RunConfig base = RunConfig::paper()) {
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    const std::string where = "config line " + std::to_string(line_no);
    if (eq == std::string_view::npos) throw ParseError(where + ": expected key = value");
    try {
      apply_setting(base, text::trim(t.substr(0, eq)), text::trim(t.substr(eq + 1)));
    } catch (const Error& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  base.check();
  return base;
}

/// lr_min + (lr0 - lr_min)(1 + cos(pi e / (E - 1))) / 2, stepped once per epoch.
inline double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) throw OutOfRange("epoch outside the schedule");
  if (cfg.epochs == 1) return cfg.lr0;
  const double t = static_cast<double>(epoch) / (cfg.epochs - 1);
  return cfg.lr_min + (cfg.lr0 - cfg.lr_min) * (1.0 + std::cos(3.141592653589793 * t)) / 2.0;
}

struct TrainState {
  ModelParams params;
  std::vector<double> m, v;  // AdamW moments
  long long step = 0;
  int epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();

  explicit TrainState(ModelParams p) : params(std::move(p)), m(params.values.size(), 0.0), v(params.values.size(), 0.0) {}
};

/// One AdamW update with bias correction and decoupled weight decay.
inline void optimizer_step(TrainState& s, const std::vector<double>& grad, double lr, const TrainConfig& cfg) {
  if (grad.size() != s.params.values.size()) throw ShapeMismatch("gradient length does not match parameters");
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(grad[i])) throw NonFiniteGradient("non-finite gradient at parameter " + std::to_string(i));
  ++s.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
  auto& p = s.params.values;
  for (std::size_t i = 0; i < p.size(); ++i) {
    s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * grad[i];
    s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mh = s.m[i] / c1, vh = s.v[i] / c2;
    p[i] -= lr * (mh / (std::sqrt(vh) + cfg.epsilon) + cfg.weight_decay * p[i]);
  }
}

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_mce = std::nan("");  // NaN when not evaluated this epoch
};

struct TrainResult {
  ModelParams best;   // parameters at the best validation MCE
  ModelParams final;  // parameters after the last epoch
  std::vector<EpochRecord> history;
  std::string metadata;  // format_config of the run
  int best_epoch = -1;
};

inline std::string format_history(const TrainResult& r) {
  std::string out;
  std::istringstream meta(r.metadata);
  for (std::string line; std::getline(meta, line);) out += "# " + line + "\n";
  for (const auto& e : r.history) {
    out += "\nepoch = " + std::to_string(e.epoch) + "\n";
    out += "lr = " + text::format_double(e.lr) + "\n";
    out += "train_loss = " + text::format_double(e.train_loss) + "\n";
    out += "val_mce = " + (std::isnan(e.val_mce) ? std::string("nan") : text::format_double(e.val_mce)) + "\n";
  }
  return out;
}

inline DisplacementPool pool_from_samples(const std::vector<Sample>& train, int working_size) {
  if (train.empty()) throw EmptySplit("cannot build an augmentation pool from an empty split");
  DisplacementPool pool;
  pool.working_size = working_size;
  for (const auto& s : train) {
    check_annotation_legal(s.label, s.side, working_size);
    pool.entries.push_back(s.label);
  }
  return pool;
}

inline double mean_mce(const ModelParams& params, const ModelConfig& cfg, const std::vector<Sample>& samples) {
  double s = 0.0;
  for (const auto& x : samples) s += mce(predict(params, cfg, x.image), x.label);
  return s / static_cast<double>(samples.size());
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains from a seeded initialisation. Samples must be at the model's working
/// resolution. Every random choice (init, shuffling, augmentation) comes from
/// seeds derived from the config, so a run is reproducible bit for bit.
inline TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                         const RunConfig& run, const EpochCallback& on_epoch = {},
                         std::optional<ModelParams> initial = std::nullopt) {
  run.check();
  if (train_set.empty()) throw EmptySplit("training split is empty");
  const auto& mc = run.model;
  const auto& tc = run.train;
  const DisplacementPool pool = pool_from_samples(train_set, mc.input_size);

  TrainState state(initial ? *initial : init_params(mc, derive_seed(tc.seed, {0x1417})));
  check_params(state.params, mc);
  TrainResult result;
  result.metadata = format_config(run);
  result.best = state.params;

  std::vector<std::size_t> order(train_set.size());
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr = lr_at(epoch, tc);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(tc.seed, {0x5f1e, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
      std::vector<ImageBuffer> images;
      std::vector<Example> batch;
      images.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = train_set[order[k]];
        Rng aug_rng(derive_seed(tc.augment.seed, {static_cast<std::uint64_t>(epoch), order[k]}));
        auto a = augment_sample(s.image, s.label, pool, tc.augment, aug_rng);
        images.push_back(std::move(a.image));
        batch.push_back({nullptr, a.label, a.applied ? label_side(a.label) : s.side});
      }
      for (std::size_t k = 0; k < batch.size(); ++k) batch[k].image = &images[k];
      const auto g = batch_gradient(state.params, mc, batch, tc.threads);
      if (!std::isfinite(g.loss))
        throw NonFiniteGradient("non-finite loss in epoch " + std::to_string(epoch) + " batch " +
                                std::to_string(start / tc.batch_size));
      try {
        optimizer_step(state, g.grad, lr, tc);
      } catch (const NonFiniteGradient& e) {
        throw NonFiniteGradient(std::string(e.what()) + " (epoch " + std::to_string(epoch) + " batch " +
                                std::to_string(start / tc.batch_size) + ")");
      }
      loss_sum += g.loss * static_cast<double>(batch.size());
    }

    EpochRecord rec{epoch, lr, loss_sum / static_cast<double>(order.size()), std::nan("")};
    const bool last = epoch + 1 == tc.epochs;
    if (!val_set.empty() && ((epoch + 1) % tc.eval_every == 0 || last)) {
      rec.val_mce = mean_mce(state.params, mc, val_set);
      if (rec.val_mce < state.best_val) {
        state.best_val = rec.val_mce;
        result.best = state.params;
        result.best_epoch = epoch;
      }
    }
    state.epoch = epoch + 1;
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.final = state.params;
  if (val_set.empty()) {
    result.best = state.params;
    result.best_epoch = tc.epochs - 1;
  }
  return result;
}

}  // namespace shelfrect
