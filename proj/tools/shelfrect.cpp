// Command-line entry point. Results go to stdout, progress to stderr.
// Exit codes: 0 success, 1 usage, 2 data or invariant error, 3 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "shelfrect/augment.hpp"
#include "shelfrect/dataset.hpp"
#include "shelfrect/eval.hpp"
#include "shelfrect/geom.hpp"
#include "shelfrect/model.hpp"
#include "shelfrect/png_io.hpp"
#include "shelfrect/service.hpp"
#include "shelfrect/synth.hpp"
#include "shelfrect/train.hpp"
#include "shelfrect/warp.hpp"

namespace fs = std::filesystem;
using namespace shelfrect;

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kNumeric = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

DatasetSplit split_named(const Dataset& ds, const std::string& name) {
  if (name == "train") return ds.train;
  if (name == "val") return ds.val;
  if (name == "test") return ds.test;
  if (name == "all") {
    DatasetSplit all{"all", ds.train.records};
    all.records.insert(all.records.end(), ds.val.records.begin(), ds.val.records.end());
    all.records.insert(all.records.end(), ds.test.records.begin(), ds.test.records.end());
    return all;
  }
  throw UsageError("unknown split '" + name + "' (expected train, val, test or all)");
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ---- convert ---------------------------------------------------------------

struct ConvertOpts {
  std::string d, matrix;
  int size = 224, width = 0, height = 0;
};

void add_convert(CLI::App& app, ConvertOpts& o, std::function<void()>& run) {
  auto* c = app.add_subcommand("convert", "Convert corner displacements to a homography matrix or back");
  auto* od = c->add_option("--d", o.d, "Displacements TL,TR,BR,BL in pixels (positive is down)");
  auto* om = c->add_option("--matrix", o.matrix, "Row-major 3x3 homography, 9 comma or space separated values");
  od->excludes(om);
  c->add_option("--size", o.size, "Square image size in pixels")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--width", o.width, "Image width (overrides --size)")->check(CLI::PositiveNumber);
  c->add_option("--height", o.height, "Image height (overrides --size)")->check(CLI::PositiveNumber);
  c->footer("Exit codes: 0 ok, 1 usage, 2 bad input, 3 singular configuration.");
  c->callback([&] {
    run = [&] {
      const double w = o.width ? o.width : o.size, h = o.height ? o.height : o.size;
      if (!o.d.empty()) {
        std::cout << to_string(displacement_to_homography(parse_displacement(o.d), w, h)) << "\n";
      } else if (!o.matrix.empty()) {
        const auto r = homography_to_displacement(parse_homography(o.matrix), w, h);
        if (r.lossy) std::cerr << "warning: matrix also moves corners horizontally; that part is dropped\n";
        std::cout << to_string(r.d) << "\n";
      } else {
        throw UsageError("convert needs --d or --matrix");
      }
    };
  });
}

// ---- rectify ---------------------------------------------------------------

struct RectifyOpts {
  std::string image, out, mask, d, manifest, id, checkpoint;
};

void add_rectify(CLI::App& app, RectifyOpts& o, std::function<void()>& run) {
  auto* c = app.add_subcommand("rectify", "Warp an image to its fronto-parallel view");
  c->add_option("--image", o.image, "Input PNG")->required();
  c->add_option("--out", o.out, "Output PNG")->required();
  c->add_option("--mask", o.mask, "Optional output PNG of the validity mask");
  auto* od = c->add_option("--d", o.d, "Displacements TL,TR,BR,BL in the image's own pixels");
  auto* om = c->add_option("--manifest", o.manifest, "Manifest holding the image's annotation (with --id)");
  c->add_option("--id", o.id, "Image id inside --manifest");
  auto* oc = c->add_option("--checkpoint", o.checkpoint, "Predict the displacement with this model");
  od->excludes(om)->excludes(oc);
  om->excludes(oc);
  c->footer("Exit codes: 0 ok, 1 usage, 2 bad input, 3 singular configuration.");
  c->callback([&] {
    run = [&] {
      const auto img = read_png(o.image);
      const int w = img.width(), h = img.height();
      DisplacementVector d;
      if (!o.d.empty()) {
        d = parse_displacement(o.d);
      } else if (!o.manifest.empty()) {
        if (o.id.empty()) throw UsageError("--manifest needs --id");
        const auto split = load_manifest(o.manifest, "manifest");
        const auto it = std::find_if(split.records.begin(), split.records.end(),
                                     [&](const AnnotationRecord& r) { return r.image_id == o.id; });
        if (it == split.records.end()) throw MissingPrediction("no record for " + o.id + " in " + o.manifest);
        d = rescale_label(*it, w, h);
      } else if (!o.checkpoint.empty()) {
        const auto params = load_checkpoint(o.checkpoint);
        const auto cfg = ModelConfig::from_fingerprint(params.fingerprint);
        const int n = cfg.input_size;
        const auto pred = predict(params, cfg, with_channels(resize_bilinear(img, n, n), cfg.channels));
        d = homography_to_displacement(
                rescale_homography(displacement_to_homography(pred, n, n), ScaleTransform::between(n, n, w, h)), w, h)
                .d;
        std::cerr << "predicted d " << to_string(d) << "\n";
      } else {
        throw UsageError("rectify needs --d, --manifest/--id or --checkpoint");
      }
      const auto r = warp_image(img, displacement_to_homography(d, w, h));
      write_png(o.out, r.image);
      if (!o.mask.empty()) {
        ImageBuffer m(w, h, 1);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) m.at(0, y, x) = r.mask.valid(y, x) ? 1.0 : 0.0;
        write_png(o.mask, m);
      }
    };
  });
}

// ---- synth -----------------------------------------------------------------

struct SynthOpts {
  std::string out;
  std::size_t count = 100;
  std::uint64_t seed = 0;
  int size = 0;
};

void add_synth(CLI::App& app, SynthOpts& o, const std::string& profile, std::function<void()>& run) {
  auto* c = app.add_subcommand("synth", "Write a synthetic shelf dataset (PNGs plus train/val/test manifests)");
  c->add_option("--out", o.out, "Output directory")->required();
  c->add_option("--count", o.count, "Number of images, split 80/10/10")->capture_default_str();
  c->add_option("--seed", o.seed, "Base seed")->capture_default_str();
  c->add_option("--size", o.size, "Image size (default 224, or 56 with --profile desk)");
  c->footer("Exit codes: 0 ok, 1 usage, 2 I/O error.");
  c->callback([&] {
    run = [&] {
      const int size = o.size ? o.size : RunConfig::profile_named(profile).model.input_size;
      std::vector<ImageBuffer> images;
      const auto ds = generate_synthetic_dataset(o.seed, o.count, size, &images);
      fs::create_directories(o.out);
      std::size_t k = 0;
      for (const auto* split : {&ds.train, &ds.val, &ds.test})
        for (const auto& r : split->records) write_png(fs::path(o.out) / (r.image_id + ".png"), images[k++]);
      save_dataset(o.out, ds);
      std::cerr << "wrote " << o.count << " images of " << size << "x" << size << " to " << o.out << "\n";
    };
  });
}

// ---- stats -----------------------------------------------------------------

struct StatsOpts {
  std::string data, manifest, split = "train";
};

void add_stats(CLI::App& app, StatsOpts& o, std::function<void()>& run) {
  auto* c = app.add_subcommand("stats", "Per-corner displacement statistics of a split");
  auto* od = c->add_option("--data", o.data, "Dataset directory");
  auto* om = c->add_option("--manifest", o.manifest, "A single manifest file");
  od->excludes(om);
  c->add_option("--split", o.split, "train, val, test or all (with --data)")->capture_default_str();
  c->footer("Exit codes: 0 ok, 1 usage, 2 bad or empty data.");
  c->callback([&] {
    run = [&] {
      DatasetSplit split;
      if (!o.manifest.empty())
        split = load_manifest(o.manifest, "manifest");
      else if (!o.data.empty())
        split = split_named(load_dataset(o.data), o.split);
      else
        throw UsageError("stats needs --data or --manifest");
      std::cout << format_stats(compute_stats(split));
    };
  });
}

// ---- augment-preview -------------------------------------------------------

struct AugmentOpts {
  std::string data, id, out;
  int count = 8, size = 0;
  std::uint64_t seed = 0;
};

void add_augment_preview(CLI::App& app, AugmentOpts& o, const std::string& profile, std::function<void()>& run) {
  auto* c = app.add_subcommand("augment-preview", "Write augmented variants of one training sample");
  c->add_option("--data", o.data, "Dataset directory (pool is its train split)")->required();
  c->add_option("--id", o.id, "Image id to augment")->required();
  c->add_option("--out", o.out, "Output directory")->required();
  c->add_option("--count", o.count, "Number of variants")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--seed", o.seed, "Augmentation seed")->capture_default_str();
  c->add_option("--size", o.size, "Working size (default 224, or 56 with --profile desk)");
  c->footer("Writes <id>_augN.png and labels.txt (manifest lines at working size). Exit codes: 0 ok, 1 usage, 2 data.");
  c->callback([&] {
    run = [&] {
      const int size = o.size ? o.size : RunConfig::profile_named(profile).model.input_size;
      const auto ds = load_dataset(o.data);
      DatasetSplit all{"all", ds.train.records};
      for (const auto* s : {&ds.val, &ds.test}) all.records.insert(all.records.end(), s->records.begin(), s->records.end());
      const auto it = std::find_if(all.records.begin(), all.records.end(),
                                   [&](const AnnotationRecord& r) { return r.image_id == o.id; });
      if (it == all.records.end()) throw MissingPrediction("no record for " + o.id);
      const auto [img, label] = resize_record(*it, read_png(fs::path(o.data) / (o.id + ".png")), size);
      const auto pool = build_pool(ds.train, size);
      fs::create_directories(o.out);
      DatasetSplit labels{"labels", {}};
      for (int i = 0; i < o.count; ++i) {
        Rng rng(derive_seed(o.seed, {static_cast<std::uint64_t>(i)}));
        const auto a = augment_sample(img, label, pool, {1.0, o.seed}, rng);
        const std::string name = o.id + "_aug" + std::to_string(i);
        write_png(fs::path(o.out) / (name + ".png"), a.image);
        labels.records.push_back({name, size, size, label_side(a.label), a.label});
      }
      save_manifest(fs::path(o.out) / "labels.txt", labels);
    };
  });
}

// ---- train -----------------------------------------------------------------

struct TrainOpts {
  std::string data, out, config, history;
  std::vector<std::string> sets;
  // Shown in --help with the paper profile's values; only flags given
  // explicitly override the selected profile.
  RunConfig shown = RunConfig::paper();
  std::string widths = "16,32,64,96", head = "four";
  bool no_normalize = false;
};

void add_train(CLI::App& app, TrainOpts& o, const std::string& profile, std::function<void()>& run) {
  auto* c = app.add_subcommand("train", "Train the displacement regressor");
  auto& s = o.shown;
  c->add_option("--data", o.data, "Dataset directory (train.txt, val.txt, test.txt, PNGs)")->required();
  c->add_option("--out", o.out, "Checkpoint path for the best-validation parameters")->required();
  c->add_option("--config", o.config, "key = value config file applied on top of the profile");
  c->add_option("--set", o.sets, "Extra key=value settings, applied last");
  c->add_option("--history", o.history, "Write per-epoch history here");
  auto* epochs = c->add_option("--epochs", s.train.epochs, "Epochs")->capture_default_str();
  auto* batch = c->add_option("--batch-size", s.train.batch_size, "Batch size")->capture_default_str();
  auto* lr0 = c->add_option("--lr0", s.train.lr0, "Initial learning rate")->capture_default_str();
  auto* lr_min = c->add_option("--lr-min", s.train.lr_min, "Final learning rate (cosine)")->capture_default_str();
  auto* wd = c->add_option("--weight-decay", s.train.weight_decay, "AdamW weight decay")->capture_default_str();
  auto* b1 = c->add_option("--beta1", s.train.beta1, "AdamW beta1")->capture_default_str();
  auto* b2 = c->add_option("--beta2", s.train.beta2, "AdamW beta2")->capture_default_str();
  auto* lambda = c->add_option("--lambda", s.model.lambda, "Photometric loss weight")->capture_default_str();
  auto* prob = c->add_option("--augment-probability", s.train.augment.probability, "Augmentation probability")
                   ->capture_default_str();
  auto* aseed = c->add_option("--augment-seed", s.train.augment.seed, "Augmentation seed")->capture_default_str();
  auto* seed = c->add_option("--seed", s.train.seed, "Init and shuffling seed")->capture_default_str();
  auto* size = c->add_option("--input-size", s.model.input_size, "Network input size")->capture_default_str();
  auto* channels = c->add_option("--channels", s.model.channels, "1 (grayscale) or 3")->capture_default_str();
  auto* widths = c->add_option("--widths", o.widths, "Block widths, comma separated")->capture_default_str();
  auto* head = c->add_option("--head", o.head, "four or three")->capture_default_str();
  auto* threads = c->add_option("--threads", s.train.threads, "Gradient worker threads")->capture_default_str();
  auto* no_norm = c->add_flag("--no-normalize", o.no_normalize, "Regress pixels instead of 2d/h");
  c->footer("Exit codes: 0 ok, 1 usage, 2 bad data, 3 non-finite loss or gradient.");
  c->callback([=, &o, &profile, &run] {
    run = [=, &o, &profile] {
      RunConfig rc = RunConfig::profile_named(profile);
      if (!o.config.empty()) {
        std::istringstream in(read_text(o.config));
        rc = parse_config(in, rc);
      }
      const auto& s = o.shown;
      auto set = [&](CLI::Option* opt, const std::string& key, const std::string& v) {
        if (opt->count()) apply_setting(rc, key, v);
      };
      set(epochs, "epochs", std::to_string(s.train.epochs));
      set(batch, "batch_size", std::to_string(s.train.batch_size));
      set(lr0, "lr0", text::format_double(s.train.lr0));
      set(lr_min, "lr_min", text::format_double(s.train.lr_min));
      set(wd, "weight_decay", text::format_double(s.train.weight_decay));
      set(b1, "beta1", text::format_double(s.train.beta1));
      set(b2, "beta2", text::format_double(s.train.beta2));
      set(lambda, "lambda", text::format_double(s.model.lambda));
      set(prob, "augment.probability", text::format_double(s.train.augment.probability));
      set(aseed, "augment.seed", std::to_string(s.train.augment.seed));
      set(seed, "seed", std::to_string(s.train.seed));
      set(size, "input_size", std::to_string(s.model.input_size));
      set(channels, "channels", std::to_string(s.model.channels));
      set(widths, "widths", o.widths);
      set(head, "head", o.head);
      set(threads, "threads", std::to_string(s.train.threads));
      if (no_norm->count()) rc.model.normalize = false;
      for (const auto& kv : o.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got " + kv);
        apply_setting(rc, text::trim(std::string_view(kv).substr(0, eq)),
                      text::trim(std::string_view(kv).substr(eq + 1)));
      }
      rc.check();
      const int n = rc.model.input_size, ch = rc.model.channels;
      const auto ds = load_dataset(o.data);
      const auto train_set = load_samples(o.data, ds.train, n, ch);
      const auto val_set = load_samples(o.data, ds.val, n, ch);
      std::cerr << format_config(rc);
      const auto result = train(train_set, val_set, rc, [](const EpochRecord& e) {
        std::cerr << "epoch " << e.epoch << " lr " << text::format_double(e.lr) << " train_loss "
                  << text::format_double(e.train_loss) << " val_mce "
                  << (std::isnan(e.val_mce) ? std::string("nan") : text::format_double(e.val_mce)) << "\n";
      });
      save_checkpoint(o.out, result.best);
      if (!o.history.empty()) write_file_atomic(o.history, format_history(result));
      std::cout << "best_epoch " << result.best_epoch << "\n";
      if (!ds.test.records.empty()) {
        const auto test_set = load_samples(o.data, ds.test, n, ch);
        std::cout << "test_mce " << text::format_double(mean_mce(result.best, rc.model, test_set)) << "\n";
      }
    };
  });
}

// ---- eval / bench ----------------------------------------------------------

struct EvalOpts {
  std::string data, split = "test";
  std::vector<std::string> checkpoints, predictions;
  std::optional<double> threshold;
  int size = 0;
  bool per_image = false;
};

std::pair<std::string, std::string> named(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos) return {fs::path(s).stem().string(), s};
  return {s.substr(0, eq), s.substr(eq + 1)};
}

void add_eval(CLI::App& app, EvalOpts& o, const std::string& profile, std::function<void()>& run) {
  auto* c = app.add_subcommand("eval", "Mean corner error of models and prediction files on a split");
  c->add_option("--data", o.data, "Dataset directory")->required();
  c->add_option("--split", o.split, "Split to score")->capture_default_str();
  c->add_option("--checkpoint", o.checkpoints, "[name=]checkpoint, repeatable");
  c->add_option("--predictions", o.predictions, "[name=]file of `image_id d0 d1 d2 d3` lines, repeatable");
  c->add_option("--threshold", o.threshold, "Exclude images whose error exceeds this many pixels (off by default)");
  c->add_option("--size", o.size, "Working size for prediction files (default 224, or 56 with --profile desk)");
  c->add_flag("--per-image", o.per_image, "Also print per-image errors");
  c->footer("Rows: checkpoints first, then prediction files, each in the order given. "
            "Exit codes: 0 ok, 1 usage, 2 bad data or missing prediction.");
  c->callback([&] {
    run = [&] {
      if (o.checkpoints.empty() && o.predictions.empty()) throw UsageError("eval needs --checkpoint or --predictions");
      const auto split = split_named(load_dataset(o.data), o.split);
      std::vector<EvalResult> results;
      for (const auto& spec : o.checkpoints) {
        const auto [name, path] = named(spec);
        const auto params = load_checkpoint(path);
        const auto cfg = ModelConfig::from_fingerprint(params.fingerprint);
        const auto samples = load_samples(o.data, split, cfg.input_size, cfg.channels);
        results.push_back(evaluate(params, cfg, samples, o.threshold, name));
      }
      const int size = o.size ? o.size : RunConfig::profile_named(profile).model.input_size;
      for (const auto& spec : o.predictions) {
        const auto [name, path] = named(spec);
        std::istringstream in(read_text(path));
        results.push_back(evaluate(parse_prediction_file(in), split, size, o.threshold, name));
      }
      std::cout << emit_report(results);
      for (const auto& r : results)
        if (r.excluded) std::cout << r.method << ": excluded " << r.excluded << " of " << r.per_image.size() << "\n";
      if (o.per_image)
        for (const auto& r : results)
          for (const auto& e : r.per_image)
            std::cout << r.method << " " << e.image_id << " " << text::format_double(e.mce)
                      << (e.included ? "" : " excluded") << "\n";
    };
  });
}

struct BenchOpts {
  std::string checkpoint;
  int warmup = 10, iterations = 100;
  std::uint64_t seed = 0;
};

void add_bench(CLI::App& app, BenchOpts& o, const std::string& profile, std::function<void()>& run) {
  auto* c = app.add_subcommand("bench", "Forward-pass latency (single thread)");
  c->add_option("--checkpoint", o.checkpoint, "Model to time (default: the profile's architecture, random weights)");
  c->add_option("--warmup", o.warmup, "Discarded warm-up runs")->capture_default_str();
  c->add_option("--iterations", o.iterations, "Timed runs")->capture_default_str()->check(CLI::PositiveNumber);
  c->add_option("--seed", o.seed, "Seed for the input image and random weights")->capture_default_str();
  c->footer("Exit codes: 0 ok, 1 usage, 2 bad checkpoint.");
  c->callback([&] {
    run = [&] {
      ModelConfig cfg = RunConfig::profile_named(profile).model;
      ModelParams params;
      std::string name = profile + " architecture";
      if (!o.checkpoint.empty()) {
        params = load_checkpoint(o.checkpoint);
        cfg = ModelConfig::from_fingerprint(params.fingerprint);
        name = fs::path(o.checkpoint).stem().string();
      } else {
        params = init_params(cfg, o.seed);
      }
      auto spec = SyntheticSceneSpec::from_seed(o.seed, cfg.input_size);
      const auto img = with_channels(generate_synthetic(spec).image, cfg.channels);
      EvalResult r;
      r.method = name;
      r.aggregate = std::nan("");
      r.latency = measure_latency(params, cfg, img, o.warmup, o.iterations);
      std::cout << emit_report({r});
      std::cout << "median_ms " << format_fixed(r.latency->median_ms) << "\nparams " << params.values.size() << "\n";
    };
  });
}

// ---- serve -----------------------------------------------------------------

struct ServeOpts {
  ServiceConfig cfg;
  std::string checkpoint;
};

void add_serve(CLI::App& app, ServeOpts& o, std::function<void()>& run) {
  auto* c = app.add_subcommand("serve", "Run the annotation HTTP service");
  c->add_option("--images", o.cfg.images, "Directory of <id>.png images")->required();
  c->add_option("--store", o.cfg.store, "Annotation manifest (created on first save)")->required();
  c->add_option("--checkpoint", o.checkpoint, "Model for /predict suggestions");
  c->add_option("--port", o.cfg.port, "Port")->capture_default_str();
  c->add_option("--host", o.cfg.host, "Bind address")->capture_default_str();
  c->add_option("--size", o.cfg.working_size, "Working resolution for images and previews")->capture_default_str();
  c->footer("Exit codes: 0 stopped, 1 usage, 2 bad store or images, 4 cannot bind.");
  c->callback([&] {
    run = [&] {
      if (!o.checkpoint.empty()) o.cfg.checkpoint = o.checkpoint;
      AnnotationService service(o.cfg);
      std::cerr << "listening on http://" << o.cfg.host << ":" << o.cfg.port << "\n";
      if (!serve(service)) {
        std::cerr << "error: cannot listen on " << o.cfg.host << ":" << o.cfg.port << "\n";
        std::exit(4);
      }
    };
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-view shelf rectification toolkit"};
  app.require_subcommand(1);
  app.footer("Exit codes: 0 success, 1 usage error, 2 data or invariant error, 3 numeric failure.");
  std::string profile = "paper";
  app.add_option("--profile", profile, "Hyperparameter profile")
      ->check(CLI::IsMember({"paper", "desk"}))
      ->capture_default_str();

  std::function<void()> run;
  ConvertOpts convert;
  RectifyOpts rectify;
  SynthOpts synth;
  StatsOpts stats;
  AugmentOpts augment;
  TrainOpts train_opts;
  EvalOpts eval;
  BenchOpts bench;
  ServeOpts serve_opts;
  add_convert(app, convert, run);
  add_rectify(app, rectify, run);
  add_synth(app, synth, profile, run);
  add_stats(app, stats, run);
  add_augment_preview(app, augment, profile, run);
  add_train(app, train_opts, profile, run);
  add_eval(app, eval, profile, run);
  add_bench(app, bench, profile, run);
  add_serve(app, serve_opts, run);
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (run) run();
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::numeric ? kNumeric : kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
}
