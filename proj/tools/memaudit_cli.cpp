// memaudit command-line tool.
//
// Exit codes: 0 success, 1 runtime or I/O failure, 2 invalid input.

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "memaudit/memaudit.hpp"

namespace ma = memaudit;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::uint64_t seed = 42;
  std::size_t threads = 0;
  std::string output_dir;
};

fs::path output_path(const std::string& out, const Globals& g) {
  if (!out.empty()) return out;
  if (!g.output_dir.empty()) return g.output_dir;
  throw ma::ValidationError("no output directory: pass --out or --output-dir");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_level(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ma::ValidationError("not a number: '" + s + "'");
  }
  return v;
}

ma::ReferenceEmbedderConfig load_embedder_config(const std::string& path) {
  if (path.empty()) return {};
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ma::read_file_bytes(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ma::ValidationError(path + ": invalid JSON: " + e.what());
  }
  return ma::embedder_config_from_json(j);
}

std::vector<ma::ImageSlice> read_images(const ma::DatasetManifest& m) {
  std::vector<ma::ImageSlice> images;
  images.reserve(m.samples.size());
  for (const auto& s : m.samples) images.push_back(ma::read_image(m.resolve(s.path)));
  return images;
}

// Feature manifests (with layers) load MATF matrices; image manifests are
// embedded with the reference embedder.
ma::FeatureSet load_or_embed(const ma::DatasetManifest& m, const ma::ReferenceEmbedderConfig& cfg,
                             std::size_t threads) {
  if (!m.layers.empty()) return ma::load_external_features(m);
  return ma::embed_images(read_images(m), m, cfg, threads);
}

// ---------------------------------------------------------------------------

int cmd_embed(const std::string& images, const std::string& config, const std::string& out, const Globals& g) {
  const auto cfg = load_embedder_config(config);
  const auto dir = output_path(out, g);
  const auto manifest = ma::read_manifest(images);
  const auto fs = ma::embed_images(read_images(manifest), manifest, cfg, g.threads);
  const auto target = dir / fs::path(images).filename();
  ma::write_feature_set(target, fs);
  std::cout << "embedded " << fs.n_samples() << " samples into " << fs.layers.size() << " layers -> "
            << target.string() << "\n";
  return 0;
}

int cmd_audit(const std::string& train_path, const std::string& test_path, const std::string& calibration,
              double threshold, const std::string& config, std::size_t iterations, const std::string& out,
              const Globals& g) {
  const auto dir = output_path(out, g);
  const auto cfg = load_embedder_config(config);
  ma::AuditConfig acfg;
  acfg.threshold = threshold;
  acfg.threads = g.threads;
  acfg.bootstrap.seed = g.seed;
  acfg.bootstrap.n_iterations = iterations;
  if (!calibration.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(ma::read_file_bytes(calibration));
    } catch (const nlohmann::json::parse_error& e) {
      throw ma::ValidationError(calibration + ": invalid JSON: " + e.what());
    }
    acfg.calibration = ma::calibration_from_json(j);
  }
  const auto train = load_or_embed(ma::read_manifest(train_path), cfg, g.threads);
  const auto test = load_or_embed(ma::read_manifest(test_path), cfg, g.threads);
  const auto report = ma::audit(train, test, acfg);

  ma::write_report(dir / "report.csv", report, ma::ReportFormat::csv);
  ma::write_report(dir / "report.json", report, ma::ReportFormat::json);
  ma::atomic_write_file(dir / "calibration.json", ma::calibration_to_json(report.calibration).dump(2) + "\n");
  std::cout << "audited " << report.samples.size() << " test samples against " << report.n_train
            << " train samples: mean MI " << ma::format_double(report.mean_mi) << ", mean ONI "
            << ma::format_double(report.mean_oni) << ", flagged " << report.flagged_count() << "\n";
  return 0;
}

int cmd_inject(const std::string& train_path, const std::string& test_path, double level, const std::string& aug_tag,
               const std::string& out, const Globals& g) {
  const auto aug = ma::parse_augmentation(aug_tag);
  const auto dir = output_path(out, g);
  const auto train_m = ma::read_manifest(train_path);
  const auto test_m = ma::read_manifest(test_path);
  const auto train = read_images(train_m);
  const auto test = read_images(test_m);
  auto [images, plan] = ma::inject_duplicates(train, test, level, aug, g.seed, g.threads);

  ma::DatasetManifest m = test_m;
  m.name = test_m.name + "_contaminated";
  m.layers.clear();
  m.features.clear();
  m.base_dir = dir;
  // Stage every file in memory first so a failure leaves nothing behind.
  std::vector<std::pair<fs::path, std::string>> files;
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    auto& s = m.samples[i];
    const fs::path src = plan.labels[i] ? train_m.resolve(train_m.samples[plan.source_map.at(i)].path)
                                        : test_m.resolve(s.path);
    std::string name = "images/" + std::to_string(i) + "_" + src.filename().string();
    if (plan.labels[i] && aug.kind != ma::AugmentationKind::clean) {
      name = "images/" + std::to_string(i) + "_" + src.stem().string() + ".matf";
      ma::Tensor t{ma::DType::float32, {images[i].height, images[i].width}, images[i].pixels};
      files.emplace_back(dir / name, ma::encode_tensor(t));
    } else {
      files.emplace_back(dir / name, ma::read_file_bytes(src));
    }
    s.path = name;
  }
  for (const auto& [path, bytes] : files) ma::atomic_write_file(path, bytes);
  ma::atomic_write_file(dir / "plan.json", ma::plan_to_json(plan).dump(2) + "\n");
  ma::write_manifest(dir / "test.json", m);
  std::cout << "replaced " << plan.n_injected() << " of " << m.samples.size() << " test samples ("
            << ma::to_tag(aug) << ") -> " << (dir / "test.json").string() << "\n";
  return 0;
}

ma::ImageDataset load_dataset(const std::string& spec, const Globals& g, std::size_t index) {
  if (spec == "synthetic" || spec.rfind("synthetic:", 0) == 0) {
    ma::SyntheticConfig cfg;
    cfg.seed = spec == "synthetic" ? g.seed : static_cast<std::uint64_t>(parse_level(spec.substr(10)));
    auto c = ma::generate_synthetic(cfg);
    std::string name = spec == "synthetic" ? "synthetic" : "synthetic_" + spec.substr(10);
    return {name, std::move(c.train), std::move(c.test), std::move(c.train_ids), std::move(c.test_ids)};
  }
  const fs::path dir(spec);
  const auto train_m = ma::read_manifest(dir / "train.json");
  const auto test_m = ma::read_manifest(dir / "test.json");
  ma::ImageDataset d;
  d.name = train_m.name.empty() ? "dataset" + std::to_string(index) : train_m.name;
  d.train = read_images(train_m);
  d.test = read_images(test_m);
  for (const auto& s : train_m.samples) d.train_ids.push_back(s.id);
  for (const auto& s : test_m.samples) d.test_ids.push_back(s.id);
  return d;
}

int cmd_benchmark(const std::string& datasets, const std::string& levels, const std::string& augs,
                  const std::string& config, std::size_t iterations, const std::string& out, const Globals& g) {
  const auto dir = output_path(out, g);
  ma::SweepConfig cfg;
  cfg.seed = g.seed;
  cfg.threads = g.threads;
  cfg.embedder = load_embedder_config(config);
  cfg.audit.bootstrap.n_iterations = iterations;
  cfg.output_dir = dir;
  cfg.levels.clear();
  for (const auto& l : split_list(levels)) cfg.levels.push_back(parse_level(l));
  if (augs != "all") {
    cfg.augmentations.clear();
    for (const auto& a : split_list(augs)) cfg.augmentations.push_back(ma::parse_augmentation(a));
  }
  const auto specs = split_list(datasets);
  if (specs.empty()) throw ma::ValidationError("benchmark: --datasets is empty");
  std::vector<ma::ImageDataset> ds;
  for (std::size_t i = 0; i < specs.size(); ++i) ds.push_back(load_dataset(specs[i], g, i));

  const auto result = ma::run_sweep(ds, cfg);
  ma::write_sweep_outputs(dir, result);
  std::cout << "benchmark: " << result.cells.size() << " cells -> " << (dir / "sweep_long.csv").string() << "\n";
  for (const auto& d : result.datasets) {
    for (const auto& a : result.augmentations) {
      std::cout << "  " << d << " " << a << " AUC";
      for (double l : result.levels) std::cout << " " << ma::format_double(result.value(d, l, a, "auc"));
      std::cout << "\n";
    }
  }
  return 0;
}

int cmd_gen_synthetic(std::size_t n, std::size_t size, const std::string& out, const Globals& g) {
  const auto dir = output_path(out, g);
  ma::SyntheticConfig cfg;
  cfg.n = n;
  cfg.size = size;
  cfg.seed = g.seed;
  const auto corpus = ma::generate_synthetic(cfg);
  auto write_split = [&](const std::vector<ma::ImageSlice>& images, const std::vector<std::string>& ids,
                         ma::Split split) {
    ma::DatasetManifest m;
    m.name = "synthetic";
    m.split = split;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const std::string rel = "images/" + ids[i] + ".pgm";
      ma::write_pgm(dir / rel, images[i]);
      m.samples.push_back({ids[i], rel});
    }
    ma::write_manifest(dir / (ma::to_string(split) + ".json"), m);
  };
  write_split(corpus.train, corpus.train_ids, ma::Split::train);
  write_split(corpus.test, corpus.test_ids, ma::Split::test);
  std::cout << "generated " << corpus.train.size() << " train + " << corpus.test.size() << " test images in "
            << dir.string() << "\n";
  return 0;
}

int cmd_report(const std::string& input, const std::string& format, const std::string& out) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ma::read_file_bytes(input));
  } catch (const nlohmann::json::parse_error& e) {
    throw ma::ValidationError(input + ": invalid JSON: " + e.what());
  }
  const auto report = ma::report_from_json(j);
  if (!out.empty()) ma::write_report(out, report, ma::parse_report_format(format));
  const auto& sum = j.at("summary");
  std::cout << "samples " << report.samples.size() << "\n"
            << "layers " << ma::detail::join_ids(report.layer_ids) << "\n"
            << "mean_mi " << ma::format_double(report.mean_mi) << "\n"
            << "mean_oni " << ma::format_double(report.mean_oni) << "\n"
            << "threshold " << ma::format_double(report.threshold) << "\n"
            << "flagged " << sum.value("n_flagged", report.flagged_count()) << "\n"
            << "mu_null " << ma::format_double(report.calibration.mu_null) << "\n"
            << "sigma_null " << ma::format_double(report.calibration.sigma_null) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Memorization audit toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (0 = MEMAUDIT_THREADS or hardware)")->capture_default_str();
  app.add_option("--output-dir", g.output_dir, "Default output directory");

  std::string out, config, train, test, calibration, images, aug = "clean", datasets = "synthetic",
                                                                levels = "0.05,0.15,0.30,0.45", augs = "all",
                                                                input, format = "csv";
  double threshold = ma::kDefaultOniThreshold, level = 0.30;
  std::size_t iterations = 10, n = 200, size = 128;

  auto* embed = app.add_subcommand("embed", "Embed images with the reference embedder");
  embed->add_option("--images", images, "Image manifest")->required();
  embed->add_option("--config", config, "Embedder config JSON");
  embed->add_option("--out", out, "Output directory");

  auto* audit = app.add_subcommand("audit", "Score test samples against train");
  audit->add_option("--train", train, "Train manifest (images or features)")->required();
  audit->add_option("--test", test, "Test manifest (images or features)")->required();
  audit->add_option("--calibration", calibration, "Reuse a calibration JSON");
  audit->add_option("--threshold", threshold, "Flag samples with ONI below this")->capture_default_str();
  audit->add_option("--config", config, "Embedder config JSON for image manifests");
  audit->add_option("--iterations", iterations, "Bootstrap iterations")->capture_default_str();
  audit->add_option("--out", out, "Output directory");

  auto* inject = app.add_subcommand("inject", "Replace test images by copies of train images");
  inject->add_option("--train", train, "Train image manifest")->required();
  inject->add_option("--test", test, "Test image manifest")->required();
  inject->add_option("--level", level, "Fraction of test samples to replace")->capture_default_str();
  inject->add_option("--aug", aug, "Augmentation tag")->capture_default_str();
  inject->add_option("--out", out, "Output directory");

  auto* bench = app.add_subcommand("benchmark", "Run the duplication sweep");
  bench->add_option("--datasets", datasets, "Comma list: synthetic, synthetic:<seed>, or dirs with train/test.json")
      ->capture_default_str();
  bench->add_option("--levels", levels, "Comma list of duplication levels")->capture_default_str();
  bench->add_option("--augs", augs, "'all' or comma list of augmentation tags")->capture_default_str();
  bench->add_option("--config", config, "Embedder config JSON");
  bench->add_option("--iterations", iterations, "Bootstrap iterations")->capture_default_str();
  bench->add_option("--out", out, "Output directory");

  auto* gen = app.add_subcommand("gen-synthetic", "Generate a synthetic PGM corpus");
  gen->add_option("--n", n, "Number of images")->capture_default_str();
  gen->add_option("--size", size, "Image side length")->capture_default_str();
  gen->add_option("--out", out, "Output directory");

  auto* rep = app.add_subcommand("report", "Summarize or convert an audit report");
  rep->add_option("--input", input, "report.json from audit")->required();
  rep->add_option("--format", format, "csv or json")->capture_default_str();
  rep->add_option("--out", out, "Write the converted report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*embed) return cmd_embed(images, config, out, g);
    if (*audit) return cmd_audit(train, test, calibration, threshold, config, iterations, out, g);
    if (*inject) return cmd_inject(train, test, level, aug, out, g);
    if (*bench) return cmd_benchmark(datasets, levels, augs, config, iterations, out, g);
    if (*gen) return cmd_gen_synthetic(n, size, out, g);
    if (*rep) return cmd_report(input, format, out);
  } catch (const ma::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
