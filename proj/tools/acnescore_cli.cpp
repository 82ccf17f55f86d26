// acnescore-cli: dataset preparation, training, evaluation, scoring and
// serving from the command line.
//
// Exit codes: 0 success, 2 input error, 3 training failure, 4 scoring failure.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <random>

#include "CLI11.hpp"

#include "acnescore/acnescore.hpp"
#include "acnescore/patch_manifest.hpp"
#include "acnescore/service.hpp"
#include "acnescore/settings.hpp"
#include "acnescore/synthetic.hpp"

namespace fs = std::filesystem;
using namespace acnescore;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitTraining = 3;
constexpr int kExitScoring = 4;

struct ExitCode {
  int code;
};

struct Options {
  std::string config;
  // shared
  std::string landmarks;
  std::string backbone;
  bool test_backend = false;
  std::string head;
  std::string out;
  // extract-patches
  std::string manifest;
  bool overlays = false;
  // augment / train
  std::string patches;
  std::optional<int> n_mild;
  std::optional<int> n_max;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> learning_rate;
  std::optional<double> validation_fraction;
  // evaluate / score
  std::string golden;
  std::string report;
  std::string image;
  // synth
  int images = 8;
};

/// Flags > config file > built-in defaults.
KeyValueConfig settings_from(const Options& o) {
  KeyValueConfig kv = o.config.empty() ? KeyValueConfig{} : load_settings(o.config);
  if (!o.landmarks.empty()) kv.set("landmark_dir", o.landmarks);
  if (!o.backbone.empty()) kv.set("backbone_path", o.backbone);
  if (o.test_backend) kv.set("test_backend", "true");
  if (!o.head.empty()) kv.set("head_path", o.head);
  if (o.n_mild) kv.set("n_mild", std::to_string(*o.n_mild));
  if (o.n_max) kv.set("n_max", std::to_string(*o.n_max));
  if (o.seed) kv.set("seed", std::to_string(*o.seed));
  if (o.epochs) kv.set("epochs", std::to_string(*o.epochs));
  if (o.batch_size) kv.set("batch_size", std::to_string(*o.batch_size));
  if (o.learning_rate) kv.set("learning_rate", std::to_string(*o.learning_rate));
  if (o.validation_fraction) kv.set("validation_fraction", std::to_string(*o.validation_fraction));
  return kv;
}

void fail_json(const std::string& code, const std::string& message) {
  std::cerr << nlohmann::json{{"error", code}, {"message", message}}.dump() << '\n';
}

// ---------------------------------------------------------------------------

int run_extract(const Options& o) {
  const auto kv = settings_from(o);
  const auto manifest = load_manifest(o.manifest);
  for (const auto& r : manifest.rejected) {
    std::cerr << "skip line " << r.line << " (" << r.image_id << "): " << to_string(r.reason) << '\n';
  }
  if (manifest.accepted.empty()) {
    std::cerr << "manifest has no usable rows\n";
    return kExitInput;
  }

  // One label per image: the rounded mean over its raters.
  std::vector<std::string> order;
  std::map<std::string, std::pair<fs::path, std::vector<int>>> by_image;
  for (const auto& row : manifest.accepted) {
    auto [it, inserted] = by_image.try_emplace(row.image_id, row.path, std::vector<int>{});
    if (inserted) order.push_back(row.image_id);
    it->second.second.push_back(row.label.value());
  }

  const auto detectors = make_detectors(kv);
  const auto quality = QualityConfig::from(kv);
  const fs::path out_dir = o.out;
  fs::create_directories(out_dir);
  std::vector<PatchRow> rows;
  std::size_t ok = 0;
  for (const auto& id : order) {
    const auto& [path, labels] = by_image.at(id);
    double mean = 0.0;
    for (int l : labels) mean += l;
    mean /= static_cast<double>(labels.size());
    const SeverityLabel label(static_cast<int>(std::floor(mean + 0.5)));
    try {
      const auto img = read_image(path);
      const auto verdict = quality_filter(img, quality);
      if (!verdict.keep) {
        std::cerr << id << ": rejected by quality filter (" << to_string(verdict.reason) << ")\n";
        continue;
      }
      const auto patches = extract_patches(*detectors.landmarks, *detectors.eyes, img, id, label);
      for (const auto& p : patches) {
        const std::string name = id + "_" + std::string(to_string(p.kind)) + ".png";
        write_png(out_dir / name, p.pixels);
        rows.push_back({name, id, p.kind, 0, label});
      }
      if (o.overlays) write_png(out_dir / (id + "_overlay.png"), draw_patch_overlay(img, patches));
      std::cout << id << ": " << patches.size() << " patches (" << to_string(patches.front().path) << ")\n";
      ++ok;
    } catch (const Error& e) {
      std::cerr << id << ": " << to_string(e.code()) << ": " << e.what() << '\n';
    }
  }
  io::write_atomic(out_dir / "patches.csv", patch_manifest_text(rows));
  std::cout << "extracted " << rows.size() << " patches from " << ok << " of " << order.size() << " images\n";
  return ok > 0 ? 0 : kExitInput;
}

int run_augment(const Options& o) {
  const auto kv = settings_from(o);
  const auto rows = load_patch_manifest(o.patches);
  if (rows.empty()) throw Error(ErrorCode::EmptyDataset, "patch manifest is empty");
  std::vector<SeverityLabel> labels;
  for (const auto& r : rows) {
    if (!r.label) throw Error(ErrorCode::MissingLabel, "patch " + r.patch_path.string() + " has no label");
    labels.push_back(*r.label);
  }
  const auto hist = class_distribution(labels);
  const auto plan = balance_plan(hist, kv.get_number<int>("n_mild", 2), kv.get_number<int>("n_max", 10));
  const auto achieved = plan.achieved(hist);

  std::cout << "target " << plan.target << "  cap " << plan.cap << '\n';
  std::cout << "class  count  uncapped  rolls  achieved\n";
  for (std::size_t c = 0; c < 5; ++c) {
    std::printf("%-5zu  %5zu  %8d  %5d  %8zu\n", c + 1, hist.counts[c], plan.uncapped[c], plan.rolls_per_class[c],
                achieved[c]);
  }
  std::fflush(stdout);

  const fs::path out_dir = o.out;
  fs::create_directories(out_dir);
  std::vector<PatchRow> out_rows;
  for (const auto& r : rows) {
    const SkinPatch p = load_patch(r);
    const auto group = augment_patch_set(std::span(&p, 1), plan);
    for (std::size_t k = 0; k < group.size(); ++k) {
      const std::string name = r.image_id + "_" + std::string(to_string(r.kind)) + "_roll" + std::to_string(k) + ".png";
      write_png(out_dir / name, group[k].pixels);
      out_rows.push_back({name, r.image_id, r.kind, r.shift + group[k].shift, r.label});
    }
  }
  io::write_atomic(out_dir / "patches.csv", patch_manifest_text(out_rows));
  std::cout << "wrote " << out_rows.size() << " patches\n";
  return 0;
}

int run_train(const Options& o) {
  const auto kv = settings_from(o);
  const auto cfg = train_config_from(kv);
  const auto rows = load_patch_manifest(o.patches);
  const auto embedder = make_embedder(kv);
  std::vector<std::pair<EmbeddingVector, SeverityLabel>> features;
  for (const auto& r : rows) {
    if (!r.label) throw Error(ErrorCode::MissingLabel, "patch " + r.patch_path.string() + " has no label");
    const auto p = load_patch(r);
    features.emplace_back(embed(*embedder, resize_square(p.pixels, embedder->input_side())), *r.label);
  }
  if (features.empty()) throw Error(ErrorCode::EmptyDataset, "patch manifest is empty");
  TrainResult result;
  try {
    result = train_head(features, cfg);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::DivergenceError) {
      std::cerr << "training diverged: " << e.what() << '\n';
      throw ExitCode{kExitTraining};
    }
    throw;
  }
  save_head(result.head, o.out);
  std::cout << "train_mse " << result.train_loss;
  if (result.validation_loss) std::cout << "  validation_mse " << *result.validation_loss;
  std::cout << "\nhead " << o.out << "  version " << head_version(result.head) << '\n';
  return 0;
}

int run_evaluate(const Options& o) {
  const auto kv = settings_from(o);
  const auto golden = build_golden(o.golden);
  const auto pipeline = make_pipeline(kv);
  const auto summary = evaluate_model(golden, [&](const GoldenRecord& g) {
    return pipeline->score(read_image(g.path), g.image_id).final_score;
  });
  auto report = to_json(summary);
  report["pipeline_version"] = pipeline->version();
  io::write_atomic(o.report, report.dump(2) + "\n");
  print_summary(std::cout, summary);
  for (const auto& f : summary.failed) std::cerr << "failed " << f.image_id << ": " << f.reason << '\n';
  return 0;
}

int run_score(const Options& o) {
  const auto kv = settings_from(o);
  const auto pipeline = make_pipeline(kv);
  ImageBuffer img;
  try {
    img = decode_image(io::read_bytes(o.image));
  } catch (const Error& e) {
    fail_json(e.code() == ErrorCode::IoError ? "io_error" : "undecodable_image", e.what());
    return kExitInput;
  }
  try {
    const auto result = pipeline->score(img, fs::path(o.image).stem().string());
    std::cout << score_response_json(result, pipeline->version()).dump() << '\n';
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NoFaceFound) {
      fail_json("no_face", e.what());
      return kExitScoring;
    }
    if (e.code() == ErrorCode::GeometryError) {
      fail_json("insufficient_skin", e.what());
      return kExitScoring;
    }
    throw;
  }
  return 0;
}

int run_serve(const Options& o) {
  const auto kv = settings_from(o);
  auto service = ScoringService::from_settings(kv);
  const auto health = service.health();
  if (health.status != 200) std::cerr << "warning: scoring unavailable: " << health.body.value("reason", "") << '\n';
  httplib::Server server;
  service.mount(server);
  const auto [host, port] = split_listen_addr(service.options().listen_addr);
  std::cout << "listening on " << host << ':' << port << std::endl;
  if (!server.listen(host, port)) {
    std::cerr << "cannot bind " << host << ':' << port << '\n';
    return kExitInput;
  }
  return 0;
}

/// Synthetic demo data: faces with known landmarks, a training manifest, a
/// golden panel file and a settings file wired to the sidecar detector.
int run_synth(const Options& o) {
  const fs::path out_dir = o.out;
  fs::create_directories(out_dir / "landmarks");
  std::mt19937_64 rng(o.seed.value_or(7));
  std::string manifest = "image_id,path,rater_id,label\n";
  std::string golden = "image_id,path";
  for (std::size_t r = 1; r <= kPanelSize; ++r) golden += ",derm" + std::to_string(r);
  golden += '\n';
  for (int k = 0; k < o.images; ++k) {
    const int lesions = static_cast<int>(rng() % 16);
    const int label = std::min(5, 1 + lesions / 3);
    const auto face = synthetic::frontal_face(512, lesions, rng());
    const std::string id = "face" + std::to_string(k);
    write_png(out_dir / (id + ".png"), face.image);
    synthetic::write_landmark_sidecar(out_dir / "landmarks" / (id + ".landmarks"), face.landmarks);
    manifest += id + "," + id + ".png,r1," + std::to_string(label) + "\n";
    golden += id + "," + id + ".png";
    for (std::size_t r = 0; r < kPanelSize; ++r) {
      const int jitter = static_cast<int>(rng() % 3) - 1;
      golden += "," + std::to_string(std::clamp(label + jitter, 1, 5));
    }
    golden += '\n';
  }
  io::write_atomic(out_dir / "manifest.csv", manifest);
  io::write_atomic(out_dir / "golden.csv", golden);
  io::write_atomic(out_dir / "settings.conf", "landmark_dir = " + (out_dir / "landmarks").string() +
                                                 "\ntest_backend = true\npatch_side = 64\nembedding_dim = 64\n"
                                                 "projection_grid = 8\nepochs = 20\nhead_path = " +
                                                 (out_dir / "head.bin").string() + "\n");
  std::cout << "wrote " << o.images << " synthetic faces to " << out_dir.string() << '\n';
  return 0;
}

int exit_code_for(const Error& e, const std::string& command) {
  switch (e.code()) {
    case ErrorCode::DivergenceError: return kExitTraining;
    case ErrorCode::NoFaceFound:
    case ErrorCode::GeometryError: return kExitScoring;
    case ErrorCode::BackendError:
    case ErrorCode::InputShapeError:
    case ErrorCode::ModelFormatError: return command == "score" || command == "evaluate" ? kExitScoring : kExitInput;
    default: return kExitInput;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acne severity scoring from selfies"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config, "key=value settings file")->check(CLI::ExistingFile);

  auto* extract = app.add_subcommand("extract-patches", "Extract skin patches from a labeled manifest");
  extract->add_option("--manifest", o.manifest)->required();
  extract->add_option("--out", o.out)->required();
  extract->add_option("--landmarks", o.landmarks, "directory of landmark / eye sidecar files");
  extract->add_flag("--overlays", o.overlays, "write one overlay PNG per image");

  auto* augment = app.add_subcommand("augment", "Class-balancing roll augmentation");
  augment->add_option("--patches", o.patches)->required();
  augment->add_option("--out", o.out)->required();
  augment->add_option("--n-mild", o.n_mild);
  augment->add_option("--n-max", o.n_max);

  auto add_backend = [&](CLI::App* sub) {
    auto* bb = sub->add_option("--backbone", o.backbone, "ONNX backbone");
    auto* tb = sub->add_flag("--test-backend", o.test_backend, "deterministic random-projection embeddings");
    bb->excludes(tb);
  };

  auto* train = app.add_subcommand("train", "Train the regression head on embedded patches");
  train->add_option("--patches", o.patches)->required();
  train->add_option("--out", o.out)->required();
  add_backend(train);
  train->add_option("--seed", o.seed);
  train->add_option("--epochs", o.epochs);
  train->add_option("--batch-size", o.batch_size);
  train->add_option("--learning-rate", o.learning_rate);
  train->add_option("--validation-fraction", o.validation_fraction);

  auto* evaluate = app.add_subcommand("evaluate", "Score the golden set against the rater panel");
  evaluate->add_option("--golden", o.golden)->required();
  evaluate->add_option("--head", o.head);
  evaluate->add_option("--landmarks", o.landmarks);
  evaluate->add_option("--report", o.report)->required();
  add_backend(evaluate);

  auto* score = app.add_subcommand("score", "Score one image and print the response JSON");
  score->add_option("--image", o.image)->required();
  score->add_option("--head", o.head);
  score->add_option("--landmarks", o.landmarks);
  add_backend(score);

  auto* serve = app.add_subcommand("serve", "Run the HTTP scoring service");
  serve->add_option("--config", o.config, "key=value settings file")->check(CLI::ExistingFile);

  auto* synth = app.add_subcommand("synth", "Write a synthetic demo dataset");
  synth->add_option("--out", o.out)->required();
  synth->add_option("--images", o.images)->check(CLI::PositiveNumber);
  synth->add_option("--seed", o.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (command == "extract-patches") return run_extract(o);
    if (command == "augment") return run_augment(o);
    if (command == "train") return run_train(o);
    if (command == "evaluate") return run_evaluate(o);
    if (command == "score") return run_score(o);
    if (command == "serve") return run_serve(o);
    if (command == "synth") return run_synth(o);
  } catch (const ExitCode& e) {
    return e.code;
  } catch (const Error& e) {
    std::cerr << to_string(e.code()) << ": " << e.what() << '\n';
    return exit_code_for(e, command);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitInput;
}
