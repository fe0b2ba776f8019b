// Command-line front end: invariant checks, up-sampling demos, desk-scale
// segmentation training/evaluation, and the timing harness.
//
// Exit codes: 0 success, 1 check or run failure, 2 usage or input error.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "pixeldcl/bench.hpp"
#include "pixeldcl/check.hpp"

namespace fs = std::filesystem;
using namespace pixeldcl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct usage_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// key=value lines; '#' starts a comment.
std::map<std::string, std::string> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw usage_error("cannot open config file " + path);
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

// Fills options the command line left unset from the config file.
void apply_config(CLI::App& cmd, const std::map<std::string, std::string>& config) {
  for (CLI::Option* opt : cmd.get_options()) {
    if (opt->count() > 0) continue;
    const std::string key = opt->get_single_name();
    auto it = config.find(key);
    if (it == config.end()) continue;
    opt->add_result(it->second);
    opt->run_callback();
  }
}

UpsampleKind kind_or_throw(const std::string& name) {
  const auto k = parse_kind(name);
  if (!k) {
    throw usage_error("unknown kind '" + name + "' (dcl, ipixeldcl, pixeldcl, pixeldcl_fast)");
  }
  return *k;
}

Tensor normalized_for_display(Tensor x) {
  double lo = x[0], hi = x[0];
  for (double v : x.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo;
  for (double& v : x.data()) v = span > 0 ? (v - lo) / span : 0.0;
  return x;
}

std::string indexed(const std::string& stem, std::size_t i, const std::string& ext) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03zu", i);
  return stem + buf + ext;
}

struct DataOptions {
  std::size_t count = 64;
  std::size_t size = 64;
  std::size_t max_shapes = 3;
};

void add_data_options(CLI::App& cmd, DataOptions& d) {
  cmd.add_option("--count", d.count, "Synthetic samples (even indices train, odd test)")
      ->check(CLI::Range(2, 100000));
  cmd.add_option("--size", d.size, "Image height and width")->check(CLI::Range(32, 4096));
  cmd.add_option("--max-shapes", d.max_shapes, "Shapes per image")->check(CLI::Range(1, 5));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pixeldcl: pixel deconvolutional layers"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "key=value file; command-line flags take precedence");
  std::size_t threads = 1;
  app.add_option("--threads", threads, "Worker threads for convolution loops")
      ->check(CLI::Range(1, 256));

  // check
  auto* check = app.add_subcommand("check", "Run the full invariant suite");

  // demo-upsample
  auto* demo =
      app.add_subcommand("demo-upsample", "Up-sample an image with a random 3-layer stack");
  std::string demo_kind = "dcl", demo_in, demo_out = "upsampled.ppm";
  std::uint64_t demo_seed = 1;
  std::size_t demo_size = 16;
  demo->add_option("--kind", demo_kind, "dcl | ipixeldcl | pixeldcl | pixeldcl_fast");
  demo->add_option("--seed", demo_seed, "Initialisation and noise seed");
  demo->add_option("--in", demo_in, "Input PPM; smooth noise when omitted");
  demo->add_option("--size", demo_size, "Noise input side when --in is omitted")
      ->check(CLI::Range(2, 1024));
  demo->add_option("--out", demo_out, "Output PPM (min-max normalised)");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the desk-scale U-Net");
  std::string train_kind = "pixeldcl_fast", train_out = "run";
  std::uint64_t train_seed = 1;
  std::size_t steps = 200, batch = 4, depth = 2, base_channels = 8;
  double lr = 1e-3;
  DataOptions train_data;
  train_cmd->add_option("--kind", train_kind, "Up-sampling layer in the decoder");
  train_cmd->add_option("--steps", steps, "Adam steps");
  train_cmd->add_option("--seed", train_seed, "Dataset and initialisation seed");
  train_cmd->add_option("--out-dir", train_out, "Receives checkpoint/ and loss.csv");
  train_cmd->add_option("--batch", batch, "Samples per step")->check(CLI::Range(1, 1024));
  train_cmd->add_option("--lr", lr, "Adam learning rate")->check(CLI::PositiveNumber);
  train_cmd->add_option("--depth", depth, "Down/up blocks")->check(CLI::Range(1, 6));
  train_cmd->add_option("--base-channels", base_channels, "Channels at full resolution")
      ->check(CLI::Range(1, 512));
  add_data_options(*train_cmd, train_data);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the held-out split");
  std::string ckpt_dir, eval_out;
  std::uint64_t eval_seed = 1;
  std::size_t eval_images = 4;
  DataOptions eval_data;
  eval_cmd->add_option("--ckpt", ckpt_dir, "Checkpoint directory")->required();
  eval_cmd->add_option("--seed", eval_seed, "Dataset seed");
  eval_cmd->add_option("--out-dir", eval_out,
                       "Receives metrics.csv and images (default <ckpt>_eval)");
  eval_cmd->add_option("--images", eval_images, "Prediction images to write");
  add_data_options(*eval_cmd, eval_data);

  // bench
  auto* bench = app.add_subcommand("bench", "Time layer forward/backward and report FLOPs");
  std::vector<std::string> bench_kinds{"dcl", "ipixeldcl", "pixeldcl_fast"};
  std::vector<std::size_t> bench_shape{1, 16, 32, 32};
  std::size_t repeats = 5;
  std::string bench_csv;
  bench->add_option("--kinds", bench_kinds, "Comma-separated kinds")->delimiter(',');
  bench->add_option("--shape", bench_shape, "n,c,h,w of the layer input")
      ->delimiter(',')
      ->expected(4);
  bench->add_option("--repeats", repeats, "Timed repeats (>= 5)")->check(CLI::Range(5, 100000));
  bench->add_option("--csv", bench_csv, "Also write results as CSV");

  // artifacts
  auto* artifacts =
      app.add_subcommand("artifacts", "Checkerboard score of random up-sampling stacks");
  std::vector<std::string> art_kinds{"dcl", "ipixeldcl", "pixeldcl", "pixeldcl_fast"};
  std::size_t art_seeds = 20;
  std::string art_csv;
  artifacts->add_option("--kinds", art_kinds, "Comma-separated kinds")->delimiter(',');
  artifacts->add_option("--seeds", art_seeds, "Seeds per kind")->check(CLI::Range(1, 100000));
  artifacts->add_option("--csv", art_csv, "Also write results as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (!config_path.empty()) {
      const auto config = read_config(config_path);
      apply_config(app, config);
      for (CLI::App* sub : app.get_subcommands()) apply_config(*sub, config);
    }
    set_num_threads(threads);

    if (check->parsed()) {
      const char* fault = std::getenv("PIXELDCL_INJECT_FAULT");
      const bool inject = fault != nullptr && std::string(fault) == "1";
      return run_check_suite(std::cout, inject) ? kExitOk : kExitFailure;
    }

    if (demo->parsed()) {
      const UpsampleKind kind = kind_or_throw(demo_kind);
      Rng rng(demo_seed);
      ArtifactOptions opt;
      Tensor input;
      if (demo_in.empty()) {
        input = smooth_noise(rng, 3, demo_size);
        input = normalized_for_display(input);
      } else {
        try {
          input = read_ppm(demo_in);
        } catch (const format_error& e) {
          throw usage_error(e.what());
        }
      }
      const auto stack = random_stack(kind, rng, opt);
      const Tensor out = run_stack(stack, input);
      write_ppm(normalized_for_display(out), demo_out);
      std::cout << "kind=" << kind_name(kind) << " input=" << input.shape().str()
                << " output=" << out.shape().str() << "\n";
      std::cout << "checkerboard_score=" << std::setprecision(10) << checkerboard_score(out)
                << "\n";
      return kExitOk;
    }

    if (train_cmd->parsed()) {
      UNetConfig cfg;
      cfg.upsample_kind = kind_or_throw(train_kind);
      cfg.depth = depth;
      cfg.base_channels = base_channels;
      cfg.seed = train_seed;
      if (train_data.size % (std::size_t{1} << depth) != 0) {
        throw usage_error("--size must be divisible by 2^depth");
      }
      const auto data = gen_dataset(train_seed, train_data.count, train_data.size,
                                    train_data.size, train_data.max_shapes);
      const auto split = split_by_parity(data);
      TrainOptions opt;
      opt.steps = steps;
      opt.batch = batch;
      opt.adam.lr = lr;
      opt.on_step = [](std::size_t step, double loss) {
        std::cout << "step " << step << " loss " << std::setprecision(6) << loss << "\n";
      };
      TrainResult result = train(cfg, split.train, opt);
      fs::create_directories(train_out);
      save_unet(result.model, fs::path(train_out) / "checkpoint");
      std::ofstream csv(fs::path(train_out) / "loss.csv");
      write_loss_csv(csv, result.losses);
      std::cout << "wrote " << (fs::path(train_out) / "checkpoint").string() << " and "
                << (fs::path(train_out) / "loss.csv").string() << "\n";
      return kExitOk;
    }

    if (eval_cmd->parsed()) {
      UNet net;
      try {
        net = load_unet(ckpt_dir);
      } catch (const format_error& e) {
        throw usage_error(e.what());
      }
      const auto data = gen_dataset(eval_seed, eval_data.count, eval_data.size, eval_data.size,
                                    eval_data.max_shapes);
      const auto split = split_by_parity(data);
      std::vector<LabelMap> preds;
      const MetricsReport report = evaluate(net, split.test, &preds);
      const fs::path out =
          eval_out.empty() ? fs::path(ckpt_dir + "_eval") : fs::path(eval_out);
      fs::create_directories(out);
      std::ofstream csv(out / "metrics.csv");
      write_metrics_csv(csv, report);
      for (std::size_t i = 0; i < std::min(eval_images, preds.size()); ++i) {
        write_ppm(split.test[i].image, (out / indexed("image_", i, ".ppm")).string());
        write_label_image(split.test[i].labels, default_palette(),
                          (out / indexed("truth_", i, ".ppm")).string());
        write_label_image(preds[i], default_palette(),
                          (out / indexed("pred_", i, ".ppm")).string());
      }
      std::cout << "kind " << kind_name(net.config.upsample_kind) << ", " << split.test.size()
                << " held-out samples\n";
      write_metrics_text(std::cout, report);
      return kExitOk;
    }

    if (bench->parsed()) {
      std::vector<UpsampleKind> kinds;
      for (const auto& k : bench_kinds) kinds.push_back(kind_or_throw(k));
      const Shape shape{bench_shape[0], bench_shape[1], bench_shape[2], bench_shape[3]};
      const auto rows = bench_forward(kinds, shape, repeats);
      write_bench_table(std::cout, rows);
      if (!bench_csv.empty()) {
        std::ofstream csv(bench_csv);
        write_bench_csv(csv, rows);
      }
      const auto flops_of = [&](UpsampleKind k) {
        return flop_count(k, shape.n, shape.c, shape.c, shape.h, shape.w);
      };
      const bool flops_ok =
          flops_of(UpsampleKind::pixeldcl_fast) < flops_of(UpsampleKind::ipixeldcl);
      std::cout << (flops_ok ? "PASS" : "FAIL") << " flops(pixeldcl_fast) < flops(ipixeldcl)\n";
      std::cout << "timing order dcl <= pixeldcl_fast <= ipixeldcl: "
                << (timing_order_matches(rows) ? "observed" : "not observed")
                << " (expected direction, not enforced)\n";
      return flops_ok ? kExitOk : kExitFailure;
    }

    if (artifacts->parsed()) {
      std::vector<UpsampleKind> kinds;
      for (const auto& k : art_kinds) kinds.push_back(kind_or_throw(k));
      const auto rows = artifact_ab_compare(kinds, art_seeds);
      write_artifact_table(std::cout, rows);
      if (!art_csv.empty()) {
        std::ofstream csv(art_csv);
        write_artifact_csv(csv, rows);
      }
      return kExitOk;
    }
  } catch (const usage_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
