#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "fddlab/cli/commands.hpp"
#include "fddlab/errors.hpp"

using namespace fddlab;

namespace {

constexpr int kMissing = 2;
constexpr int kConfig = 3;
constexpr int kNumerical = 4;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fddlab: video edit adapter alignment in a procedural sprite world"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";
  app.add_option("--config", config_path, "flat key = value config file");
  auto* seed_opt = app.add_option("--seed", seed, "overrides run.seed");
  app.add_option("--out", out_dir, "artifact root")->capture_default_str();

  auto* gen = app.add_subcommand("gen-data", "build backbone/edit/video/fdd/eval datasets");
  auto* bb = app.add_subcommand("pretrain-backbone", "train the shared denoising backbone");
  auto* ed = app.add_subcommand("train-edit", "train the edit adapter over the frozen backbone");
  auto* vi = app.add_subcommand("train-video", "train the video adapter over the frozen backbone");
  auto* al = app.add_subcommand("fdd-align", "align the adapters with FDD (full preset)");
  auto* ab = app.add_subcommand("ablate", "run FDD with an ablation preset");
  std::string preset;
  ab->add_option("preset", preset, "full, random_init, no_alignment, no_sds, no_disc or no_kbin")->required();
  auto* ev = app.add_subcommand("evaluate", "score a trained student on the eval set");
  std::string run = "full";
  ev->add_option("--run", run, "fdd run to evaluate (a preset name)")->capture_default_str();
  auto* cmp = app.add_subcommand("compare", "join two reports and print deltas and win rates");
  std::string run_a, run_b;
  cmp->add_option("a", run_a, "baseline run name or report.csv")->required();
  cmp->add_option("b", run_b, "candidate run name or report.csv")->required();
  auto* sm = app.add_subcommand("sample", "edit one FDT1 clip and dump PPM frames");
  std::string video, instruction, caption, sample_out;
  sm->add_option("--video", video, "FDT1 tensor [F,3,H,W] in [-1,1]")->required();
  sm->add_option("--instruction", instruction, "instruction words, e.g. \"local red\"")->required();
  sm->add_option("--caption", caption, "caption words of the desired output")->required();
  sm->add_option("--run", run, "fdd run whose student edits the clip")->capture_default_str();
  sm->add_option("--dest", sample_out, "output directory (default: <out>/samples/<run>)");
  auto* st = app.add_subcommand("selftest", "training-free invariant checks");
  auto* keys = app.add_subcommand("config-keys", "list every config key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfig;
  }

  try {
    if (*st) return cli::selftest(std::cout) ? 0 : 1;

    cli::RunConfig cfg;
    if (!config_path.empty()) cfg = cli::load_config(config_path);
    if (*seed_opt) cfg.seed = seed;
    if (*keys) {
      const auto text = cli::resolved_text(cfg);
      std::cout << text;
      return 0;
    }
    const cli::Layout out{out_dir};
    if (*gen) cli::gen_data(cfg, out, std::cout);
    if (*bb) cli::pretrain_backbone(cfg, out, std::cout);
    if (*ed) cli::train_edit(cfg, out, std::cout);
    if (*vi) cli::train_video(cfg, out, std::cout);
    if (*al) cli::align(cfg, out, fdd::Preset::Full, std::cout);
    if (*ab) {
      fdd::Preset p;
      try {
        p = fdd::parse_preset(preset);
      } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfig;
      }
      cli::align(cfg, out, p, std::cout);
    }
    if (*ev) cli::evaluate(cfg, out, run, std::cout);
    if (*cmp) cli::compare(out, run_a, run_b, std::cout);
    if (*sm) {
      const std::string dest = sample_out.empty() ? (out.root / "samples" / run).string() : sample_out;
      cli::sample(cfg, out, run, video, instruction, caption, dest, std::cout);
    }
    std::cout << "config_hash=" << cli::config_hash(cfg) << '\n';
    return 0;
  } catch (const MissingDependency& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissing;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericalError& e) {
    std::cerr << "error: numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
