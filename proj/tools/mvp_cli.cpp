// Command-line surface for the MVP toolkit. See README for the config keys.

#include "mvp/checkpoint.hpp"
#include "mvp/config.hpp"
#include "mvp/pipeline.hpp"
#include "mvp/report.hpp"
#include "mvp/synth.hpp"

#include <CLI11.hpp>

#include <deque>
#include <filesystem>
#include <iostream>
#include <string>

namespace {

using Scalar = float;  // single precision is the runtime default
namespace fs = std::filesystem;

mvp::BackboneWeights<Scalar> make_backbone(const mvp::RunConfig& cfg) {
  if (!cfg.backbone_path.empty()) return mvp::load_backbone<Scalar>(cfg.backbone_path, cfg.vit);
  return mvp::init_backbone<Scalar>(cfg.vit, mvp::derive_seed(cfg.seed, mvp::streams::kBackboneInit));
}

fs::path ensure_out_dir(const std::string& out) {
  fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

int run_meta_train(const mvp::RunConfig& cfg, const std::string& out) {
  if (cfg.source_paths.empty())
    throw std::runtime_error("meta-train: no source datasets configured (sources = ...)");
  std::deque<mvp::DatasetManifest> owned;
  std::vector<const mvp::DatasetManifest*> sources;
  for (const auto& p : cfg.source_paths) {
    owned.push_back(mvp::load_dataset(p));
    sources.push_back(&owned.back());
  }
  auto weights = make_backbone(cfg);
  const std::uint64_t hash_before = mvp::backbone_hash(weights);
  auto bank = mvp::init_prompts<Scalar>(cfg.vit, cfg.prompt_tokens,
                                        mvp::derive_seed(cfg.seed, mvp::streams::kPromptInit));
  auto result = mvp::meta_train(sources, weights, cfg, std::move(bank));
  const std::uint64_t hash_after = mvp::backbone_hash(weights);
  const fs::path dir = ensure_out_dir(out);
  mvp::save_checkpoint(dir / "prompts.ckpt", result.bank, cfg.seed);
  mvp::write_text_file(dir / "train_trace.csv", mvp::trace_csv(result.trace, cfg.seed, cfg.digest()));
  double mean = 0.0;
  for (const auto& r : result.trace) mean += r.loss;
  if (!result.trace.empty()) mean /= static_cast<double>(result.trace.size());
  std::cout << "meta-train: " << result.trace.size() << " episodes, mean loss "
            << mvp::format_real(mean) << "\n"
            << "backbone hash " << mvp::hex64(hash_before)
            << (hash_before == hash_after ? " (unchanged)" : " -> CHANGED") << "\n"
            << "wrote " << (dir / "prompts.ckpt").string() << " and "
            << (dir / "train_trace.csv").string() << "\n";
  return hash_before == hash_after ? 0 : 1;
}

int run_finetune_eval(const mvp::RunConfig& cfg, const std::string& out) {
  if (cfg.target_path.empty())
    throw std::runtime_error("finetune-eval: no target dataset configured (target = ...)");
  auto target = mvp::load_dataset(cfg.target_path);
  auto weights = make_backbone(cfg);
  const fs::path dir = ensure_out_dir(out);
  const fs::path ckpt = cfg.checkpoint_path.empty() ? dir / "prompts.ckpt"
                                                    : fs::path(cfg.checkpoint_path);
  auto bank = mvp::load_checkpoint<Scalar>(ckpt);
  auto report = mvp::evaluate(target, weights, cfg, bank, cfg.eval_tasks);
  mvp::write_text_file(dir / "eval_report.csv", mvp::eval_report_csv(report));
  std::cout << "finetune-eval: accuracy " << mvp::format_real(report.mean) << " +- "
            << mvp::format_real(report.half_width) << " over " << report.n_tasks << " tasks\n"
            << "wrote " << (dir / "eval_report.csv").string() << "\n";
  return 0;
}

int run_param_count(const mvp::RunConfig& cfg) {
  std::cout << mvp::trainable_param_count(cfg.vit, cfg.prompt_tokens) << "\n";
  return 0;
}

int run_aug_bench(const mvp::RunConfig& cfg, const std::string& out) {
  mvp::DatasetManifest data;
  if (!cfg.target_path.empty()) {
    data = mvp::load_dataset(cfg.target_path);
  } else if (!cfg.source_paths.empty()) {
    data = mvp::load_dataset(cfg.source_paths.front());
  } else {
    mvp::SyntheticSpec spec = cfg.synth;
    spec.n_classes = std::max(spec.n_classes, 10);
    spec.samples_per_class = std::max(spec.samples_per_class, 10);
    spec.seed = cfg.seed;
    data = mvp::make_manifest(mvp::synth_samples(spec), "synthetic");
  }
  auto weights = make_backbone(cfg);
  auto rows = mvp::aug_bench(data, weights, cfg, cfg.aug_trials);
  const fs::path dir = ensure_out_dir(out);
  mvp::write_text_file(dir / "aug_bench.csv", mvp::bench_csv(rows, cfg.seed, cfg.digest()));
  for (const auto& r : rows)
    std::cout << "10-way " << r.shot << "-shot: rpr " << mvp::format_real(r.rpr_mean_s)
              << " s, pixel " << mvp::format_real(r.pixel_mean_s) << " s ("
              << mvp::format_real(r.rpr_mean_s > 0 ? r.pixel_mean_s / r.rpr_mean_s : 0.0)
              << "x)\n";
  std::cout << "wrote " << (dir / "aug_bench.csv").string() << "\n";
  return 0;
}

int run_sample_episodes(const mvp::RunConfig& cfg, const std::string& out, bool out_given) {
  const std::string path = !cfg.target_path.empty()
                               ? cfg.target_path
                               : (!cfg.source_paths.empty() ? cfg.source_paths.front() : "");
  if (path.empty())
    throw std::runtime_error("sample-episodes: configure target = ... or sources = ...");
  auto data = mvp::load_dataset(path);
  std::string text;
  for (int i = 0; i < cfg.eval_tasks; ++i) {
    // Mirrors the episode stream evaluate() draws from.
    const std::uint64_t task_seed =
        mvp::derive_seed(cfg.seed, mvp::streams::kEvalTask, static_cast<std::uint64_t>(i));
    mvp::SplitRng rng(mvp::derive_seed(task_seed, 0));
    auto task = mvp::sample_episode<Scalar>(data.class_samples, cfg.sampler, rng);
    text += mvp::format_episode_line(i, task) + "\n";
  }
  if (out_given) {
    const fs::path dir = ensure_out_dir(out);
    mvp::write_text_file(dir / "episodes.txt", text);
    std::cout << "wrote " << (dir / "episodes.txt").string() << "\n";
  } else {
    std::cout << text;
  }
  return 0;
}

int run_synth_gen(const mvp::RunConfig& cfg, const std::string& out) {
  mvp::SyntheticSpec spec = cfg.synth;
  const fs::path dir = ensure_out_dir(out);
  const fs::path file = dir / "synth.mvpd";
  auto manifest = mvp::synth_generate(spec, file);
  const double separability = mvp::synth_separability_check(spec);
  std::cout << "wrote " << file.string() << ": " << manifest.num_classes() << " classes, "
            << manifest.images.size() << " samples, nearest-mean separability "
            << mvp::format_real(separability) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MVP: prompt-tuned ViT few-shot toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  int maxway = 0, maxshot = 0, prompt_tokens = 0;
  auto* opt_config = app.add_option("--config", config_path, "key = value config file");
  auto* opt_seed = app.add_option("--seed", seed, "master seed (overrides config)");
  auto* opt_maxway = app.add_option("--maxway", maxway, "sampler MAXWAY (overrides config)");
  auto* opt_maxshot = app.add_option("--maxshot", maxshot, "sampler MAXSHOT (overrides config)");
  auto* opt_tokens = app.add_option("--prompt-tokens", prompt_tokens, "prompt tokens per layer");
  auto* opt_out = app.add_option("--out", out_dir, "output directory (default .)");

  auto* cmd_train = app.add_subcommand("meta-train", "episodic meta-training of the prompt bank");
  auto* cmd_eval = app.add_subcommand("finetune-eval", "per-task fine-tuning and evaluation");
  auto* cmd_count = app.add_subcommand("param-count", "print the trainable parameter count");
  auto* cmd_bench = app.add_subcommand("aug-bench", "time patch recombination vs pixel augmentation");
  auto* cmd_dump = app.add_subcommand("sample-episodes", "dump sampled episodes as text");
  auto* cmd_synth = app.add_subcommand("synth-gen", "generate a packed synthetic dataset");
  for (auto* c : {cmd_train, cmd_eval, cmd_count, cmd_bench, cmd_dump, cmd_synth}) c->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    mvp::RunConfig cfg;
    if (opt_config->count() > 0) mvp::load_config_file(cfg, config_path);
    if (opt_seed->count() > 0) cfg.seed = seed;
    if (opt_maxway->count() > 0) cfg.sampler.maxway = maxway;
    if (opt_maxshot->count() > 0) cfg.sampler.maxshot = maxshot;
    if (opt_tokens->count() > 0) cfg.prompt_tokens = prompt_tokens;
    cfg.validate();

    if (cmd_train->parsed()) return run_meta_train(cfg, out_dir);
    if (cmd_eval->parsed()) return run_finetune_eval(cfg, out_dir);
    if (cmd_count->parsed()) return run_param_count(cfg);
    if (cmd_bench->parsed()) return run_aug_bench(cfg, out_dir);
    if (cmd_dump->parsed()) return run_sample_episodes(cfg, out_dir, opt_out->count() > 0);
    if (cmd_synth->parsed()) return run_synth_gen(cfg, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
