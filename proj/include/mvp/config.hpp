#pragma once

#include "mvp/common.hpp"
#include "mvp/episode.hpp"
#include "mvp/synth.hpp"
#include "mvp/vit.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace mvp {

// Full run configuration. File format: `key = value` lines, '#' comments;
// explicit CLI flags override file values.
struct RunConfig {
  ViTConfig vit;  // defaults to ViT-tiny geometry
  int prompt_tokens = 10;
  SamplerSpec sampler;

  int meta_train_episodes = 300;
  double meta_train_lr = 1e-3;
  double momentum = 0.9;
  // Scale each episode's prompt gradient to unit global norm before the
  // momentum update; lr then sets the per-step displacement. Raw prompt
  // gradients at desk scale span orders of magnitude between the initial
  // plateau and the descent region, which plain SGD cannot serve with one lr.
  bool normalize_grad = true;

  int finetune_steps = 50;
  std::vector<double> lr_grid = {1e-4, 1e-3, 1e-2, 0.1, 0.0};
  std::vector<double> alpha_grid = {0.05, 0.1, 0.2, 0.25};

  int eval_tasks = 10;
  bool plain_nll = false;  // ablation switch; default is the weighted loss
  std::uint64_t seed = 42;

  std::vector<std::string> source_paths;
  std::string target_path;
  std::string backbone_path;    // empty: seeded random backbone
  std::string checkpoint_path;  // empty: <out>/prompts.ckpt

  int aug_trials = 1000;
  SyntheticSpec synth;

  void validate() const {
    vit.validate();
    sampler.validate();
    if (prompt_tokens < 1) throw std::invalid_argument("RunConfig: prompt_tokens must be >= 1");
    if (meta_train_episodes < 0 || finetune_steps < 0 || eval_tasks < 1 || aug_trials < 1)
      throw std::invalid_argument("RunConfig: negative counts");
    if (lr_grid.empty() || alpha_grid.empty())
      throw std::invalid_argument("RunConfig: grids must be non-empty");
    for (double lr : lr_grid)
      if (lr < 0.0) throw std::invalid_argument("RunConfig: negative lr in grid");
    for (double a : alpha_grid)
      if (a < 0.0 || a > 1.0) throw std::invalid_argument("RunConfig: alpha outside [0, 1]");
  }

  // Canonical serialization; the digest of this text is embedded in every
  // emitted artifact.
  std::string canonical_text() const {
    std::ostringstream s;
    s << "image_height=" << vit.image_height << "\nimage_width=" << vit.image_width
      << "\npatch_height=" << vit.patch_height << "\npatch_width=" << vit.patch_width
      << "\nembed_dim=" << vit.embed_dim << "\nlayers=" << vit.num_layers
      << "\nheads=" << vit.num_heads << "\nmlp_num=" << vit.mlp_num << "\nmlp_den=" << vit.mlp_den
      << "\nprompt_tokens=" << prompt_tokens << "\nmaxway=" << sampler.maxway
      << "\nmaxshot=" << sampler.maxshot << "\nqueries_per_class=" << sampler.queries_per_class
      << "\nmeta_train_episodes=" << meta_train_episodes << "\nmeta_train_lr=" << meta_train_lr
      << "\nmomentum=" << momentum << "\nnormalize_grad=" << (normalize_grad ? 1 : 0)
      << "\nfinetune_steps=" << finetune_steps << "\nlr_grid=";
    for (std::size_t i = 0; i < lr_grid.size(); ++i) s << (i ? "," : "") << lr_grid[i];
    s << "\nalpha_grid=";
    for (std::size_t i = 0; i < alpha_grid.size(); ++i) s << (i ? "," : "") << alpha_grid[i];
    s << "\neval_tasks=" << eval_tasks << "\nplain_nll=" << (plain_nll ? 1 : 0) << "\nseed=" << seed
      << "\nsources=";
    for (std::size_t i = 0; i < source_paths.size(); ++i) s << (i ? "," : "") << source_paths[i];
    s << "\ntarget=" << target_path << "\nbackbone=" << backbone_path
      << "\ncheckpoint=" << checkpoint_path << "\naug_trials=" << aug_trials
      << "\nsynth_classes=" << synth.n_classes << "\nsynth_samples=" << synth.samples_per_class
      << "\nsynth_image_size=" << synth.image_size << "\nsynth_noise=" << synth.noise << "\n";
    return s.str();
  }

  std::string digest() const { return hex64(fnv1a64(canonical_text())); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::vector<double> parse_double_list(const std::string& s, const std::string& key) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw std::runtime_error("config: bad number '" + item + "' in " + key);
    }
  }
  return out;
}

}  // namespace detail

inline void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto as_int = [&]() {
    try {
      return std::stoi(value);
    } catch (const std::exception&) {
      throw std::runtime_error("config: bad integer for " + key + ": '" + value + "'");
    }
  };
  auto as_double = [&]() {
    try {
      return std::stod(value);
    } catch (const std::exception&) {
      throw std::runtime_error("config: bad number for " + key + ": '" + value + "'");
    }
  };
  if (key == "image_size") cfg.vit.image_height = cfg.vit.image_width = as_int();
  else if (key == "image_height") cfg.vit.image_height = as_int();
  else if (key == "image_width") cfg.vit.image_width = as_int();
  else if (key == "patch_size") cfg.vit.patch_height = cfg.vit.patch_width = as_int();
  else if (key == "patch_height") cfg.vit.patch_height = as_int();
  else if (key == "patch_width") cfg.vit.patch_width = as_int();
  else if (key == "embed_dim") cfg.vit.embed_dim = as_int();
  else if (key == "layers") cfg.vit.num_layers = as_int();
  else if (key == "heads") cfg.vit.num_heads = as_int();
  else if (key == "mlp_num") cfg.vit.mlp_num = as_int();
  else if (key == "mlp_den") cfg.vit.mlp_den = as_int();
  else if (key == "prompt_tokens") cfg.prompt_tokens = as_int();
  else if (key == "maxway") cfg.sampler.maxway = as_int();
  else if (key == "maxshot") cfg.sampler.maxshot = as_int();
  else if (key == "queries_per_class") cfg.sampler.queries_per_class = as_int();
  else if (key == "meta_train_episodes") cfg.meta_train_episodes = as_int();
  else if (key == "meta_train_lr") cfg.meta_train_lr = as_double();
  else if (key == "momentum") cfg.momentum = as_double();
  else if (key == "normalize_grad") cfg.normalize_grad = (value == "1" || value == "true");
  else if (key == "finetune_steps") cfg.finetune_steps = as_int();
  else if (key == "lr_grid") cfg.lr_grid = detail::parse_double_list(value, key);
  else if (key == "alpha_grid") cfg.alpha_grid = detail::parse_double_list(value, key);
  else if (key == "eval_tasks") cfg.eval_tasks = as_int();
  else if (key == "plain_nll") cfg.plain_nll = (value == "1" || value == "true");
  else if (key == "seed") cfg.seed = std::stoull(value);
  else if (key == "sources") cfg.source_paths = detail::split_list(value);
  else if (key == "target") cfg.target_path = value;
  else if (key == "backbone") cfg.backbone_path = value;
  else if (key == "checkpoint") cfg.checkpoint_path = value;
  else if (key == "aug_trials") cfg.aug_trials = as_int();
  else if (key == "synth_classes") cfg.synth.n_classes = as_int();
  else if (key == "synth_samples") cfg.synth.samples_per_class = as_int();
  else if (key == "synth_image_size") cfg.synth.image_size = as_int();
  else if (key == "synth_noise") cfg.synth.noise = as_double();
  else if (key == "synth_seed") cfg.synth.seed = std::stoull(value);
  else throw std::runtime_error("config: unknown key '" + key + "'");
}

inline void load_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(lineno) + " is not key = value");
    apply_config_entry(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
}

}  // namespace mvp
