#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "ipdfer/checkpoint.hpp"
#include "ipdfer/errors.hpp"
#include "ipdfer/evalrep.hpp"
#include "ipdfer/factorgen.hpp"
#include "ipdfer/runconfig.hpp"
#include "ipdfer/trainer.hpp"

namespace fs = std::filesystem;
using namespace ipdfer;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::vector<std::string> sets;
  std::string mode;
  std::string resume;
  std::int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_mode = false, bool with_resume = false) {
  cmd->add_option("--config", args.config_path, "config file (key = value lines)");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--set", args.sets, "override a config key (key=value), repeatable");
  cmd->add_option("--seed", args.seed, "override the command's seed");
  if (with_mode) cmd->add_option("--mode", args.mode, "baseline | id-only | ipd");
  if (with_resume) cmd->add_option("--resume", args.resume, "epoch checkpoint to continue from");
}

config::RunConfig resolve(const CommonArgs& args, const char* seed_key) {
  config::KeyValues kv;
  if (!args.config_path.empty()) kv = config::KeyValues::from_file(args.config_path);
  for (const std::string& s : args.sets) kv.set_line(s);
  if (args.seed >= 0) kv.set(seed_key, std::to_string(args.seed));
  if (!args.mode.empty()) kv.set("train.mode", args.mode);
  return config::RunConfig::resolve(kv);
}

void echo_config(const config::RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream os(out_dir + "/config_resolved.cfg");
  os << cfg.echo();
}

data::Dataset load_dataset_checked(const config::RunConfig& cfg) {
  if (cfg.dataset_path.empty()) throw ConfigError("no dataset configured (set 'dataset = PATH')");
  if (!fs::exists(cfg.dataset_path)) throw ConfigError("dataset file not found: " + cfg.dataset_path);
  return data::load_dataset(cfg.dataset_path);
}

ArchConfig arch_for(const config::RunConfig& cfg, const data::Dataset& ds) {
  ArchConfig arch = cfg.model;
  arch.height = ds.config.shape.height;
  arch.width = ds.config.shape.width;
  arch.channels = ds.config.shape.channels;
  arch.k_expressions = ds.config.k_expressions;
  arch.k_pose = data::kPoseBuckets;
  return arch;
}

std::vector<int> split_indices(const config::RunConfig& cfg, const data::Dataset& ds) {
  if (cfg.eval_split == "train") return ds.train_indices(cfg.train.fold);
  if (cfg.eval_split == "test") return ds.test_indices(cfg.train.fold);
  std::vector<int> all(ds.samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return all;
}

std::unique_ptr<ModelBundle> bundle_from(const std::string& path) {
  if (path.empty()) throw ConfigError("no checkpoint configured (set 'checkpoint = PATH')");
  if (!fs::exists(path)) throw ConfigError("checkpoint not found: " + path);
  return train::bundle_from_checkpoint(train::read_checkpoint(path));
}

int cmd_generate(const CommonArgs& args) {
  config::RunConfig cfg = resolve(args, "data.seed");
  data::Dataset ds = data::build_dataset(cfg.data);
  echo_config(cfg, args.out_dir);
  const std::string path = args.out_dir + "/dataset.ipds";
  data::save_dataset(ds, path);

  auto hist = bucket_histogram(ds);
  std::ostringstream table;
  table << "pose label  yaw range   count\n";
  const char* ranges[5] = {"0-10", "10-20", "20-30", "30-40", ">40"};
  int total = 0;
  for (int b = 0; b < data::kPoseBuckets; ++b) {
    char line[64];
    std::snprintf(line, sizeof(line), "%-11d %-11s %d\n", b, ranges[b], hist[static_cast<std::size_t>(b)]);
    table << line;
    total += hist[static_cast<std::size_t>(b)];
  }
  table << "total                   " << total << "\n";
  std::ofstream(args.out_dir + "/histogram.txt") << table.str();
  std::cout << "wrote " << path << " (" << ds.samples.size() << " samples)\n" << table.str();
  return 0;
}

int cmd_pretrain_id(const CommonArgs& args) {
  config::RunConfig cfg = resolve(args, "pretrain.seed");
  data::Dataset ds = load_dataset_checked(cfg);
  echo_config(cfg, args.out_dir);
  ArchConfig arch = arch_for(cfg, ds);
  ConvEncoder e_id("e_id", arch);
  {
    // same per-net seeding as a bundle so results line up with in-process runs
    ModelBundle seeded(Mode::id_only, arch, cfg.pretrain.seed);
    auto src = seeded.e_id->parameters();
    auto dst = e_id.parameters();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
  }
  auto res = train::pretrain_identity_encoder(e_id, ds, cfg.pretrain);
  train::CheckpointMeta meta;
  meta.arch = arch;
  meta.seed = cfg.pretrain.seed;
  meta.pretrain_accuracy = res.train_accuracy;
  const std::string path = args.out_dir + "/e_id.ipck";
  train::write_identity_checkpoint(path, e_id, meta);
  std::printf("identity pretraining accuracy: %.4f\n", res.train_accuracy);
  std::cout << "frozen identity encoder digest: " << to_hex(res.digest) << "\n";
  std::cout << "wrote " << path << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args) {
  config::RunConfig cfg = resolve(args, "train.seed");
  data::Dataset ds = load_dataset_checked(cfg);
  echo_config(cfg, args.out_dir);
  ArchConfig arch = arch_for(cfg, ds);
  auto bundle = std::make_unique<ModelBundle>(cfg.train.mode, arch, cfg.train.seed);
  if (bundle->e_id) {
    if (cfg.id_checkpoint.empty())
      throw ConfigError("mode '" + mode_name(cfg.train.mode) + "' needs a pretrained identity encoder (set 'id_checkpoint = PATH')");
    if (!fs::exists(cfg.id_checkpoint)) throw ConfigError("identity checkpoint not found: " + cfg.id_checkpoint);
    train::apply_identity_encoder(train::read_checkpoint(cfg.id_checkpoint), *bundle);
  }
  train::TrainConfig tcfg = cfg.train;
  tcfg.out_dir = args.out_dir;
  train::Trainer trainer(*bundle, ds, tcfg);
  if (!args.resume.empty()) {
    if (!fs::exists(args.resume)) throw ConfigError("resume checkpoint not found: " + args.resume);
    trainer.resume_from(args.resume);
    std::cout << "resuming from epoch " << trainer.start_epoch() << "\n";
  }
  trainer.run([](const loss::LossReport& rep) {
    if (rep.step % 50 == 0) std::cout << rep.to_line() << "\n";
  });
  std::cout << "training done; checkpoints in " << args.out_dir << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args) {
  config::RunConfig cfg = resolve(args, "train.seed");
  data::Dataset ds = load_dataset_checked(cfg);
  echo_config(cfg, args.out_dir);
  std::vector<int> idx = split_indices(cfg, ds);

  std::vector<std::pair<std::string, eval::EvalReport>> columns;
  std::vector<std::string> paths = cfg.checkpoints;
  if (paths.empty()) paths.push_back(cfg.checkpoint);
  for (const std::string& path : paths) {
    auto bundle = bundle_from(path);
    columns.emplace_back(mode_name(bundle->mode), eval::evaluate(*bundle, ds, idx));
  }
  std::ofstream(args.out_dir + "/report.txt") << columns.front().second.to_text();
  const std::string table = eval::subset_table(columns);
  std::ofstream(args.out_dir + "/table.txt") << table;
  std::cout << table;
  std::printf("overall accuracy: %.4f\n", columns.front().second.overall_accuracy);
  return 0;
}

int cmd_synthesize(const CommonArgs& args) {
  config::RunConfig cfg = resolve(args, "train.seed");
  data::Dataset ds = load_dataset_checked(cfg);
  echo_config(cfg, args.out_dir);
  auto bundle = bundle_from(cfg.checkpoint);
  std::vector<int> idx = split_indices(cfg, ds);
  if (static_cast<int>(idx.size()) > cfg.synth_count) idx.resize(static_cast<std::size_t>(cfg.synth_count));
  eval::write_synthesis_panels(*bundle, ds, idx, args.out_dir + "/panels");
  std::cout << "wrote " << idx.size() << " panels to " << args.out_dir << "/panels\n";
  return 0;
}

int cmd_export_embeddings(const CommonArgs& args) {
  config::RunConfig cfg = resolve(args, "train.seed");
  data::Dataset ds = load_dataset_checked(cfg);
  echo_config(cfg, args.out_dir);
  auto bundle = bundle_from(cfg.checkpoint);
  std::vector<int> idx = split_indices(cfg, ds);
  const std::string path = args.out_dir + "/embeddings.tsv";
  eval::export_embeddings(*bundle, ds, idx, path);
  std::cout << "wrote " << idx.size() << " rows to " << path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"identity/pose/expression disentanglement on procedural faces"};
  app.require_subcommand(1);

  CommonArgs gen_args, pre_args, train_args, eval_args, synth_args, export_args;
  CLI::App* gen = app.add_subcommand("generate", "build a factor-labeled dataset");
  add_common(gen, gen_args);
  CLI::App* pre = app.add_subcommand("pretrain-id", "pretrain and freeze the identity encoder");
  add_common(pre, pre_args);
  CLI::App* tr = app.add_subcommand("train", "run the alternating training procedure");
  add_common(tr, train_args, /*with_mode=*/true, /*with_resume=*/true);
  CLI::App* ev = app.add_subcommand("eval", "accuracy report with pose subsets");
  add_common(ev, eval_args);
  CLI::App* sy = app.add_subcommand("synthesize", "write real/neutral/expressional panels");
  add_common(sy, synth_args);
  CLI::App* ex = app.add_subcommand("export-embeddings", "dump expression features as text");
  add_common(ex, export_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_generate(gen_args);
    if (pre->parsed()) return cmd_pretrain_id(pre_args);
    if (tr->parsed()) return cmd_train(train_args);
    if (ev->parsed()) return cmd_eval(eval_args);
    if (sy->parsed()) return cmd_synthesize(synth_args);
    if (ex->parsed()) return cmd_export_embeddings(export_args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
