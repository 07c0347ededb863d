#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "ipdfer/errors.hpp"
#include "ipdfer/trainer.hpp"
#include "test_util.hpp"

using namespace ipdfer;
using namespace ipdfer::train;

namespace {

data::Dataset tiny_dataset() {
  data::GeneratorConfig cfg;
  cfg.n_identities = 6;
  cfg.n_folds = 3;
  cfg.yaws = {0.0, 15.0, 35.0};
  cfg.k_expressions = 4;
  cfg.shape.height = 16;
  cfg.shape.width = 16;
  return data::build_dataset(cfg);
}

ArchConfig tiny_arch() {
  ArchConfig arch;
  arch.height = 16;
  arch.width = 16;
  arch.widths = {8, 12, 16};
  arch.feature_dim = 24;
  return arch;
}

std::unique_ptr<ModelBundle> pretrained_bundle(Mode mode, const data::Dataset& ds, const ArchConfig& arch,
                                               std::uint64_t seed) {
  auto bundle = std::make_unique<ModelBundle>(mode, arch, seed);
  if (bundle->e_id) {
    PretrainConfig pcfg;
    pcfg.epochs = 8;
    pcfg.seed = seed;
    pretrain_identity_encoder(*bundle->e_id, ds, pcfg);
  }
  return bundle;
}

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("adam follows the update rule and converges on a quadratic") {
  Parameter p{"p", Tensor({1}, {0.0}), Tensor({1}), true};
  Adam opt("t", {&p});
  // one hand-checked step: m = 0.1*g, v = 0.001*g^2, bias-corrected update is
  // lr * g/|g| at t=1
  p.grad[0] = 4.0;
  opt.step(0.1);
  CHECK(p.value[0] == doctest::Approx(-0.1 * (4.0 / (std::sqrt(16.0) + 1e-8))).epsilon(1e-9));

  Parameter q{"q", Tensor({1}, {0.0}), Tensor({1}), true};
  Adam opt2("t2", {&q});
  for (int i = 0; i < 1000; ++i) {
    q.grad[0] = 2.0 * (q.value[0] - 3.0);
    opt2.step(0.1);
  }
  CHECK(q.value[0] == doctest::Approx(3.0).epsilon(1e-4));

  Parameter frozen{"f", Tensor({1}), Tensor({1}), false};
  CHECK_THROWS_AS(Adam("bad", {&frozen}), std::logic_error);
}

TEST_CASE("adam update matches an independent recomputation from stored moments") {
  Rng rng(31);
  Parameter p{"p", testutil::random_tensor({4, 3}, rng), Tensor({4, 3}), true};
  Adam opt("t", {&p});
  // a few warmup steps with random gradients
  for (int s = 0; s < 5; ++s) {
    for (std::int64_t i = 0; i < p.grad.size(); ++i) p.grad[i] = rng.gaussian();
    opt.step(1e-3);
  }
  // snapshot, then one recomputed step
  Tensor m0 = opt.slot(0).m, v0 = opt.slot(0).v, val0 = p.value;
  const std::int64_t t0 = opt.step_count();
  for (std::int64_t i = 0; i < p.grad.size(); ++i) p.grad[i] = rng.gaussian();
  Tensor g0 = p.grad;
  opt.step(1e-3);
  const std::int64_t j = 7;
  const double m1 = 0.9 * m0[j] + 0.1 * g0[j];
  const double v1 = 0.999 * v0[j] + 0.001 * g0[j] * g0[j];
  const double mhat = m1 / (1.0 - std::pow(0.9, static_cast<double>(t0 + 1)));
  const double vhat = v1 / (1.0 - std::pow(0.999, static_cast<double>(t0 + 1)));
  CHECK(p.value[j] == doctest::Approx(val0[j] - 1e-3 * mhat / (std::sqrt(vhat) + 1e-8)).epsilon(1e-12));
}

TEST_CASE("learning rate schedule: base * decay^(epoch/10)") {
  data::Dataset ds = tiny_dataset();
  auto bundle = pretrained_bundle(Mode::ipd, ds, tiny_arch(), 3);
  TrainConfig cfg;
  cfg.mode = Mode::ipd;
  cfg.seed = 3;
  cfg.lr = 1e-4;
  Trainer tr(*bundle, ds, cfg);
  CHECK(tr.learning_rate_for_epoch(0) == doctest::Approx(1e-4));
  CHECK(tr.learning_rate_for_epoch(9) == doctest::Approx(1e-4));
  CHECK(tr.learning_rate_for_epoch(10) == doctest::Approx(1e-5));
  CHECK(tr.learning_rate_for_epoch(19) == doctest::Approx(1e-5));
  CHECK(tr.learning_rate_for_epoch(20) == doctest::Approx(1e-6));
  CHECK(tr.learning_rate_for_epoch(29) == doctest::Approx(1e-6));
}

TEST_CASE("fix-set discipline: each phase leaves its complement bit-identical") {
  data::Dataset ds = tiny_dataset();
  ArchConfig arch = tiny_arch();
  auto bundle = pretrained_bundle(Mode::ipd, ds, arch, 5);
  TrainConfig cfg;
  cfg.mode = Mode::ipd;
  cfg.seed = 5;
  cfg.batch_size = 8;
  Trainer tr(*bundle, ds, cfg);
  Batch batch = tr.make_batch(tr.epoch_batches(0)[0]);

  auto digests = [&]() {
    std::vector<std::pair<std::string, Digest>> out;
    for (Net* n : bundle->nets()) out.emplace_back(n->name(), n->digest());
    return out;
  };

  for (int rep = 0; rep < 3; ++rep) {
    auto before = digests();
    tr.step_classifiers(batch);
    auto after = digests();
    for (std::size_t i = 0; i < before.size(); ++i) {
      const std::string& name = before[i].first;
      if (name == "e_id" || name == "g_dec" || name == "d")
        CHECK(before[i].second == after[i].second);
      else
        CHECK(before[i].second != after[i].second);
    }

    before = digests();
    tr.step_discriminator(batch);
    after = digests();
    for (std::size_t i = 0; i < before.size(); ++i) {
      if (before[i].first == "d")
        CHECK(before[i].second != after[i].second);
      else
        CHECK(before[i].second == after[i].second);
    }

    before = digests();
    tr.step_generator(batch);
    after = digests();
    for (std::size_t i = 0; i < before.size(); ++i) {
      const std::string& name = before[i].first;
      if (name == "e_pose" || name == "e_exp" || name == "g_dec")
        CHECK(before[i].second != after[i].second);
      else
        CHECK(before[i].second == after[i].second);
    }
  }
}

TEST_CASE("classifier phase drives the classification loss below log K on a fixed batch") {
  data::Dataset ds = tiny_dataset();
  auto bundle = pretrained_bundle(Mode::ipd, ds, tiny_arch(), 7);
  TrainConfig cfg;
  cfg.mode = Mode::ipd;
  cfg.seed = 7;
  cfg.lr = 1e-3;  // toy-batch convergence run
  Trainer tr(*bundle, ds, cfg);
  Batch batch = tr.make_batch(tr.epoch_batches(0)[0]);
  double last_c = 1e9;
  for (int it = 0; it < 200; ++it) last_c = *tr.step_classifiers(batch).c;
  CHECK(last_c < std::log(4.0));
}

TEST_CASE("generator phase: reconstruction decreases on an overfit set") {
  data::Dataset ds = tiny_dataset();
  auto bundle = pretrained_bundle(Mode::ipd, ds, tiny_arch(), 9);
  TrainConfig cfg;
  cfg.mode = Mode::ipd;
  cfg.seed = 9;
  cfg.batch_size = 16;
  Trainer tr(*bundle, ds, cfg);
  std::vector<int> idx = ds.train_indices(0);
  idx.resize(16);
  Batch batch = tr.make_batch(idx);
  std::vector<double> recon;
  for (int it = 0; it < 50; ++it) recon.push_back(*tr.step_generator(batch).recon);
  int increases = 0;
  for (std::size_t i = 1; i < recon.size(); ++i)
    if (recon[i] > recon[i - 1]) ++increases;
  CHECK(increases == 0);
  CHECK(recon.back() < recon.front());
}

TEST_CASE("generator phase with only the reconstruction weight equals the plain reconstruction loss") {
  data::Dataset ds = tiny_dataset();
  ArchConfig arch = tiny_arch();
  auto bundle = pretrained_bundle(Mode::ipd, ds, arch, 11);
  TrainConfig cfg;
  cfg.mode = Mode::ipd;
  cfg.seed = 11;
  cfg.weights.lambda1 = 0.0;
  cfg.weights.lambda2 = 0.0;
  cfg.weights.lambda3 = 0.0;
  cfg.weights.beta2 = 0.0;
  Trainer tr(*bundle, ds, cfg);
  Batch batch = tr.make_batch(tr.epoch_batches(0)[0]);

  // independent recomputation from the pre-step parameters
  Tensor f_id = encode(*bundle->e_id, batch.images);
  Tensor f_pose = encode(*bundle->e_pose, batch.images);
  Tensor f_exp = encode(*bundle->e_exp, batch.images);
  Tensor x_ip = decode(*bundle->g_dec, compose(f_id, f_pose));
  Tensor x_ipe = decode(*bundle->g_dec, compose(f_id, f_pose, f_exp));
  const double expect = loss::reconstruction_value(x_ipe, x_ip, batch.images, batch.y_e, 0);

  auto rep = tr.step_generator(batch);
  CHECK(*rep.recon == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("training aborts with a diagnostic on non-finite loss") {
  data::Dataset ds = tiny_dataset();
  auto bundle = pretrained_bundle(Mode::ipd, ds, tiny_arch(), 13);
  TrainConfig cfg;
  cfg.mode = Mode::ipd;
  cfg.seed = 13;
  Trainer tr(*bundle, ds, cfg);
  Batch batch = tr.make_batch(tr.epoch_batches(0)[0]);
  bundle->e_exp->parameters()[0]->value[0] = std::nan("");
  CHECK_THROWS_AS(tr.step_classifiers(batch), TrainError);
}

TEST_CASE("full run: metrics log, composite identity, checkpoints, determinism, resume") {
  namespace fs = std::filesystem;
  data::Dataset ds = tiny_dataset();
  ArchConfig arch = tiny_arch();

  auto run = [&](const std::string& dir, int epochs, const std::string& resume) {
    fs::remove_all(dir);
    auto bundle = std::make_unique<ModelBundle>(Mode::ipd, arch, 17);
    PretrainConfig pcfg;
    pcfg.epochs = 8;
    pcfg.seed = 17;
    pretrain_identity_encoder(*bundle->e_id, ds, pcfg);
    TrainConfig cfg;
    cfg.mode = Mode::ipd;
    cfg.seed = 17;
    cfg.epochs = epochs;
    cfg.batch_size = 16;
    cfg.out_dir = dir;
    Trainer tr(*bundle, ds, cfg);
    if (!resume.empty()) tr.resume_from(resume);
    tr.run();
  };

  run("test_run_a", 2, "");
  run("test_run_b", 2, "");
  CHECK(slurp("test_run_a/ckpt_epoch_002.ipck") == slurp("test_run_b/ckpt_epoch_002.ipck"));
  CHECK(!slurp("test_run_a/ckpt_epoch_002.ipck").empty());
  CHECK(slurp("test_run_a/metrics.log") == slurp("test_run_b/metrics.log"));

  // resume from epoch 1 reproduces the uninterrupted epoch-2 checkpoint
  run("test_run_c", 2, "test_run_a/ckpt_epoch_001.ipck");
  CHECK(slurp("test_run_c/ckpt_epoch_002.ipck") == slurp("test_run_a/ckpt_epoch_002.ipck"));

  // metrics lines carry every term and satisfy the composite identities
  std::ifstream metrics("test_run_a/metrics.log");
  std::string line;
  int lines = 0;
  while (std::getline(metrics, line)) {
    ++lines;
    std::map<std::string, double> kv;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) {
      auto eq = tok.find('=');
      kv[tok.substr(0, eq)] = std::stod(tok.substr(eq + 1));
    }
    for (const char* key : {"recon", "id", "cos", "confusion", "exp_cls", "pose_cls", "c", "d_real", "neu_fake",
                            "exp_fake", "g_prime", "g_total", "lr", "step", "epoch"})
      REQUIRE(kv.count(key) == 1);
    loss::LossWeights w;
    REQUIRE(kv["g_prime"] ==
            doctest::Approx(w.lambda1 * kv["neu_fake"] + w.lambda2 * kv["exp_fake"] + w.lambda3 * kv["id"] +
                            w.lambda4 * kv["recon"])
                .epsilon(1e-6));
    REQUIRE(kv["g_total"] ==
            doctest::Approx(kv["g_prime"] + kv["c"] + w.beta1 * kv["cos"] + w.beta2 * kv["confusion"]).epsilon(1e-6));
    REQUIRE(kv["c"] == doctest::Approx(kv["exp_cls"] + kv["pose_cls"]).epsilon(1e-9));
  }
  CHECK(lines == 2 * 3);  // 48 train samples in batches of 16 -> 3 per epoch

  for (const char* d : {"test_run_a", "test_run_b", "test_run_c"}) fs::remove_all(d);
}

TEST_CASE("ablation modes: id-only omits pose terms, baseline is bare classification") {
  namespace fs = std::filesystem;
  data::Dataset ds = tiny_dataset();
  ArchConfig arch = tiny_arch();

  {
    auto bundle = pretrained_bundle(Mode::id_only, ds, arch, 19);
    TrainConfig cfg;
    cfg.mode = Mode::id_only;
    cfg.seed = 19;
    cfg.epochs = 1;
    cfg.batch_size = 16;
    cfg.out_dir = "test_run_idonly";
    fs::remove_all(cfg.out_dir);
    Trainer tr(*bundle, ds, cfg);
    tr.run();
    std::string log = slurp("test_run_idonly/metrics.log");
    CHECK(log.find("pose_cls=") == std::string::npos);
    CHECK(log.find("confusion=") == std::string::npos);
    CHECK(log.find("recon=") != std::string::npos);
    CHECK(log.find("cos=") != std::string::npos);
    fs::remove_all(cfg.out_dir);
  }
  {
    auto bundle = std::make_unique<ModelBundle>(Mode::baseline, arch, 19);
    TrainConfig cfg;
    cfg.mode = Mode::baseline;
    cfg.seed = 19;
    cfg.epochs = 1;
    cfg.batch_size = 16;
    cfg.out_dir = "test_run_base";
    fs::remove_all(cfg.out_dir);
    Trainer tr(*bundle, ds, cfg);
    tr.run();
    std::string log = slurp("test_run_base/metrics.log");
    CHECK(log.find("exp_cls=") != std::string::npos);
    for (const char* key : {"pose_cls=", "confusion=", "recon=", "id=", "d_real=", "g_prime=", "cos="})
      CHECK(log.find(key) == std::string::npos);
    fs::remove_all(cfg.out_dir);
  }
}

TEST_CASE("trainer validates its inputs") {
  data::Dataset ds = tiny_dataset();
  ArchConfig arch = tiny_arch();
  // unfrozen identity encoder is rejected
  auto bundle = std::make_unique<ModelBundle>(Mode::ipd, arch, 23);
  TrainConfig cfg;
  cfg.mode = Mode::ipd;
  CHECK_THROWS_AS(Trainer(*bundle, ds, cfg), ConfigError);
  // dataset/model shape mismatch is rejected before training
  ArchConfig wrong = arch;
  wrong.height = 32;
  wrong.width = 32;
  auto bundle2 = pretrained_bundle(Mode::ipd, ds, arch, 23);
  auto bundle3 = std::make_unique<ModelBundle>(Mode::ipd, wrong, 23);
  bundle3->e_id->set_trainable(false);
  CHECK_THROWS_AS(Trainer(*bundle3, ds, cfg), ConfigError);
  // mode mismatch
  TrainConfig cfg_base;
  cfg_base.mode = Mode::baseline;
  CHECK_THROWS_AS(Trainer(*bundle2, ds, cfg_base), ConfigError);
}
