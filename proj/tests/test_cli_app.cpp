#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "doctest.h"
#include "mddose/checkpoint.hpp"
#include "mddose/config.hpp"
#include "mddose/train.hpp"

using namespace mddose;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("mddose_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Drops the trailing wall-clock column of a CSV.
std::string without_timing(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + '\n';
  return out;
}

RunConfig tiny_run(const fs::path& data) {
  RunConfig cfg;
  cfg.model.patch_size = 4;
  cfg.model.base_channels = 4;
  cfg.model.depth = 2;
  cfg.model.state_dim = 3;
  cfg.model.conv_kernel = 3;
  cfg.model.time_embed_dim = 6;
  cfg.model.num_steps = 40;
  cfg.schedule.steps = 40;
  cfg.schedule.beta_max = 0.3;
  cfg.image_size = 32;
  cfg.epochs = 4;
  cfg.batch_size = 2;
  cfg.optim.lr = 3e-3;
  cfg.seed = 9;
  cfg.data_dir = data.string();
  return cfg;
}

fs::path tiny_dataset(const fs::path& root) {
  PhantomSpec spec;
  spec.height = spec.width = 32;
  build_dataset(root / "data", SplitCounts{5, 1, 3}, 21, spec, true);
  return root / "data";
}

struct CliResult {
  int status;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::string& args, const fs::path& scratch) {
  const fs::path out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = std::string(MDDOSE_CLI) + " " + args + " > " + out.string() + " 2> " + err.string();
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(out), slurp(err)};
}

}  // namespace

TEST_CASE("learning-rate law") {
  OptimizerConfig o;
  CHECK(learning_rate(o, 0, 60, 30) == 1e-2);
  CHECK(learning_rate(o, 29, 60, 30) == 1e-2);
  CHECK(learning_rate(o, 30, 60, 30) == doctest::Approx(1e-2 - (1e-2 - 1e-4) / 30.0).epsilon(1e-14));
  CHECK(learning_rate(o, 44, 60, 30) == doctest::Approx(1e-2 - (1e-2 - 1e-4) * 15.0 / 30.0).epsilon(1e-14));
  CHECK(learning_rate(o, 59, 60, 30) == doctest::Approx(1e-4).epsilon(1e-14));
  // Full-scale schedule: 1500 epochs with the decay starting at 750.
  CHECK(learning_rate(o, 749, 1500, 750) == 1e-2);
  CHECK(learning_rate(o, 1499, 1500, 750) == doctest::Approx(1e-4).epsilon(1e-14));
  for (std::size_t e = 1; e < 1500; ++e) CHECK(learning_rate(o, e, 1500, 750) <= learning_rate(o, e - 1, 1500, 750));

  RunConfig cfg;
  CHECK(cfg.decay_epoch() == 30);
  CHECK(learning_rate(cfg, 0) == 1e-2);
  CHECK(learning_rate(cfg, 59) == doctest::Approx(1e-4).epsilon(1e-14));
  cfg.decay_start = 50;
  CHECK(learning_rate(cfg, 49) == 1e-2);
  CHECK(learning_rate(cfg, 59) == doctest::Approx(1e-4).epsilon(1e-14));
}

TEST_CASE("run config validation and JSON round trip") {
  RunConfig cfg;
  cfg.seed = 123456789012345ULL;
  cfg.optim.lr = 0.0123;
  cfg.data_dir = "some/dir";
  cfg.model.state_dim = 5;
  const RunConfig back = run_config_from_json(to_json(cfg));
  CHECK(to_json(back) == to_json(cfg));
  CHECK(back.seed == cfg.seed);
  CHECK(back.optim.lr == 0.0123);
  CHECK(back.model.state_dim == 5);
  CHECK_NOTHROW(cfg.validate());

  auto broken = [](auto edit) {
    RunConfig c;
    edit(c);
    return c;
  };
  CHECK_THROWS_AS(broken([](RunConfig& c) { c.batch_size = 0; }).validate(), std::invalid_argument);
  CHECK_THROWS_AS(broken([](RunConfig& c) { c.epochs = 0; }).validate(), std::invalid_argument);
  CHECK_THROWS_AS(broken([](RunConfig& c) { c.decay_start = 61; }).validate(), std::invalid_argument);
  CHECK_THROWS_AS(broken([](RunConfig& c) { c.optim.lr_min = 0.1; }).validate(), std::invalid_argument);
  CHECK_THROWS_AS(broken([](RunConfig& c) { c.schedule.steps = 10; }).validate(), std::invalid_argument);
  CHECK_THROWS_AS(broken([](RunConfig& c) { c.image_size = 48; }).validate(), std::invalid_argument);
  CHECK_THROWS(run_config_from_json("{not json"));
}

TEST_CASE("Adam matches a hand computation") {
  Tensor p({2}, std::vector<double>{1.0, -2.0});
  p.set_requires_grad(true);
  OptimizerConfig o;
  Adam adam({{"p", &p}}, o);
  const double lr = 0.1;
  double m[2] = {0, 0}, v[2] = {0, 0}, want[2] = {1.0, -2.0};
  for (int step = 1; step <= 3; ++step) {
    // Gradient of sum(p^2) at the current point.
    for (std::size_t i = 0; i < 2; ++i) p.grad()[i] = 2.0 * p[i];
    adam.step(lr);
    for (std::size_t i = 0; i < 2; ++i) {
      const double g = 2.0 * want[i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1.0 - std::pow(0.9, step)), vh = v[i] / (1.0 - std::pow(0.999, step));
      want[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
      CHECK(p[i] == doctest::Approx(want[i]).epsilon(1e-13));
    }
  }
  CHECK(adam.steps() == 3);

  SUBCASE("gradient clipping scales to the global norm") {
    Tensor q({2}, std::vector<double>{0.0, 0.0});
    q.set_requires_grad(true);
    OptimizerConfig clipped;
    clipped.grad_clip = 1.0;
    clipped.beta1 = 0.0;
    clipped.beta2 = 0.0;
    Adam a({{"q", &q}}, clipped);
    q.grad()[0] = 30.0;
    q.grad()[1] = 40.0;
    a.step(1.0);
    // With beta1 = beta2 = 0 the step is g / |g| per entry, unchanged by clipping.
    CHECK(q[0] == doctest::Approx(-1.0));
    CHECK(q[1] == doctest::Approx(-1.0));
  }

}

TEST_CASE("checkpoint file round trip") {
  TempDir tmp("ckpt");
  Checkpoint c;
  c.config_json = "{\"a\": 1}";
  c.epoch = 3;
  c.global_step = 17;
  c.rng_state = "1 2 3";
  c.adam_step = 17;
  c.params.push_back({"w", Tensor({2, 2}, std::vector<double>{1, 2, 3, -4}), Tensor({2, 2}, 0.5), Tensor({2, 2}, 0.25)});
  c.params.push_back({"b", Tensor({3}), Tensor({3}), Tensor({3})});
  const fs::path path = tmp.path / "nested" / "c.bin";
  save_checkpoint(path, c);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.config_json == c.config_json);
  CHECK(back.epoch == 3);
  CHECK(back.global_step == 17);
  CHECK(back.rng_state == "1 2 3");
  REQUIRE(back.params.size() == 2);
  CHECK(back.params[0].value.storage() == c.params[0].value.storage());
  CHECK(back.params[0].adam_v.storage() == c.params[0].adam_v.storage());
  save_checkpoint(tmp.path / "again.bin", back);
  CHECK(slurp(path) == slurp(tmp.path / "again.bin"));

  std::string bytes = slurp(path);
  std::ofstream(tmp.path / "trailing.bin", std::ios::binary) << bytes << "x";
  CHECK_THROWS_AS(load_checkpoint(tmp.path / "trailing.bin"), std::runtime_error);
  std::ofstream(tmp.path / "short.bin", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(load_checkpoint(tmp.path / "short.bin"), std::runtime_error);
  bytes[0] = 'X';
  std::ofstream(tmp.path / "magic.bin", std::ios::binary) << bytes;
  CHECK_THROWS_AS(load_checkpoint(tmp.path / "magic.bin"), std::runtime_error);
  CHECK_THROWS(load_checkpoint(tmp.path / "missing.bin"));
}

TEST_CASE("dose scaling helpers") {
  Tensor dose({4}, std::vector<double>{0.0, 0.5, 1.0, 1.2});
  const Tensor sig = dose_to_signal(dose);
  CHECK(sig.storage() == std::vector<double>{-1.0, 0.0, 1.0, 1.4});
  CHECK(signal_to_dose(sig).storage() == dose.storage());
  CHECK(kSignalRange.lo == -1.0);
  CHECK(kSignalRange.hi == doctest::Approx(1.4));
  Tensor wild({4}, std::vector<double>{-0.1, 0.3, 1.3, 1.1});
  CHECK(clamp_dose(wild) == 0.5);
  CHECK(wild.storage() == std::vector<double>{0.0, 0.3, 1.2, 1.1});
}

TEST_CASE("training pipeline: logs, resume and bit-identical trajectories") {
  TempDir tmp("train");
  const fs::path data = tiny_dataset(tmp.path);
  const RunConfig cfg = tiny_run(data);

  std::ostringstream log;
  TrainOptions full;
  full.out_dir = tmp.path / "full";
  full.log = &log;
  const TrainSummary s = run_training(cfg, full);
  CHECK(s.epochs.size() == 4);
  CHECK(s.parameter_count == DoseDenoiser(cfg.model, cfg.seed).parameter_count());
  CHECK(s.seconds_per_step > 0.0);
  CHECK(log.str().find("parameters: " + std::to_string(s.parameter_count)) != std::string::npos);
  CHECK(log.str().find("seconds per iteration: ") != std::string::npos);
  for (const char* f : {"config.json", "loss.csv", "epochs.csv", "checkpoint.bin"}) CHECK(fs::exists(full.out_dir / f));
  CHECK(run_config_from_json(slurp(full.out_dir / "config.json")).seed == cfg.seed);

  // 5 samples at batch 2: three steps per epoch.
  const std::string loss = slurp(full.out_dir / "loss.csv");
  CHECK(loss.rfind("epoch,step,lr,loss,seconds\n", 0) == 0);
  CHECK(std::count(loss.begin(), loss.end(), '\n') == 1 + 4 * 3);
  CHECK(load_checkpoint(full.out_dir / "checkpoint.bin").global_step == 12);

  SUBCASE("existing run directory needs --force") {
    CHECK_THROWS_AS(run_training(cfg, full), std::runtime_error);
    full.overwrite = true;
    full.log = nullptr;
    CHECK_NOTHROW(run_training(cfg, full));
  }

  SUBCASE("split run with resume reproduces the trajectory") {
    TrainOptions part;
    part.out_dir = tmp.path / "split";
    part.max_epochs = 1;
    run_training(cfg, part);
    CHECK(load_checkpoint(part.out_dir / "checkpoint.bin").epoch == 1);
    part.resume = true;
    part.max_epochs = 2;
    run_training(RunConfig{}, part);  // the checkpoint's config wins on resume
    part.max_epochs.reset();
    run_training(RunConfig{}, part);
    CHECK(slurp(part.out_dir / "checkpoint.bin") == slurp(full.out_dir / "checkpoint.bin"));
    CHECK(without_timing(slurp(part.out_dir / "loss.csv")) == without_timing(loss));
    CHECK(without_timing(slurp(part.out_dir / "epochs.csv")) == without_timing(slurp(full.out_dir / "epochs.csv")));
  }

  SUBCASE("resume discards log rows of an unfinished epoch") {
    TrainOptions part;
    part.out_dir = tmp.path / "crash";
    part.max_epochs = 2;
    run_training(cfg, part);
    std::ofstream(part.out_dir / "loss.csv", std::ios::app) << "3,7,0.003,123.0,0.1\n";
    part.resume = true;
    part.max_epochs.reset();
    run_training(cfg, part);
    CHECK(without_timing(slurp(part.out_dir / "loss.csv")) == without_timing(loss));
  }

  SUBCASE("same seed, same run; different seed, different run") {
    TrainOptions again;
    again.out_dir = tmp.path / "again";
    run_training(cfg, again);
    CHECK(slurp(again.out_dir / "checkpoint.bin") == slurp(full.out_dir / "checkpoint.bin"));
    RunConfig other = cfg;
    other.seed = 10;
    again.out_dir = tmp.path / "other";
    run_training(other, again);
    CHECK(slurp(again.out_dir / "checkpoint.bin") != slurp(full.out_dir / "checkpoint.bin"));
  }

  SUBCASE("resume errors") {
    TrainOptions none;
    none.out_dir = tmp.path / "nothing";
    none.resume = true;
    CHECK_THROWS_AS(run_training(cfg, none), std::runtime_error);
  }

  SUBCASE("epoch-zero checkpoint for an untrained baseline") {
    TrainOptions zero;
    zero.out_dir = tmp.path / "untrained";
    zero.max_epochs = 0;
    run_training(cfg, zero);
    const Checkpoint c = load_checkpoint(zero.out_dir / "checkpoint.bin");
    CHECK(c.epoch == 0);
    CHECK(c.global_step == 0);
  }

  SUBCASE("sampling and evaluation are deterministic") {
    SampleRequest req;
    req.checkpoint = full.out_dir / "checkpoint.bin";
    req.data_dir = data;
    req.seed = 4;
    req.stride = 5;
    req.batch_size = 2;
    req.out_dir = tmp.path / "pred_a";
    const SampleSummary a = run_sampling(req);
    CHECK(a.sample_ids == std::vector<std::size_t>{6, 7, 8});
    req.out_dir = tmp.path / "pred_b";
    run_sampling(req);
    for (const char* f : {"0006.bin", "0007.bin", "0008.bin"}) {
      CHECK(slurp(tmp.path / "pred_a" / "samples" / f) == slurp(tmp.path / "pred_b" / "samples" / f));
    }
    CHECK(slurp(tmp.path / "pred_a" / "sampler_diagnostics.csv") == slurp(tmp.path / "pred_b" / "sampler_diagnostics.csv"));
    const auto arrays = read_arrays(tmp.path / "pred_a" / "samples" / "0006.bin");
    REQUIRE(arrays.size() == 2);
    CHECK(arrays[0].first == "pred");
    CHECK(arrays[0].second.shape() == Shape{1, 32, 32});
    for (double v : arrays[0].second.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= kDoseClampMax);
    }
    CHECK(arrays[1].second.storage() == load_sample(data, 6).dose.storage());
    CHECK_THROWS_AS(run_sampling(req), std::runtime_error);  // exists without overwrite

    EvalRequest ev;
    ev.pred_dir = tmp.path / "pred_a";
    ev.data_dir = data;
    ev.out_dir = tmp.path / "report_a";
    const EvalSummary ea = run_eval(ev);
    ev.pred_dir = tmp.path / "pred_b";
    ev.out_dir = tmp.path / "report_b";
    run_eval(ev);
    REQUIRE(ea.rows.size() == 3);
    for (const char* f : {"metrics.csv", "dvh_curves.csv", "summary.csv"}) {
      CHECK(slurp(tmp.path / "report_a" / f) == slurp(tmp.path / "report_b" / f));
    }
    const std::string metrics = slurp(tmp.path / "report_a" / "metrics.csv");
    CHECK(metrics.rfind("sample_id,dose_score,dvh_score,hi\n", 0) == 0);
    CHECK(metrics.find("\nmean,") != std::string::npos);
    CHECK(metrics.find("\nstd,") != std::string::npos);
    double mean = 0.0;
    for (const auto& r : ea.rows) mean += r.report.dose_score;
    CHECK(ea.mean.dose_score == doctest::Approx(mean / 3.0).epsilon(1e-14));

    fs::remove(tmp.path / "pred_b" / "samples" / "0007.bin");
    try {
      run_eval(ev);
      FAIL("expected a missing-prediction error");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("7") != std::string::npos);
    }
  }

  SUBCASE("shape mismatch between checkpoint and dataset") {
    PhantomSpec spec;
    spec.height = spec.width = 64;
    build_dataset(tmp.path / "big", SplitCounts{1, 1, 1}, 0, spec, false);
    SampleRequest req;
    req.checkpoint = full.out_dir / "checkpoint.bin";
    req.data_dir = tmp.path / "big";
    req.out_dir = tmp.path / "pred_big";
    try {
      run_sampling(req);
      FAIL("expected a shape error");
    } catch (const std::invalid_argument& e) {
      const std::string msg = e.what();
      CHECK(msg.find("32x32") != std::string::npos);
      CHECK(msg.find("64x64") != std::string::npos);
    }
  }
}

TEST_CASE("command-line error paths") {
  TempDir tmp("errors");
  SUBCASE("gen rejects a size the model cannot patch, writing nothing") {
    const CliResult r = run_cli("gen --out " + (tmp.path / "d48").string() + " --size 48", tmp.path);
    CHECK(r.status != 0);
    CHECK(r.err.rfind("error: ", 0) == 0);
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
    CHECK_FALSE(fs::exists(tmp.path / "d48"));
  }
  SUBCASE("unknown option") {
    const CliResult r = run_cli("train --bogus 1", tmp.path);
    CHECK(r.status == 2);
    CHECK(r.err.rfind("error: ", 0) == 0);
  }
  SUBCASE("missing subcommand") {
    const CliResult r = run_cli("", tmp.path);
    CHECK(r.status != 0);
    CHECK(r.err.rfind("error: ", 0) == 0);
  }
  SUBCASE("gen then refuse to overwrite") {
    const std::string out = (tmp.path / "d").string();
    CliResult r = run_cli("gen --out " + out + " --size 128 --train 2 --val 1 --test 1 --seed 5", tmp.path);
    CHECK(r.status == 0);
    CHECK(r.out.find("train: 2 samples") != std::string::npos);
    r = run_cli("gen --out " + out + " --size 64", tmp.path);
    CHECK(r.status == 1);
    CHECK(r.err.find("--force") != std::string::npos);
  }
  SUBCASE("train prints the resolved config") {
    const CliResult r = run_cli("train --print-config --epochs 8 --lr 0.005", tmp.path);
    CHECK(r.status == 0);
    const RunConfig cfg = run_config_from_json(r.out);
    CHECK(cfg.epochs == 8);
    CHECK(cfg.optim.lr == 0.005);
  }
  SUBCASE("train rejects an invalid config") {
    const CliResult r = run_cli("train --print-config --batch-size 0", tmp.path);
    CHECK(r.status == 1);
    CHECK(r.err.find("batch") != std::string::npos);
  }
  SUBCASE("eval on a missing directory") {
    const CliResult r = run_cli("eval --pred " + (tmp.path / "none").string() + " --data " + (tmp.path / "none").string(), tmp.path);
    CHECK(r.status == 1);
    CHECK(r.err.rfind("error: ", 0) == 0);
  }
}
