// mddose: phantom generation, training, sampling and evaluation.
//
// Every failure prints a single "error: <message>" line on stderr and exits
// with a nonzero status.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mddose/config.hpp"
#include "mddose/dataset.hpp"
#include "mddose/train.hpp"

namespace fs = std::filesystem;
using namespace mddose;

namespace {

RunConfig base_config(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

int cmd_gen(const std::string& out, const std::string& config_path, std::uint64_t seed, std::size_t size,
            const SplitCounts& counts, bool force) {
  // Validate against the model geometry before touching the filesystem.
  RunConfig cfg = base_config(config_path);
  cfg.image_size = size;
  cfg.model.validate(size, size);
  PhantomSpec spec;
  spec.height = size;
  spec.width = size;
  const DatasetInfo info = build_dataset(out, counts, seed, spec, force);
  std::cout << "dataset: " << out << '\n'
            << "size: " << size << 'x' << size << '\n'
            << "seed: " << seed << '\n';
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    std::cout << split_name(s) << ": " << info.entries(s).size() << " samples\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mamba-based diffusion dose prediction on synthetic phantoms"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a phantom dataset");
  std::string gen_out, gen_config;
  std::uint64_t gen_seed = 0;
  std::size_t gen_size = 64;
  SplitCounts counts;
  bool gen_force = false;
  gen->add_option("--out", gen_out, "dataset directory")->required();
  gen->add_option("--config", gen_config, "run config used to validate the image size");
  gen->add_option("--seed", gen_seed, "base seed");
  gen->add_option("--size", gen_size, "image height and width");
  gen->add_option("--train", counts.train, "training samples");
  gen->add_option("--val", counts.val, "validation samples");
  gen->add_option("--test", counts.test, "test samples");
  gen->add_flag("--force", gen_force, "replace an existing dataset");

  // train
  auto* train = app.add_subcommand("train", "train the denoiser");
  std::string train_config, train_data, train_out;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::size_t> train_epochs, train_batch, max_epochs, train_decay;
  std::optional<double> train_lr, train_lr_min;
  bool resume = false, train_force = false, print_config = false;
  train->add_option("--config", train_config, "run config (JSON)");
  train->add_option("--data", train_data, "dataset directory (overrides config)");
  train->add_option("--out", train_out, "run directory");
  train->add_option("--seed", train_seed, "seed for initialization and training noise");
  train->add_option("--epochs", train_epochs, "total epochs");
  train->add_option("--batch-size", train_batch, "batch size");
  train->add_option("--lr", train_lr, "initial learning rate");
  train->add_option("--lr-min", train_lr_min, "final learning rate");
  train->add_option("--decay-start", train_decay, "first epoch of the linear decay (default: half)");
  train->add_option("--max-epochs", max_epochs, "stop after this many epochs in this invocation");
  train->add_flag("--resume", resume, "continue from <out>/checkpoint.bin");
  train->add_flag("--force", train_force, "overwrite an existing run directory");
  train->add_flag("--print-config", print_config, "print the resolved config and exit");

  // sample
  auto* samp = app.add_subcommand("sample", "sample dose maps for a dataset split");
  SampleRequest sreq;
  std::string sample_split = "test", sample_ckpt, sample_data, sample_out;
  samp->add_option("--checkpoint", sample_ckpt, "checkpoint file")->required();
  samp->add_option("--data", sample_data, "dataset directory")->required();
  samp->add_option("--out", sample_out, "prediction directory")->required();
  samp->add_option("--split", sample_split, "train, val or test");
  samp->add_option("--n", sreq.count, "number of samples (0 = whole split)");
  samp->add_option("--seed", sreq.seed, "sampling seed");
  samp->add_option("--stride", sreq.stride, "evaluate every stride-th reverse step");
  samp->add_option("--batch-size", sreq.batch_size, "samples per reverse-chain batch");
  bool clip = false;
  samp->add_flag("--clip", clip, "clip each step's denoised estimate to the dose range");
  samp->add_flag("--force", sreq.overwrite, "overwrite existing predictions");

  // eval
  auto* eval = app.add_subcommand("eval", "score predictions against the ground truth");
  EvalRequest ereq;
  std::string eval_split = "test", eval_pred, eval_data, eval_out;
  eval->add_option("--pred", eval_pred, "prediction directory")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--out", eval_out, "report directory (default: the prediction directory)");
  eval->add_option("--split", eval_split, "train, val or test");
  eval->add_option("--n", ereq.count, "evaluate the first n samples (0 = whole split)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*gen) return cmd_gen(gen_out, gen_config, gen_seed, gen_size, counts, gen_force);

    if (*train) {
      RunConfig cfg = base_config(train_config);
      if (!train_data.empty()) cfg.data_dir = train_data;
      if (train_seed) cfg.seed = *train_seed;
      if (train_epochs) cfg.epochs = *train_epochs;
      if (train_batch) cfg.batch_size = *train_batch;
      if (train_lr) cfg.optim.lr = *train_lr;
      if (train_lr_min) cfg.optim.lr_min = *train_lr_min;
      if (train_decay) cfg.decay_start = *train_decay;
      cfg.validate();
      if (print_config) {
        std::cout << to_json(cfg) << '\n';
        return 0;
      }
      if (train_out.empty()) throw std::invalid_argument("train: --out is required");
      if (cfg.data_dir.empty() && !resume) throw std::invalid_argument("train: no dataset (--data or data_dir in config)");
      TrainOptions opts;
      opts.out_dir = train_out;
      opts.resume = resume;
      opts.overwrite = train_force;
      opts.max_epochs = max_epochs;
      opts.log = &std::cout;
      run_training(cfg, opts);
      return 0;
    }

    if (*samp) {
      sreq.checkpoint = sample_ckpt;
      sreq.data_dir = sample_data;
      sreq.out_dir = sample_out;
      sreq.split = parse_split(sample_split);
      sreq.clip_denoised = clip;
      sreq.log = &std::cout;
      run_sampling(sreq);
      return 0;
    }

    if (*eval) {
      ereq.pred_dir = eval_pred;
      ereq.data_dir = eval_data;
      ereq.out_dir = eval_out.empty() ? eval_pred : eval_out;
      ereq.split = parse_split(eval_split);
      ereq.log = &std::cout;
      run_eval(ereq);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
