#include "mddose/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "binary_io.hpp"
#include "json.hpp"

namespace mddose {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Distinct stream for training noise and shuffling, so it never coincides
// with the parameter-initialization stream seeded by cfg.seed.
std::uint64_t training_stream_seed(std::uint64_t seed) { return seed ^ 0x5DEECE66DULL; }

void prepare_output_dir(const fs::path& dir, const std::vector<std::string>& products, bool overwrite) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw std::runtime_error(dir.string() + " exists and is not a directory");
  if (!overwrite) {
    for (const auto& p : products) {
      if (fs::exists(dir / p)) throw std::runtime_error(dir.string() + " already holds " + p + " (use --force)");
    }
  }
  fs::create_directories(dir);
}

// Drops log rows past `epoch` (written by an epoch that never reached its
// checkpoint), keeping the header.
void truncate_log(const fs::path& path, std::uint64_t epoch) {
  std::ifstream in(path);
  if (!in) return;
  std::string line, kept;
  bool header = true;
  while (std::getline(in, line)) {
    if (header || (!line.empty() && std::stoull(line.substr(0, line.find(','))) <= epoch)) kept += line + '\n';
    header = false;
  }
  in.close();
  detail::write_file_atomic(path, kept);
}

std::string sample_name(std::size_t id) {
  std::ostringstream ss;
  ss << std::setw(4) << std::setfill('0') << id << ".bin";
  return ss.str();
}

Tensor slice_sample(const Tensor& batch, std::size_t b) {
  Shape shape(batch.shape().begin() + 1, batch.shape().end());
  const std::size_t n = numel(shape);
  std::vector<double> data(batch.storage().begin() + static_cast<std::ptrdiff_t>(b * n),
                           batch.storage().begin() + static_cast<std::ptrdiff_t>((b + 1) * n));
  return Tensor(std::move(shape), std::move(data));
}

void check_shapes(const RunConfig& cfg, const DatasetInfo& info, const fs::path& data_dir) {
  if (info.spec.height != cfg.image_size || info.spec.width != cfg.image_size) {
    throw std::invalid_argument("model expects " + std::to_string(cfg.image_size) + "x" +
                                std::to_string(cfg.image_size) + " images but dataset " + data_dir.string() + " has " +
                                std::to_string(info.spec.height) + "x" + std::to_string(info.spec.width));
  }
  if (cfg.model.cond_channels != kStructureChannels) {
    throw std::invalid_argument("model expects " + std::to_string(cfg.model.cond_channels) +
                                " structure channels but dataset " + data_dir.string() + " has " +
                                std::to_string(kStructureChannels));
  }
}

}  // namespace

Tensor dose_to_signal(const Tensor& dose) {
  Tensor out = dose;
  for (double& v : out.data()) v = 2.0 * v - 1.0;
  return out;
}

Tensor signal_to_dose(const Tensor& signal) {
  Tensor out = signal;
  for (double& v : out.data()) v = 0.5 * (v + 1.0);
  return out;
}

double clamp_dose(Tensor& dose) {
  std::size_t outside = 0;
  for (double& v : dose.data()) {
    if (v < 0.0 || v > kDoseClampMax) {
      ++outside;
      v = std::clamp(v, 0.0, kDoseClampMax);
    }
  }
  return static_cast<double>(outside) / static_cast<double>(dose.size());
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(ParamList params, const OptimizerConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor->shape(), 0.0);
    v_.emplace_back(p.tensor->shape(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  double scale = 1.0;
  if (cfg_.grad_clip > 0.0) {
    double sq = 0.0;
    for (const auto& p : params_)
      for (double g : p.tensor->grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) scale = cfg_.grad_clip / norm;
  }
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].tensor->data();
    auto g = params_[i].tensor->grad();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] * scale;
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
    }
  }
}

void Adam::export_state(Checkpoint& ckpt) const {
  ckpt.adam_step = t_;
  ckpt.params.clear();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor value(params_[i].tensor->shape(), params_[i].tensor->storage());
    ckpt.params.push_back({params_[i].name, std::move(value), m_[i], v_[i]});
  }
}

void Adam::import_state(const Checkpoint& ckpt) {
  if (ckpt.params.size() != params_.size()) {
    throw std::runtime_error("checkpoint has " + std::to_string(ckpt.params.size()) + " parameters, model has " +
                             std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& e = ckpt.params[i];
    Tensor& p = *params_[i].tensor;
    if (e.name != params_[i].name || e.value.shape() != p.shape() || e.adam_m.shape() != p.shape() ||
        e.adam_v.shape() != p.shape()) {
      throw std::runtime_error("checkpoint parameter " + e.name + " " + shape_str(e.value.shape()) +
                               " does not match model parameter " + params_[i].name + " " + shape_str(p.shape()));
    }
    std::copy(e.value.storage().begin(), e.value.storage().end(), p.storage().begin());
    m_[i] = e.adam_m;
    v_[i] = e.adam_v;
  }
  t_ = ckpt.adam_step;
}

// ---------------------------------------------------------------------------
// Data

Tensor stack_structures(const std::vector<Phantom>& samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("stack_structures: empty batch");
  const Shape& s = samples.at(indices[0]).structure.shape();
  Tensor out({indices.size(), s[0], s[1], s[2]});
  const std::size_t n = numel(s);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Tensor& src = samples.at(indices[b]).structure;
    if (src.shape() != s) throw std::invalid_argument("stack_structures: mixed sample shapes");
    std::copy(src.storage().begin(), src.storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(b * n));
  }
  return out;
}

Batch make_batch(const std::vector<Phantom>& samples, std::span<const std::size_t> indices) {
  Batch batch;
  batch.cond = stack_structures(samples, indices);
  const Shape& d = samples.at(indices[0]).dose.shape();
  batch.x0 = Tensor({indices.size(), d[0], d[1], d[2]});
  const std::size_t n = numel(d);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Tensor& dose = samples.at(indices[b]).dose;
    for (std::size_t j = 0; j < n; ++j) batch.x0[b * n + j] = 2.0 * dose[j] - 1.0;
  }
  return batch;
}

std::vector<Phantom> load_split(const fs::path& data_dir, const DatasetInfo& info, Split split, std::size_t count) {
  const std::size_t available = info.entries(split).size();
  if (count == 0) count = available;
  if (count > available) {
    throw std::invalid_argument("requested " + std::to_string(count) + " samples but the " + split_name(split) +
                                " split of " + data_dir.string() + " has " + std::to_string(available));
  }
  std::vector<Phantom> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(load_sample(data_dir, info, split, i));
  return out;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(const RunConfig& cfg, std::vector<Phantom> train_set)
    : cfg_(cfg),
      data_(std::move(train_set)),
      sched_(make_schedule(cfg.schedule.steps, cfg.schedule.beta_min, cfg.schedule.beta_max)),
      model_(cfg.model, cfg.seed),
      adam_(model_.parameters(), cfg.optim),
      rng_(training_stream_seed(cfg.seed)) {
  cfg_.validate();
  if (data_.empty()) throw std::invalid_argument("Trainer: empty training set");
}

EpochStats Trainer::train_epoch(std::ostream* step_log) {
  const auto epoch_start = Clock::now();
  const double lr = learning_rate(cfg_, epoch_);

  // Fisher-Yates with the run's own stream keeps the order reproducible
  // across standard libraries.
  std::vector<std::size_t> order(data_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng_.uniform_index(0, i)]);

  double loss_sum = 0.0;
  std::size_t batches = 0;
  Tape tape;
  for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
    const auto step_start = Clock::now();
    const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
    const Batch batch = make_batch(data_, std::span<const std::size_t>(order).subspan(start, end - start));
    tape.reset();
    LossTerms terms;
    try {
      terms = training_loss(model_, tape, batch.x0, batch.cond, rng_, sched_);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("epoch " + std::to_string(epoch_ + 1) + " step " + std::to_string(step_ + 1) +
                               " (lr " + std::to_string(lr) + "): " + e.what());
    }
    tape.backward(terms.loss);
    adam_.step(lr);
    ++step_;
    const double loss = terms.loss.value().item();
    loss_sum += loss;
    ++batches;
    const double dt = seconds_since(step_start);
    step_seconds_ += dt;
    if (step_log) {
      *step_log << epoch_ + 1 << ',' << step_ << ',' << std::setprecision(10) << lr << ',' << std::setprecision(17)
                << loss << ',' << std::setprecision(6) << dt << '\n';
    }
  }
  ++epoch_;
  return {epoch_, loss_sum / static_cast<double>(batches), lr, seconds_since(epoch_start)};
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt;
  ckpt.config_json = to_json(cfg_);
  ckpt.epoch = epoch_;
  ckpt.global_step = step_;
  ckpt.rng_state = rng_.state();
  adam_.export_state(ckpt);
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  adam_.import_state(ckpt);
  rng_.restore(ckpt.rng_state);
  epoch_ = ckpt.epoch;
  step_ = ckpt.global_step;
}

double Trainer::seconds_per_step() const {
  return step_ ? step_seconds_ / static_cast<double>(step_) : 0.0;
}

LoadedModel load_model(const fs::path& checkpoint_path) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  RunConfig cfg = run_config_from_json(ckpt.config_json);
  cfg.validate();
  LoadedModel out{cfg, DoseDenoiser(cfg.model, cfg.seed),
                  make_schedule(cfg.schedule.steps, cfg.schedule.beta_min, cfg.schedule.beta_max)};
  Adam(out.model.parameters(), cfg.optim).import_state(ckpt);
  return out;
}

// ---------------------------------------------------------------------------
// Pipelines

TrainSummary run_training(const RunConfig& requested, const TrainOptions& options) {
  const fs::path ckpt_path = options.out_dir / "checkpoint.bin";
  std::optional<Checkpoint> resumed;
  RunConfig cfg = requested;
  if (options.resume) {
    if (!fs::exists(ckpt_path)) throw std::runtime_error("cannot resume: " + ckpt_path.string() + " not found");
    resumed = load_checkpoint(ckpt_path);
    cfg = run_config_from_json(resumed->config_json);
  } else {
    prepare_output_dir(options.out_dir, {"checkpoint.bin", "loss.csv", "epochs.csv"}, options.overwrite);
  }
  cfg.validate();

  const DatasetInfo info = read_manifest(cfg.data_dir);
  check_shapes(cfg, info, cfg.data_dir);
  Trainer trainer(cfg, load_split(cfg.data_dir, info, Split::kTrain, 0));
  if (resumed) trainer.restore(*resumed);

  TrainSummary summary;
  summary.parameter_count = trainer.model().parameter_count();
  if (options.log) {
    *options.log << "parameters: " << summary.parameter_count << '\n';
    if (resumed) *options.log << "resuming after epoch " << trainer.epochs_done() << '\n';
  }

  {
    std::ofstream cfg_out(options.out_dir / "config.json");
    cfg_out << to_json(cfg) << '\n';
  }
  if (resumed) {
    truncate_log(options.out_dir / "loss.csv", resumed->epoch);
    truncate_log(options.out_dir / "epochs.csv", resumed->epoch);
  }
  const auto mode = resumed ? std::ios::app : std::ios::trunc;
  std::ofstream loss_csv(options.out_dir / "loss.csv", mode);
  std::ofstream epoch_csv(options.out_dir / "epochs.csv", mode);
  if (!loss_csv || !epoch_csv) throw std::runtime_error("cannot write logs in " + options.out_dir.string());
  if (!resumed) {
    loss_csv << "epoch,step,lr,loss,seconds\n";
    epoch_csv << "epoch,mean_loss,lr,seconds\n";
  }

  std::size_t budget = options.max_epochs.value_or(cfg.epochs);
  while (trainer.epochs_done() < cfg.epochs && budget-- > 0) {
    const EpochStats stats = trainer.train_epoch(&loss_csv);
    loss_csv.flush();
    epoch_csv << stats.epoch << ',' << std::setprecision(17) << stats.mean_loss << ',' << std::setprecision(10)
              << stats.lr << ',' << std::setprecision(6) << stats.seconds << '\n';
    epoch_csv.flush();
    save_checkpoint(ckpt_path, trainer.checkpoint());
    summary.epochs.push_back(stats);
    if (options.log) {
      *options.log << "epoch " << stats.epoch << '/' << cfg.epochs << "  loss " << std::setprecision(6)
                   << stats.mean_loss << "  lr " << stats.lr << "  " << std::setprecision(3) << stats.seconds << " s\n";
    }
  }
  if (trainer.epochs_done() == 0) save_checkpoint(ckpt_path, trainer.checkpoint());
  summary.seconds_per_step = trainer.seconds_per_step();
  if (options.log) {
    *options.log << "seconds per iteration: " << std::setprecision(4) << summary.seconds_per_step << '\n';
  }
  return summary;
}

SampleSummary run_sampling(const SampleRequest& request) {
  if (request.stride < 1) throw std::invalid_argument("sample: stride must be >= 1");
  if (request.batch_size < 1) throw std::invalid_argument("sample: batch size must be >= 1");
  LoadedModel loaded = load_model(request.checkpoint);
  const DatasetInfo info = read_manifest(request.data_dir);
  check_shapes(loaded.config, info, request.data_dir);
  const std::vector<Phantom> samples = load_split(request.data_dir, info, request.split, request.count);
  prepare_output_dir(request.out_dir, {"samples", "sampler_diagnostics.csv", "sampling.json"}, request.overwrite);
  fs::create_directories(request.out_dir / "samples");

  std::ofstream diag(request.out_dir / "sampler_diagnostics.csv");
  diag << "batch,step,mean,std\n";

  SampleOptions options;
  options.stride = request.stride;
  if (request.clip_denoised) options.clip = kSignalRange;

  Rng rng(request.seed);
  SampleSummary summary;
  std::size_t outside = 0, total = 0, reverse_steps = 0;
  double seconds = 0.0;
  const auto& entries = info.entries(request.split);
  for (std::size_t start = 0, b = 0; start < samples.size(); start += request.batch_size, ++b) {
    const std::size_t end = std::min(samples.size(), start + request.batch_size);
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < end; ++i) idx.push_back(i);
    const Tensor cond = stack_structures(samples, idx);
    std::vector<StepStats> stats;
    const auto t0 = Clock::now();
    const Tensor x = sample(loaded.model, cond, loaded.schedule, rng, options, &stats);
    seconds += seconds_since(t0);
    reverse_steps += stats.size();
    for (const auto& s : stats) {
      diag << b << ',' << s.step << ',' << std::setprecision(17) << s.mean << ',' << s.std << '\n';
    }
    for (std::size_t i = 0; i < idx.size(); ++i) {
      Tensor pred = signal_to_dose(slice_sample(x, i));
      const double frac = clamp_dose(pred);
      outside += static_cast<std::size_t>(std::llround(frac * static_cast<double>(pred.size())));
      total += pred.size();
      const std::size_t id = entries[idx[i]].index;
      write_arrays(request.out_dir / "samples" / sample_name(id), {{"pred", &pred}, {"reference", &samples[idx[i]].dose}});
      summary.sample_ids.push_back(id);
    }
    if (request.log) *request.log << "sampled " << end << '/' << samples.size() << '\n';
  }
  summary.fraction_outside = total ? static_cast<double>(outside) / static_cast<double>(total) : 0.0;
  summary.seconds_per_step = reverse_steps ? seconds / static_cast<double>(reverse_steps) : 0.0;

  json meta = {{"checkpoint", fs::absolute(request.checkpoint).string()},
               {"data_dir", fs::absolute(request.data_dir).string()},
               {"split", split_name(request.split)},
               {"seed", request.seed},
               {"stride", request.stride},
               {"batch_size", request.batch_size},
               {"sample_ids", summary.sample_ids},
               {"clip_denoised", request.clip_denoised},
               {"clamp_range", {0.0, kDoseClampMax}},
               {"fraction_outside", summary.fraction_outside},
               {"seconds_per_reverse_step", summary.seconds_per_step}};
  std::ofstream(request.out_dir / "sampling.json") << meta.dump(2) << '\n';
  if (request.log) {
    *request.log << "fraction of pixels outside [0, " << kDoseClampMax << "]: " << summary.fraction_outside << '\n'
                 << "seconds per reverse step: " << std::setprecision(4) << summary.seconds_per_step << '\n';
  }
  return summary;
}

namespace {

// Mean and sample standard deviation over finite values; NaN when none.
std::pair<double, double> mean_std(const std::vector<double>& values) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : values)
    if (std::isfinite(v)) sum += v, ++n;
  if (n == 0) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  const double mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (double v : values)
    if (std::isfinite(v)) sq += (v - mean) * (v - mean);
  return {mean, n > 1 ? std::sqrt(sq / static_cast<double>(n - 1)) : 0.0};
}

}  // namespace

EvalSummary run_eval(const EvalRequest& request) {
  const DatasetInfo info = read_manifest(request.data_dir);
  const auto& entries = info.entries(request.split);
  const std::size_t count = request.count ? request.count : entries.size();
  if (count > entries.size()) {
    throw std::invalid_argument("requested " + std::to_string(count) + " samples but the " +
                                split_name(request.split) + " split has " + std::to_string(entries.size()));
  }
  std::vector<std::size_t> missing;
  for (std::size_t i = 0; i < count; ++i) {
    if (!fs::exists(request.pred_dir / "samples" / sample_name(entries[i].index))) missing.push_back(entries[i].index);
  }
  if (!missing.empty()) {
    std::string ids;
    for (std::size_t id : missing) ids += (ids.empty() ? "" : " ") + std::to_string(id);
    throw std::runtime_error("missing predictions for sample ids: " + ids);
  }

  fs::create_directories(request.out_dir);
  std::ofstream metrics_csv(request.out_dir / "metrics.csv");
  std::ofstream curves_csv(request.out_dir / "dvh_curves.csv");
  if (!metrics_csv || !curves_csv) throw std::runtime_error("cannot write metrics in " + request.out_dir.string());
  metrics_csv << std::setprecision(10) << "sample_id,dose_score,dvh_score,hi\n";
  curves_csv << std::setprecision(10) << "sample_id,source,structure,threshold,fraction\n";

  EvalSummary summary;
  std::vector<double> ds, dvh, hi;
  std::map<std::string, std::vector<double>> per_structure;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t id = entries[i].index;
    const Phantom truth = load_sample(request.data_dir, info, request.split, i);
    const Tensor* pred = nullptr;
    auto arrays = read_arrays(request.pred_dir / "samples" / sample_name(id));
    for (const auto& [name, t] : arrays)
      if (name == "pred") pred = &t;
    if (!pred || pred->size() != truth.dose.size()) {
      throw std::runtime_error("prediction for sample " + std::to_string(id) + " has no 'pred' array of shape " +
                               shape_str(truth.dose.shape()));
    }
    const MetricReport r = evaluate_sample(pred->data(), truth.dose.data(), truth.structure);
    summary.rows.push_back({id, r});
    ds.push_back(r.dose_score);
    dvh.push_back(r.dvh_score);
    hi.push_back(r.hi);
    for (const auto& [name, v] : r.per_structure) per_structure[name].push_back(v);
    metrics_csv << id << ',' << r.dose_score << ',' << r.dvh_score << ',' << r.hi << '\n';

    double max_dose = 0.0;
    for (double v : pred->data()) max_dose = std::max(max_dose, v);
    for (double v : truth.dose.data()) max_dose = std::max(max_dose, v);
    for (const auto& s : standard_structures(truth.structure)) {
      const DvhCurve cp = dvh_curve(pred->data(), s.mask, max_dose);
      const DvhCurve cg = dvh_curve(truth.dose.data(), s.mask, max_dose);
      for (std::size_t k = 0; k < cp.thresholds.size(); ++k) {
        curves_csv << id << ",pred," << s.name << ',' << cp.thresholds[k] << ',' << cp.volume_fraction[k] << '\n';
      }
      for (std::size_t k = 0; k < cg.thresholds.size(); ++k) {
        curves_csv << id << ",reference," << s.name << ',' << cg.thresholds[k] << ',' << cg.volume_fraction[k] << '\n';
      }
    }
  }

  std::tie(summary.mean.dose_score, summary.std.dose_score) = mean_std(ds);
  std::tie(summary.mean.dvh_score, summary.std.dvh_score) = mean_std(dvh);
  std::tie(summary.mean.hi, summary.std.hi) = mean_std(hi);
  for (const auto& [name, values] : per_structure) {
    const auto [m, s] = mean_std(values);
    summary.mean.per_structure.emplace_back(name, m);
    summary.std.per_structure.emplace_back(name, s);
  }
  metrics_csv << "mean," << summary.mean.dose_score << ',' << summary.mean.dvh_score << ',' << summary.mean.hi << '\n';
  metrics_csv << "std," << summary.std.dose_score << ',' << summary.std.dvh_score << ',' << summary.std.hi << '\n';

  std::ofstream table(request.out_dir / "summary.csv");
  table << std::setprecision(10) << "metric,mean,std\n"
        << "dose_score," << summary.mean.dose_score << ',' << summary.std.dose_score << '\n'
        << "dvh_score," << summary.mean.dvh_score << ',' << summary.std.dvh_score << '\n'
        << "hi," << summary.mean.hi << ',' << summary.std.hi << '\n';
  for (std::size_t k = 0; k < summary.mean.per_structure.size(); ++k) {
    table << "dvh_" << summary.mean.per_structure[k].first << ',' << summary.mean.per_structure[k].second << ','
          << summary.std.per_structure[k].second << '\n';
  }

  if (request.log) {
    const std::size_t undefined_hi = static_cast<std::size_t>(
        std::count_if(hi.begin(), hi.end(), [](double v) { return !std::isfinite(v); }));
    auto& out = *request.log;
    out << std::fixed << std::setprecision(4);
    out << "samples evaluated: " << count << '\n';
    out << "Dose Score: " << summary.mean.dose_score << " ± " << summary.std.dose_score << '\n';
    out << "DVH Score:  " << summary.mean.dvh_score << " ± " << summary.std.dvh_score << '\n';
    out << "HI:         " << summary.mean.hi << " ± " << summary.std.hi;
    if (undefined_hi) out << "  (undefined for " << undefined_hi << " samples with zero PTV median)";
    out << '\n';
    out.unsetf(std::ios::floatfield);
  }
  return summary;
}

}  // namespace mddose
