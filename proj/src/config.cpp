#include "mddose/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace mddose {

using nlohmann::json;

void RunConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
  if (decay_epoch() > epochs) throw std::invalid_argument("config: decay_start exceeds epochs");
  if (!(optim.lr > 0.0 && optim.lr_min > 0.0 && optim.lr_min <= optim.lr)) {
    throw std::invalid_argument("config: need 0 < lr_min <= lr");
  }
  if (schedule.steps != model.num_steps) throw std::invalid_argument("config: schedule.steps must equal model.num_steps");
  model.validate(image_size, image_size);
}

double learning_rate(const OptimizerConfig& optim, std::size_t epoch, std::size_t epochs, std::size_t decay_epoch) {
  if (epoch < decay_epoch || epochs <= decay_epoch) return optim.lr;
  const double span = static_cast<double>(epochs - decay_epoch);
  const double progress = std::min(1.0, static_cast<double>(epoch - decay_epoch + 1) / span);
  return optim.lr + (optim.lr_min - optim.lr) * progress;
}

double learning_rate(const RunConfig& cfg, std::size_t epoch) {
  return learning_rate(cfg.optim, epoch, cfg.epochs, cfg.decay_epoch());
}

namespace {

json model_json(const UNetConfig& m) {
  return {{"patch_size", m.patch_size},   {"base_channels", m.base_channels}, {"depth", m.depth},
          {"expansion", m.expansion},     {"state_dim", m.state_dim},         {"conv_kernel", m.conv_kernel},
          {"time_embed_dim", m.time_embed_dim}, {"in_channels", m.in_channels}, {"cond_channels", m.cond_channels},
          {"num_steps", m.num_steps}};
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

std::string to_json(const UNetConfig& cfg) { return model_json(cfg).dump(2); }

std::string to_json(const RunConfig& cfg) {
  json j;
  j["model"] = model_json(cfg.model);
  j["schedule"] = {{"steps", cfg.schedule.steps}, {"beta_min", cfg.schedule.beta_min}, {"beta_max", cfg.schedule.beta_max}};
  j["optimizer"] = {{"lr", cfg.optim.lr},       {"lr_min", cfg.optim.lr_min}, {"beta1", cfg.optim.beta1},
                    {"beta2", cfg.optim.beta2}, {"eps", cfg.optim.eps},       {"grad_clip", cfg.optim.grad_clip}};
  j["data_dir"] = cfg.data_dir;
  j["seed"] = cfg.seed;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["decay_start"] = cfg.decay_start;
  j["image_size"] = cfg.image_size;
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  RunConfig cfg;
  if (j.contains("model")) {
    const json& m = j["model"];
    read(m, "patch_size", cfg.model.patch_size);
    read(m, "base_channels", cfg.model.base_channels);
    read(m, "depth", cfg.model.depth);
    read(m, "expansion", cfg.model.expansion);
    read(m, "state_dim", cfg.model.state_dim);
    read(m, "conv_kernel", cfg.model.conv_kernel);
    read(m, "time_embed_dim", cfg.model.time_embed_dim);
    read(m, "in_channels", cfg.model.in_channels);
    read(m, "cond_channels", cfg.model.cond_channels);
    read(m, "num_steps", cfg.model.num_steps);
  }
  if (j.contains("schedule")) {
    const json& s = j["schedule"];
    read(s, "steps", cfg.schedule.steps);
    read(s, "beta_min", cfg.schedule.beta_min);
    read(s, "beta_max", cfg.schedule.beta_max);
  }
  if (j.contains("optimizer")) {
    const json& o = j["optimizer"];
    read(o, "lr", cfg.optim.lr);
    read(o, "lr_min", cfg.optim.lr_min);
    read(o, "beta1", cfg.optim.beta1);
    read(o, "beta2", cfg.optim.beta2);
    read(o, "eps", cfg.optim.eps);
    read(o, "grad_clip", cfg.optim.grad_clip);
  }
  read(j, "data_dir", cfg.data_dir);
  read(j, "seed", cfg.seed);
  read(j, "epochs", cfg.epochs);
  read(j, "batch_size", cfg.batch_size);
  read(j, "decay_start", cfg.decay_start);
  read(j, "image_size", cfg.image_size);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return run_config_from_json(ss.str());
}

}  // namespace mddose
