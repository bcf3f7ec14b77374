#include "mddose/mamba_net.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "mddose/ops.hpp"

namespace mddose {

void UNetConfig::validate(std::size_t height, std::size_t width) const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("UNetConfig: " + what); };
  if (patch_size == 0 || base_channels == 0 || depth == 0 || expansion == 0 || state_dim == 0 || conv_kernel == 0 ||
      in_channels == 0 || cond_channels == 0 || num_steps == 0) {
    fail("all sizes must be positive");
  }
  if (time_embed_dim < 2 || time_embed_dim % 2) fail("time_embed_dim must be even and >= 2");
  const std::size_t unit = patch_size << depth;
  if (height % unit || width % unit) {
    fail("image extent " + std::to_string(height) + "x" + std::to_string(width) + " is not divisible by patch_size * 2^depth = " +
         std::to_string(unit));
  }
  const std::size_t deepest = (height / (patch_size << (depth - 1))) * (width / (patch_size << (depth - 1)));
  if (conv_kernel > deepest) {
    fail("conv_kernel " + std::to_string(conv_kernel) + " exceeds the " + std::to_string(deepest) +
         " tokens of the deepest stage");
  }
}

Tensor time_embedding(std::size_t t, std::size_t num_steps, std::size_t dim) {
  if (t >= num_steps) {
    throw std::out_of_range("time_embedding: step " + std::to_string(t) + " outside [0, " + std::to_string(num_steps) + ")");
  }
  if (dim < 2 || dim % 2) throw std::invalid_argument("time_embedding: dimension must be even");
  const std::size_t half = dim / 2;
  Tensor e({dim});
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    e[i] = std::sin(static_cast<double>(t) * freq);
    e[half + i] = std::cos(static_cast<double>(t) * freq);
  }
  return e;
}

Tensor time_embedding(std::span<const std::size_t> steps, std::size_t num_steps, std::size_t dim) {
  Tensor out({steps.size(), dim});
  for (std::size_t b = 0; b < steps.size(); ++b) {
    const Tensor e = time_embedding(steps[b], num_steps, dim);
    std::copy(e.data().begin(), e.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * dim));
  }
  return out;
}

Var patchify(const Var& image, std::size_t patch) {
  const Shape& s = image.shape();
  if (s.size() != 4) throw std::invalid_argument("patch_embed: image must be (B, C, H, W), got " + shape_str(s));
  if (s[2] % patch || s[3] % patch) {
    throw std::invalid_argument("patch_embed: extent " + shape_str(s) + " not divisible by patch size " + std::to_string(patch));
  }
  const std::size_t nb = s[0], ch = s[1], gh = s[2] / patch, gw = s[3] / patch;
  Var v = ops::reshape(image, {nb, ch, gh, patch, gw, patch});
  v = ops::permute(v, {0, 2, 4, 1, 3, 5});
  return ops::reshape(v, {nb, gh * gw, ch * patch * patch});
}

Var unpatchify(const Var& tokens, std::size_t patch, std::size_t channels, std::size_t grid_h, std::size_t grid_w) {
  const Shape& s = tokens.shape();
  if (s.size() != 3 || s[1] != grid_h * grid_w || s[2] != channels * patch * patch) {
    throw std::invalid_argument("unpatchify: tokens " + shape_str(s) + " do not form a " + std::to_string(grid_h) + "x" +
                                std::to_string(grid_w) + " grid of " + std::to_string(channels) + "-channel patches");
  }
  const std::size_t nb = s[0];
  Var v = ops::reshape(tokens, {nb, grid_h, grid_w, channels, patch, patch});
  v = ops::permute(v, {0, 3, 1, 4, 2, 5});
  return ops::reshape(v, {nb, channels, grid_h * patch, grid_w * patch});
}

Var merge_tokens(const Var& tokens, std::size_t grid_h, std::size_t grid_w) {
  const Shape& s = tokens.shape();
  if (s.size() != 3 || s[1] != grid_h * grid_w || grid_h % 2 || grid_w % 2) {
    throw std::invalid_argument("merge_tokens: tokens " + shape_str(s) + " vs grid " + std::to_string(grid_h) + "x" +
                                std::to_string(grid_w));
  }
  const std::size_t nb = s[0], ch = s[2];
  Var v = ops::reshape(tokens, {nb, grid_h / 2, 2, grid_w / 2, 2, ch});
  v = ops::permute(v, {0, 1, 3, 2, 4, 5});
  return ops::reshape(v, {nb, (grid_h / 2) * (grid_w / 2), 4 * ch});
}

Var split_tokens(const Var& tokens, std::size_t grid_h, std::size_t grid_w) {
  const Shape& s = tokens.shape();
  if (s.size() != 3 || s[1] != grid_h * grid_w || s[2] % 4) {
    throw std::invalid_argument("split_tokens: tokens " + shape_str(s) + " vs grid " + std::to_string(grid_h) + "x" +
                                std::to_string(grid_w));
  }
  const std::size_t nb = s[0], ch = s[2] / 4;
  Var v = ops::reshape(tokens, {nb, grid_h, grid_w, 2, 2, ch});
  v = ops::permute(v, {0, 1, 3, 2, 4, 5});
  return ops::reshape(v, {nb, 4 * grid_h * grid_w, ch});
}

PatchEmbed::PatchEmbed(std::size_t in_channels, std::size_t patch_size, std::size_t channels, Rng& rng)
    : patch(patch_size), proj(in_channels * patch_size * patch_size, channels, true, rng) {}

Var PatchEmbed::operator()(Tape& tape, const Var& image) {
  const std::size_t expected = proj.in_features() / (patch * patch);
  if (image.shape().size() != 4 || image.shape()[1] != expected) {
    throw std::invalid_argument("patch_embed: expected " + std::to_string(expected) + " input channels, got image " +
                                shape_str(image.shape()));
  }
  return proj(tape, patchify(image, patch));
}

void PatchEmbed::collect(ParamList& out, const std::string& prefix) { proj.collect(out, prefix + ".proj"); }

MambaBlock::MambaBlock(std::size_t channels, const UNetConfig& cfg, bool conditioned, Rng& rng)
    : norm(channels),
      in_proj_a(channels, cfg.expansion * channels, true, rng),
      in_proj_b(channels, cfg.expansion * channels, true, rng),
      conv_weight(make_param({cfg.expansion * channels, cfg.conv_kernel}, 1.0 / std::sqrt(static_cast<double>(cfg.conv_kernel)), rng)),
      conv_bias(make_param({cfg.expansion * channels}, 0.0)),
      ssm(cfg.expansion * channels, cfg.state_dim, rng),
      out_proj(cfg.expansion * channels, channels, true, rng),
      time_conditioned(conditioned) {
  if (conditioned) {
    time_fc1 = Linear(cfg.time_embed_dim, channels, true, rng);
    time_fc2 = Linear(channels, channels, true, rng);
  }
}

Var MambaBlock::operator()(Tape& tape, const Var& x, const Var* time_emb) {
  if (x.shape().size() != 3 || x.shape()[2] != norm.gamma.size()) {
    throw std::invalid_argument("mamba_block: input " + shape_str(x.shape()) + " does not match " +
                                std::to_string(norm.gamma.size()) + " channels");
  }
  if (time_conditioned != (time_emb != nullptr)) {
    throw std::invalid_argument("mamba_block: time embedding must be given exactly for time-conditioned blocks");
  }
  const Var xn = norm(tape, x);
  Var a = in_proj_a(tape, xn);
  a = ops::causal_conv1d(a, tape.param(conv_weight), tape.param(conv_bias));
  a = ssm::selective_ssm(tape, ops::silu(a), ssm);
  const Var b = ops::silu(in_proj_b(tape, xn));
  Var h = out_proj(tape, ops::mul(a, b));
  if (time_conditioned) {
    const Var tv = time_fc2(tape, ops::silu(time_fc1(tape, *time_emb)));
    h = ops::add_per_sample(h, tv);
  }
  return ops::add(x, h);
}

void MambaBlock::collect(ParamList& out, const std::string& prefix) {
  norm.collect(out, prefix + ".norm");
  in_proj_a.collect(out, prefix + ".in_proj_a");
  in_proj_b.collect(out, prefix + ".in_proj_b");
  out.push_back({prefix + ".conv.weight", &conv_weight});
  out.push_back({prefix + ".conv.bias", &conv_bias});
  ssm.collect(out, prefix + ".ssm");
  out_proj.collect(out, prefix + ".out_proj");
  if (time_conditioned) {
    time_fc1.collect(out, prefix + ".time_fc1");
    time_fc2.collect(out, prefix + ".time_fc2");
  }
}

StructureEncoder::StructureEncoder(const UNetConfig& cfg, Rng& rng)
    : cfg_(cfg), embed_(cfg.cond_channels, cfg.patch_size, cfg.base_channels, rng) {
  for (std::size_t s = 0; s < cfg.depth; ++s) {
    if (s > 0) merges_.emplace_back(4 * cfg.stage_channels(s - 1), cfg.stage_channels(s), true, rng);
    blocks_.emplace_back(cfg.stage_channels(s), cfg, false, rng);
  }
}

StructureFeatures StructureEncoder::operator()(Tape& tape, const Var& cond) {
  const Shape& s = cond.shape();
  if (s.size() != 4 || s[1] != cfg_.cond_channels) {
    throw std::invalid_argument("structure_encoder: expected " + std::to_string(cfg_.cond_channels) +
                                " channels (image, PTV and OAR masks), got " + shape_str(s));
  }
  std::size_t gh = s[2] / cfg_.patch_size, gw = s[3] / cfg_.patch_size;
  StructureFeatures feats;
  Var h = embed_(tape, cond);
  for (std::size_t st = 0; st < cfg_.depth; ++st) {
    if (st > 0) {
      h = merges_[st - 1](tape, merge_tokens(h, gh, gw));
      gh /= 2;
      gw /= 2;
    }
    h = blocks_[st](tape, h, nullptr);
    feats.push_back(h);
  }
  return feats;
}

void StructureEncoder::collect(ParamList& out, const std::string& prefix) {
  embed_.collect(out, prefix + ".embed");
  for (std::size_t s = 0; s < blocks_.size(); ++s) {
    if (s > 0) merges_[s - 1].collect(out, prefix + ".merge" + std::to_string(s));
    blocks_[s].collect(out, prefix + ".stage" + std::to_string(s));
  }
}

MambaUNet::MambaUNet(const UNetConfig& cfg, Rng& rng)
    : cfg_(cfg),
      embed_(cfg.in_channels, cfg.patch_size, cfg.base_channels, rng),
      head_(cfg.base_channels, cfg.in_channels * cfg.patch_size * cfg.patch_size, true, rng) {
  for (std::size_t s = 0; s < cfg.depth; ++s) {
    if (s > 0) merges_.emplace_back(4 * cfg.stage_channels(s - 1), cfg.stage_channels(s), true, rng);
    encoder_.emplace_back(cfg.stage_channels(s), cfg, true, rng);
  }
  for (std::size_t s = 0; s + 1 < cfg.depth; ++s) {
    expands_.emplace_back(cfg.stage_channels(s + 1), 4 * cfg.stage_channels(s), true, rng);
    skip_fuse_.emplace_back(2 * cfg.stage_channels(s), cfg.stage_channels(s), true, rng);
    decoder_.emplace_back(cfg.stage_channels(s), cfg, true, rng);
  }
}

Var MambaUNet::operator()(Tape& tape, const Var& x_t, const Var& time_emb, const StructureFeatures& features) {
  const Shape& s = x_t.shape();
  if (s.size() != 4 || s[1] != cfg_.in_channels) {
    throw std::invalid_argument("mamba_unet: expected (B, " + std::to_string(cfg_.in_channels) + ", H, W), got " + shape_str(s));
  }
  if (!features.empty() && features.size() != cfg_.depth) {
    throw std::invalid_argument("mamba_unet: got " + std::to_string(features.size()) + " structure stages, expected " +
                                std::to_string(cfg_.depth));
  }
  std::vector<std::size_t> grid_h{s[2] / cfg_.patch_size}, grid_w{s[3] / cfg_.patch_size};
  std::vector<Var> skips;
  Var h = embed_(tape, x_t);
  for (std::size_t st = 0; st < cfg_.depth; ++st) {
    if (st > 0) {
      h = merges_[st - 1](tape, merge_tokens(h, grid_h.back(), grid_w.back()));
      grid_h.push_back(grid_h.back() / 2);
      grid_w.push_back(grid_w.back() / 2);
    }
    h = encoder_[st](tape, h, &time_emb);
    if (!features.empty()) {
      if (features[st].shape() != h.shape()) {
        throw std::invalid_argument("mamba_unet: structure stage " + std::to_string(st) + " has shape " +
                                    shape_str(features[st].shape()) + ", encoder stage output is " + shape_str(h.shape()));
      }
      h = ops::add(h, features[st]);
    }
    skips.push_back(h);
  }
  for (std::size_t st = cfg_.depth - 1; st-- > 0;) {
    Var up = split_tokens(expands_[st](tape, h), grid_h[st + 1], grid_w[st + 1]);
    h = skip_fuse_[st](tape, ops::concat_last(up, skips[st]));
    h = decoder_[st](tape, h, &time_emb);
  }
  h = head_(tape, h);
  return unpatchify(h, cfg_.patch_size, cfg_.in_channels, grid_h[0], grid_w[0]);
}

void MambaUNet::collect(ParamList& out, const std::string& prefix) {
  embed_.collect(out, prefix + ".embed");
  for (std::size_t s = 0; s < encoder_.size(); ++s) {
    if (s > 0) merges_[s - 1].collect(out, prefix + ".merge" + std::to_string(s));
    encoder_[s].collect(out, prefix + ".enc" + std::to_string(s));
  }
  for (std::size_t s = decoder_.size(); s-- > 0;) {
    expands_[s].collect(out, prefix + ".expand" + std::to_string(s));
    skip_fuse_[s].collect(out, prefix + ".skip_fuse" + std::to_string(s));
    decoder_[s].collect(out, prefix + ".dec" + std::to_string(s));
  }
  head_.collect(out, prefix + ".head");
}

DoseDenoiser::DoseDenoiser(const UNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  Rng rng(seed);
  unet_ = MambaUNet(cfg, rng);
  encoder_ = StructureEncoder(cfg, rng);
}

StructureFeatures DoseDenoiser::encode(Tape& tape, const Var& cond) { return encoder_(tape, cond); }

Var DoseDenoiser::predict(Tape& tape, const Var& x_t, std::span<const std::size_t> steps,
                          const StructureFeatures& features) {
  if (steps.size() != x_t.shape()[0]) {
    throw std::invalid_argument("DoseDenoiser: " + std::to_string(steps.size()) + " time steps for batch of " +
                                std::to_string(x_t.shape()[0]));
  }
  const Var temb = tape.constant(time_embedding(steps, cfg_.num_steps, cfg_.time_embed_dim));
  return unet_(tape, x_t, temb, features);
}

ParamList DoseDenoiser::parameters() {
  ParamList out;
  unet_.collect(out, "unet");
  encoder_.collect(out, "structure_encoder");
  return out;
}

std::size_t DoseDenoiser::parameter_count() { return count_parameters(parameters()); }

}  // namespace mddose
