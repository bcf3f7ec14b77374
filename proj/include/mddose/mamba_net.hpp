#pragma once

// Mamba-based denoiser: Mamba blocks, the Mamba-UNet noise predictor and the
// structure encoder whose per-stage outputs are added to the UNet encoder.
//
// Images are [B, C, H, W]; token sequences are [B, L, C] with L = h * w over
// a row-major patch grid.

#include <cstdint>
#include <span>
#include <vector>

#include "mddose/layers.hpp"
#include "mddose/noise_model.hpp"
#include "mddose/ssm.hpp"

namespace mddose {

struct UNetConfig {
  std::size_t patch_size = 4;
  std::size_t base_channels = 16;
  /// Number of encoder stages; stage s has base_channels * 2^s channels on a
  /// token grid downsampled by 2^s.
  std::size_t depth = 4;
  std::size_t expansion = 2;
  std::size_t state_dim = 8;
  std::size_t conv_kernel = 4;
  std::size_t time_embed_dim = 32;
  std::size_t in_channels = 1;
  std::size_t cond_channels = 5;
  std::size_t num_steps = 1000;

  std::size_t stage_channels(std::size_t stage) const { return base_channels << stage; }
  /// Throws std::invalid_argument when the configuration or the image extent
  /// is unusable (extent must be divisible by patch_size * 2^depth).
  void validate(std::size_t height, std::size_t width) const;
};

/// Sinusoidal embedding of a step t in [0, num_steps): the first half holds
/// sin(t f_i), the second half cos(t f_i), f_i = 10000^(-i / (dim/2)).
Tensor time_embedding(std::size_t t, std::size_t num_steps, std::size_t dim);
/// Stacked embeddings [B, dim].
Tensor time_embedding(std::span<const std::size_t> steps, std::size_t num_steps, std::size_t dim);

/// [B, C, H, W] -> [B, (H/p)(W/p), C p p], patches in row-major order, each
/// patch flattened as (channel, row, column).
Var patchify(const Var& image, std::size_t patch);
/// Inverse of patchify for a grid of h x w patches with `channels` channels.
Var unpatchify(const Var& tokens, std::size_t patch, std::size_t channels, std::size_t grid_h, std::size_t grid_w);
/// Concatenates each 2x2 token neighborhood: [B, h w, C] -> [B, (h/2)(w/2), 4C].
Var merge_tokens(const Var& tokens, std::size_t grid_h, std::size_t grid_w);
/// Inverse of merge_tokens: [B, h w, 4C] -> [B, (2h)(2w), C].
Var split_tokens(const Var& tokens, std::size_t grid_h, std::size_t grid_w);

/// Linear patch embedding (patchify followed by a projection to C channels).
struct PatchEmbed {
  std::size_t patch = 1;
  Linear proj;

  PatchEmbed() = default;
  PatchEmbed(std::size_t in_channels, std::size_t patch, std::size_t channels, Rng& rng);
  Var operator()(Tape& tape, const Var& image);
  void collect(ParamList& out, const std::string& prefix);
};

/// norm -> {expand, causal conv, SiLU, selective SSM} * {expand, SiLU} ->
/// project back, plus the time embedding MLP output, plus the residual.
struct MambaBlock {
  LayerNorm norm;
  Linear in_proj_a;
  Linear in_proj_b;
  Tensor conv_weight;  // [E C, K]
  Tensor conv_bias;    // [E C]
  ssm::SsmParams ssm;
  Linear out_proj;
  bool time_conditioned = false;
  Linear time_fc1;  // time_embed_dim -> C
  Linear time_fc2;  // C -> C

  MambaBlock() = default;
  MambaBlock(std::size_t channels, const UNetConfig& cfg, bool time_conditioned, Rng& rng);

  /// x is [B, L, C]; time_emb is [B, time_embed_dim] and is required exactly
  /// when the block is time conditioned.
  Var operator()(Tape& tape, const Var& x, const Var* time_emb);
  void collect(ParamList& out, const std::string& prefix);
};

/// Mirrors the UNet encoder on the (2 + O)-channel structure image and
/// returns one feature map per stage.
class StructureEncoder {
 public:
  StructureEncoder() = default;
  StructureEncoder(const UNetConfig& cfg, Rng& rng);

  StructureFeatures operator()(Tape& tape, const Var& cond);
  void collect(ParamList& out, const std::string& prefix);

 private:
  UNetConfig cfg_;
  PatchEmbed embed_;
  std::vector<MambaBlock> blocks_;
  std::vector<Linear> merges_;
};

class MambaUNet {
 public:
  MambaUNet() = default;
  MambaUNet(const UNetConfig& cfg, Rng& rng);

  /// x_t [B, in, H, W], time_emb [B, time_embed_dim]. Each entry of
  /// `features` is added to the matching encoder stage output; an empty list
  /// runs the unconditional network.
  Var operator()(Tape& tape, const Var& x_t, const Var& time_emb, const StructureFeatures& features);
  void collect(ParamList& out, const std::string& prefix);

 private:
  UNetConfig cfg_;
  PatchEmbed embed_;
  std::vector<MambaBlock> encoder_;
  std::vector<Linear> merges_;
  std::vector<Linear> expands_;
  std::vector<Linear> skip_fuse_;
  std::vector<MambaBlock> decoder_;
  Linear head_;
};

/// Full noise predictor: structure encoder + Mamba-UNet.
class DoseDenoiser : public NoiseModel {
 public:
  DoseDenoiser(const UNetConfig& cfg, std::uint64_t seed);

  StructureFeatures encode(Tape& tape, const Var& cond) override;
  Var predict(Tape& tape, const Var& x_t, std::span<const std::size_t> steps,
              const StructureFeatures& features) override;

  const UNetConfig& config() const { return cfg_; }
  ParamList parameters();
  std::size_t parameter_count();

 private:
  UNetConfig cfg_;
  MambaUNet unet_;
  StructureEncoder encoder_;
};

}  // namespace mddose
