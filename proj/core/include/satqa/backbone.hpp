#pragma once

#include <array>
#include <string>
#include <vector>

#include "satqa/config.hpp"
#include "satqa/nn.hpp"

namespace satqa {

// Every tensor shape the model produces for a preset, derived without
// building the model. The model constructor checks itself against it.
struct ShapePlan {
  int grid = 0;               // h = w after patch embedding
  Shape tapped;               // (h*w) x (taps * C)
  Shape reduced;              // (h*w) x D
  std::array<int, 3> stage_grid{};
  std::array<StageSplit, 3> stage_widths{};  // resolved per enabled branches
  Shape R;                    // (h4*w4) x D
  Shape P;                    // (h4*w4) x D
  std::array<int, 4> encoder_grids{};

  static ShapePlan from_preset(const ModelPreset& preset, bool msb = true);
};

// Channel widths of the enabled branches. All three enabled reproduces the
// configured split; otherwise the enabled widths are rescaled to sum to D
// (attention width kept a multiple of `heads`) and disabled ones are 0.
StageSplit resolve_stage_widths(const StageSplit& split, const BranchSet& branches, int heads, int D);

class VisionTransformer : public nn::Module {
 public:
  VisionTransformer(const ModelPreset& preset, nn::Initializer& init);
  // Token outputs of the configured tap layers, each (h*w) x C.
  std::vector<ag::Var> forward_taps(ag::Graph& g, ag::Var image, std::vector<Tensor>* attn = nullptr);
  int width() const { return width_; }

 private:
  struct Block {
    nn::LayerNorm* ln1;
    nn::MultiHeadSelfAttention* attn;
    nn::LayerNorm* ln2;
    nn::Mlp* mlp;
  };
  int patch_, width_, grid_;
  std::vector<int> taps_;
  nn::Conv2d* embed_;
  ag::Parameter* pos_;
  std::vector<Block> blocks_;
};

// Channel then spatial sigmoid gating.
class Cbam : public nn::Module {
 public:
  Cbam(int channels, int reduction, nn::Initializer& init);
  ag::Var forward(ag::Graph& g, ag::Var tokens, int h, int w);

 private:
  nn::Linear* fc1_;
  nn::Linear* fc2_;
  nn::Conv2d* spatial_;
};

class MultiStreamBlock : public nn::Module {
 public:
  MultiStreamBlock(int D, const StageSplit& widths, int heads, int cbam_reduction, nn::Initializer& init);
  // (h*w) x D -> (h*w) x D.
  ag::Var forward(ag::Graph& g, ag::Var tokens, int h, int w, std::vector<Tensor>* attn = nullptr);
  const StageSplit& widths() const { return widths_; }
  // Sampling offsets of the last deformable forward (2k^2 x h x w).
  const Tensor& last_offsets() const { return last_offsets_; }

 private:
  int D_;
  StageSplit widths_;
  // deform branch
  nn::Conv2d* df_pre_ = nullptr;
  nn::Conv2d* df_offset_ = nullptr;
  ag::Parameter* df_weight_ = nullptr;
  ag::Parameter* df_bias_ = nullptr;
  nn::Linear* df_fc_ = nullptr;
  // depthwise branch
  nn::Conv2d* dw_ = nullptr;
  // attention branch
  nn::MultiHeadSelfAttention* ma_ = nullptr;
  nn::Linear* ma_fc_ = nullptr;
  Cbam* cbam_;
  Tensor last_offsets_;
};

// 2x2 stride-2 convolution, channels preserved.
class PatchSampling : public nn::Module {
 public:
  PatchSampling(int D, nn::Initializer& init);
  ag::Var forward(ag::Graph& g, ag::Var tokens, int h, int w);

 private:
  nn::Conv2d* conv_;
};

struct BackboneTrace {
  ag::Var tapped;
  ag::Var reduced;
  std::vector<ag::Var> stages;
  std::vector<Tensor>* attn = nullptr;  // MHSA maps, when collected
};

// Transformer taps -> channel reduction -> [MSB -> patch sampling] x 2 ->
// MSB. With `msb` off the stages are patch sampling only.
class PerceptualBackbone : public nn::Module {
 public:
  PerceptualBackbone(const ModelPreset& preset, bool msb, nn::Initializer& init);
  ag::Var forward(ag::Graph& g, ag::Var image, BackboneTrace* trace = nullptr);
  VisionTransformer& vit() { return *vit_; }
  const ShapePlan& plan() const { return plan_; }
  bool has_msb() const { return !msb_.empty(); }
  MultiStreamBlock& msb(int stage) { return *msb_.at(static_cast<std::size_t>(stage)); }

 private:
  ModelPreset preset_;
  ShapePlan plan_;
  VisionTransformer* vit_;
  nn::Linear* reduce_;
  std::vector<MultiStreamBlock*> msb_;
  std::vector<PatchSampling*> sample_;
};

// Channel concatenation of the tap outputs: (h*w) x (taps * C).
ag::Var concat_taps(const std::vector<ag::Var>& taps);

}  // namespace satqa
