#include "satqa/backbone.hpp"

#include <algorithm>
#include <cmath>

#include "satqa/errors.hpp"

namespace satqa {

using ag::Graph;
using ag::Var;

StageSplit resolve_stage_widths(const StageSplit& split, const BranchSet& branches, int heads, int D) {
  if (branches.count() == 0) throw ConfigError("at least one Multi-Stream Block branch must be enabled");
  const std::array<bool, 3> on{branches.deform, branches.depthwise, branches.attention};
  if (branches.count() == 3) {
    if (split[0] + split[1] + split[2] != D) {
      throw ConfigError("branch widths " + std::to_string(split[0]) + "+" + std::to_string(split[1]) + "+" +
                        std::to_string(split[2]) + " do not sum to D=" + std::to_string(D));
    }
    return split;
  }
  int total = 0;
  for (int i = 0; i < 3; ++i)
    if (on[static_cast<std::size_t>(i)]) total += split[static_cast<std::size_t>(i)];
  StageSplit w{0, 0, 0};
  for (int i = 0; i < 3; ++i)
    if (on[static_cast<std::size_t>(i)])
      w[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(static_cast<double>(split[static_cast<std::size_t>(i)]) * D / total));
  if (on[2]) {
    w[2] = std::max(heads, static_cast<int>(std::lround(static_cast<double>(w[2]) / heads)) * heads);
    if (!on[0] && !on[1]) w[2] = D;
  }
  // The remainder goes to the first enabled convolutional branch.
  const int rest = D - w[0] - w[1] - w[2];
  if (on[0])
    w[0] += rest;
  else if (on[1])
    w[1] += rest;
  for (int i = 0; i < 3; ++i)
    if (on[static_cast<std::size_t>(i)] && w[static_cast<std::size_t>(i)] <= 0)
      throw ConfigError("branch rescaling left an empty branch");
  return w;
}

ShapePlan ShapePlan::from_preset(const ModelPreset& p, bool msb) {
  p.validate();
  ShapePlan s;
  s.grid = p.grid();
  const int n = s.grid * s.grid;
  s.tapped = {n, p.tap_width()};
  s.reduced = {n, p.D};
  s.stage_grid = {s.grid, s.grid / 2, s.grid / 4};
  for (std::size_t i = 0; i < 3; ++i)
    s.stage_widths[i] = msb ? resolve_stage_widths(p.stage_splits[i], p.branches, p.heads, p.D) : StageSplit{0, 0, 0};
  s.R = {p.final_tokens(), p.D};
  s.P = {p.final_tokens(), p.D};
  int g = p.encoder_stem_stride == 2 ? p.input_size / 4 : p.input_size;
  for (std::size_t i = 0; i < 4; ++i) {
    if (i > 0) g = (g - 1) / 2 + 1;
    s.encoder_grids[i] = g;
  }
  return s;
}

// ---- transformer -----------------------------------------------------------

VisionTransformer::VisionTransformer(const ModelPreset& preset, nn::Initializer& init)
    : patch_(preset.patch_size), width_(preset.vit_width), grid_(preset.grid()), taps_(preset.tap_layers) {
  embed_ = &add_child("patch_embed", std::make_unique<nn::Conv2d>(3, width_, patch_, ag::Conv2dGeom{patch_, 0, 1}, init));
  pos_ = &add_param("pos_embed", init.normal({grid_ * grid_, width_}, 0.02), false);
  // Blocks after the deepest tap never influence the output.
  for (int b = 0; b < preset.max_tap(); ++b) {
    const std::string n = "block" + std::to_string(b + 1);
    Block blk;
    blk.ln1 = &add_child(n + ".ln1", std::make_unique<nn::LayerNorm>(width_));
    blk.attn = &add_child(n + ".attn", std::make_unique<nn::MultiHeadSelfAttention>(width_, preset.vit_heads, init));
    blk.ln2 = &add_child(n + ".ln2", std::make_unique<nn::LayerNorm>(width_));
    blk.mlp = &add_child(n + ".mlp", std::make_unique<nn::Mlp>(width_, width_ * preset.mlp_ratio, init));
    blocks_.push_back(blk);
  }
}

std::vector<Var> VisionTransformer::forward_taps(Graph& g, Var image, std::vector<Tensor>* attn) {
  if (image.dim(1) % patch_ != 0 || image.dim(2) % patch_ != 0) {
    throw ConfigError("input " + std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)) +
                      " is not a multiple of the patch size " + std::to_string(patch_));
  }
  if (image.dim(1) / patch_ != grid_ || image.dim(2) / patch_ != grid_) {
    throw ConfigError("input " + std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)) +
                      " does not match the configured token grid " + std::to_string(grid_));
  }
  Var x = ag::add(nn::map_to_tokens(embed_->forward(g, image)), g.param(*pos_));
  std::vector<Var> out;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    auto& blk = blocks_[b];
    x = ag::add(x, blk.attn->forward(g, blk.ln1->forward(g, x), attn));
    x = ag::add(x, blk.mlp->forward(g, blk.ln2->forward(g, x)));
    if (std::find(taps_.begin(), taps_.end(), static_cast<int>(b) + 1) != taps_.end()) out.push_back(x);
  }
  return out;
}

Var concat_taps(const std::vector<Var>& taps) { return ag::concat_cols(taps); }

// ---- Multi-Stream Block ----------------------------------------------------

Cbam::Cbam(int channels, int reduction, nn::Initializer& init) {
  const int hidden = std::max(1, channels / reduction);
  fc1_ = &add_child("channel.fc1", std::make_unique<nn::Linear>(channels, hidden, init));
  fc2_ = &add_child("channel.fc2", std::make_unique<nn::Linear>(hidden, channels, init));
  spatial_ = &add_child("spatial", std::make_unique<nn::Conv2d>(2, 1, 7, ag::Conv2dGeom{1, 3, 1}, init));
}

Var Cbam::forward(Graph& g, Var x, int h, int w) {
  const int n = x.dim(0);
  Var pooled = ag::concat_rows({ag::mean_axis(x, 0), ag::max_axis(x, 0)});
  Var mlp = fc2_->forward(g, ag::relu(fc1_->forward(g, pooled)));
  Var gate = ag::sigmoid(ag::add(ag::slice_rows(mlp, 0, 1), ag::slice_rows(mlp, 1, 1)));
  Var xc = ag::mul_bcast(x, gate);
  Var maps = ag::transpose(ag::concat_cols({ag::mean_axis(xc, 1), ag::max_axis(xc, 1)}));
  Var s = spatial_->forward(g, ag::reshape(maps, {2, h, w}));
  return ag::mul_bcast(xc, ag::sigmoid(ag::reshape(s, {n, 1})));
}

MultiStreamBlock::MultiStreamBlock(int D, const StageSplit& widths, int heads, int cbam_reduction,
                                   nn::Initializer& init)
    : D_(D), widths_(widths) {
  if (widths[0] + widths[1] + widths[2] != D) {
    throw ConfigError("Multi-Stream Block widths " + std::to_string(widths[0]) + "+" + std::to_string(widths[1]) + "+" +
                      std::to_string(widths[2]) + " do not sum to D=" + std::to_string(D));
  }
  if (widths[0] == 0 && widths[1] == 0 && widths[2] == 0) throw ConfigError("Multi-Stream Block has no branch");
  if (const int d1 = widths[0]; d1 > 0) {
    df_pre_ = &add_child("deform.pre", std::make_unique<nn::Conv2d>(d1, d1, 1, ag::Conv2dGeom{}, init));
    df_offset_ = &add_child("deform.offset", std::make_unique<nn::Conv2d>(d1, 18, 3, ag::Conv2dGeom{1, 1, 1}, init));
    df_offset_->weight().value->fill(0.0);
    df_weight_ = &add_param("deform.weight", init.uniform({d1, d1, 3, 3}, std::sqrt(3.0 / (9.0 * d1))));
    df_bias_ = &add_param("deform.bias", Tensor::zeros({d1}), false);
    df_fc_ = &add_child("deform.fc", std::make_unique<nn::Linear>(d1, d1, init));
  }
  if (const int d2 = widths[1]; d2 > 0) {
    dw_ = &add_child("depthwise.conv", std::make_unique<nn::Conv2d>(d2, d2, 3, ag::Conv2dGeom{1, 1, d2}, init));
  }
  if (const int d3 = widths[2]; d3 > 0) {
    ma_ = &add_child("attention.mhsa", std::make_unique<nn::MultiHeadSelfAttention>(d3, heads, init));
    ma_fc_ = &add_child("attention.fc", std::make_unique<nn::Linear>(d3, d3, init));
  }
  cbam_ = &add_child("cbam", std::make_unique<Cbam>(D, cbam_reduction, init));
}

Var MultiStreamBlock::forward(Graph& g, Var x, int h, int w, std::vector<Tensor>* attn) {
  if (x.dim(0) != h * w || x.dim(1) != D_) {
    throw ContractError("Multi-Stream Block expects " + shape_str({h * w, D_}) + " tokens, got " + shape_str(x.shape()));
  }
  const auto [d1, d2, d3] = widths_;
  Var map = nn::tokens_to_map(x, h, w);
  std::vector<Var> parts;
  if (d1 > 0) {
    Var pre = df_pre_->forward(g, ag::slice_rows(map, 0, d1));
    Var off = df_offset_->forward(g, pre);
    last_offsets_ = off.value();
    Var y = ag::deform_conv2d(pre, off, g.param(*df_weight_), g.param(*df_bias_), 1, 1);
    parts.push_back(df_fc_->forward(g, nn::map_to_tokens(y)));
  }
  if (d2 > 0) {
    Var y = ag::max_pool2d(dw_->forward(g, ag::slice_rows(map, d1, d2)), 2, 2, true);
    parts.push_back(nn::map_to_tokens(ag::resize_nearest(y, h, w)));
  }
  if (d3 > 0) parts.push_back(ma_fc_->forward(g, ma_->forward(g, ag::slice_cols(x, d1 + d2, d3), attn)));
  Var merged = parts.size() == 1 ? parts[0] : ag::concat_cols(parts);
  return ag::add(merged, cbam_->forward(g, x, h, w));
}

PatchSampling::PatchSampling(int D, nn::Initializer& init) {
  conv_ = &add_child("conv", std::make_unique<nn::Conv2d>(D, D, 2, ag::Conv2dGeom{2, 0, 1}, init));
}

Var PatchSampling::forward(Graph& g, Var x, int h, int w) {
  if (h % 2 != 0 || w % 2 != 0) {
    throw ConfigError("patch sampling needs an even grid, got " + std::to_string(h) + "x" + std::to_string(w));
  }
  return nn::map_to_tokens(conv_->forward(g, nn::tokens_to_map(x, h, w)));
}

// ---- backbone --------------------------------------------------------------

PerceptualBackbone::PerceptualBackbone(const ModelPreset& preset, bool msb, nn::Initializer& init)
    : preset_(preset), plan_(ShapePlan::from_preset(preset, msb)) {
  vit_ = &add_child("vit", std::make_unique<VisionTransformer>(preset, init));
  reduce_ = &add_child("reduce", std::make_unique<nn::Linear>(preset.tap_width(), preset.D, init));
  if (msb) {
    if (preset.branches.count() == 3) {
      for (std::size_t s = 0; s < 3; ++s)
        if (plan_.stage_widths[s] != preset.stage_splits[s])
          throw ContractError("stage " + std::to_string(s + 1) + " widths differ from the preset split");
    }
    for (int s = 0; s < 3; ++s) {
      msb_.push_back(&add_child("msb" + std::to_string(s + 1),
                                std::make_unique<MultiStreamBlock>(preset.D, plan_.stage_widths[static_cast<std::size_t>(s)],
                                                                   preset.heads, preset.cbam_reduction, init)));
    }
  }
  for (int s = 0; s < 2; ++s)
    sample_.push_back(&add_child("sample" + std::to_string(s + 1), std::make_unique<PatchSampling>(preset.D, init)));
}

Var PerceptualBackbone::forward(Graph& g, Var image, BackboneTrace* trace) {
  auto expect = [](const Var& v, const Shape& s, const char* what) {
    if (v.shape() != s)
      throw ContractError(std::string(what) + " has shape " + shape_str(v.shape()) + ", expected " + shape_str(s));
  };
  std::vector<Tensor>* attn = trace ? trace->attn : nullptr;
  Var tapped = concat_taps(vit_->forward_taps(g, image, attn));
  expect(tapped, plan_.tapped, "tapped features");
  Var x = reduce_->forward(g, tapped);
  expect(x, plan_.reduced, "reduced features");
  if (trace) {
    trace->tapped = tapped;
    trace->reduced = x;
  }
  int h = plan_.grid;
  for (int s = 0; s < 3; ++s) {
    if (!msb_.empty()) x = msb_[static_cast<std::size_t>(s)]->forward(g, x, h, h, attn);
    if (trace) trace->stages.push_back(x);
    if (s < 2) {
      x = sample_[static_cast<std::size_t>(s)]->forward(g, x, h, h);
      h /= 2;
    }
  }
  expect(x, plan_.R, "perceptual features R");
  return x;
}

}  // namespace satqa
