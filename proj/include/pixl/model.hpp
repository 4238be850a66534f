#pragma once

// Relighting network. Two encoders (a shallow ViT on the source image, a
// conv-block stack on the 9-channel conditioning) produce token grids of the
// same shape, which are fused per location and processed by a transformer
// trunk with register tokens and axial rotary embeddings. Four trunk depths
// feed a small DPT-style head that outputs a per-pixel gain and bias for the
// source image.

#include <array>
#include <bit>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "pixl/ad/checkpoint.hpp"
#include "pixl/ad/ops.hpp"
#include "pixl/ad/optim.hpp"
#include "pixl/intrinsics.hpp"

namespace pixl {

enum class HeadMode { modulation, direct_regression };
enum class TrunkMode { fused, intrinsics_only };

NLOHMANN_JSON_SERIALIZE_ENUM(HeadMode, {{HeadMode::modulation, "modulation"},
                                        {HeadMode::direct_regression, "direct_regression"}})
NLOHMANN_JSON_SERIALIZE_ENUM(TrunkMode, {{TrunkMode::fused, "fused"}, {TrunkMode::intrinsics_only, "intrinsics_only"}})

struct ModelConfig {
  int d = 128;
  int L = 4;
  int heads = 4;
  int p = 8;
  int n_registers = 4;
  std::array<int, 4> readout_indices{0, 1, 2, 3};
  double rope_base = 100.0;
  int source_encoder_depth = 2;
  int intrinsics_encoder_depth = 2;
  int intrinsics_width = 16;  // channels of the full-resolution conv stack
  int dpt_features = 64;
  int mlp_ratio = 4;
  HeadMode head_mode = HeadMode::modulation;
  TrunkMode trunk_mode = TrunkMode::fused;

  int head_dim() const { return d / heads; }

  void validate() const {
    require(d > 0 && L > 0 && heads > 0 && p > 0, "model: d, L, heads and p must be positive");
    require(d % heads == 0, "model: d=" + std::to_string(d) + " is not divisible by heads=" + std::to_string(heads));
    require(head_dim() % 4 == 0, "model: head dim " + std::to_string(head_dim()) + " must be divisible by 4");
    require(std::has_single_bit(unsigned(p)), "model: patch size must be a power of two");
    require(n_registers >= 0 && source_encoder_depth >= 0 && intrinsics_encoder_depth >= 0,
            "model: counts must be non-negative");
    require(intrinsics_width > 0 && dpt_features > 0 && mlp_ratio > 0, "model: widths must be positive");
    require(rope_base > 1.0, "model: rope_base must exceed 1");
    for (size_t i = 0; i < readout_indices.size(); ++i) {
      require(readout_indices[i] >= 0 && readout_indices[i] < L,
              "model: readout index " + std::to_string(readout_indices[i]) + " outside [0, L)");
      if (i > 0)
        require(readout_indices[i] >= readout_indices[i - 1], "model: readout indices must be non-decreasing");
    }
  }

  // Upsampling stage widths: dpt_features halved per stage, at least 8.
  std::vector<int> stage_widths() const {
    std::vector<int> w{dpt_features};
    for (int s = 0; s < std::countr_zero(unsigned(p)); ++s) w.push_back(std::max(8, w.back() / 2));
    return w;
  }

  nlohmann::json to_json() const {
    return {{"d", d},
            {"L", L},
            {"heads", heads},
            {"p", p},
            {"n_registers", n_registers},
            {"readout_indices", readout_indices},
            {"rope_base", rope_base},
            {"source_encoder_depth", source_encoder_depth},
            {"intrinsics_encoder_depth", intrinsics_encoder_depth},
            {"intrinsics_width", intrinsics_width},
            {"dpt_features", dpt_features},
            {"mlp_ratio", mlp_ratio},
            {"head_mode", head_mode},
            {"trunk_mode", trunk_mode}};
  }

  // Missing keys keep their defaults; unknown keys are rejected.
  static ModelConfig from_json(const nlohmann::json& j) {
    require(j.is_object(), "model config must be an object");
    ModelConfig c;
    for (const auto& [key, v] : j.items()) {
      if (key == "d") c.d = v.get<int>();
      else if (key == "L") c.L = v.get<int>();
      else if (key == "heads") c.heads = v.get<int>();
      else if (key == "p") c.p = v.get<int>();
      else if (key == "n_registers") c.n_registers = v.get<int>();
      else if (key == "readout_indices") c.readout_indices = v.get<std::array<int, 4>>();
      else if (key == "rope_base") c.rope_base = v.get<double>();
      else if (key == "source_encoder_depth") c.source_encoder_depth = v.get<int>();
      else if (key == "intrinsics_encoder_depth") c.intrinsics_encoder_depth = v.get<int>();
      else if (key == "intrinsics_width") c.intrinsics_width = v.get<int>();
      else if (key == "dpt_features") c.dpt_features = v.get<int>();
      else if (key == "mlp_ratio") c.mlp_ratio = v.get<int>();
      else if (key == "head_mode") c.head_mode = parse_enum<HeadMode>(v, "head_mode");
      else if (key == "trunk_mode") c.trunk_mode = parse_enum<TrunkMode>(v, "trunk_mode");
      else throw Error("model config: unknown key \"" + key + "\"");
    }
    c.validate();
    return c;
  }

  std::string canonical() const { return to_json().dump(); }
  uint64_t hash() const { return ad::fnv1a64(canonical()); }

 private:
  template <typename E>
  static E parse_enum(const nlohmann::json& v, const char* key) {
    const E e = v.get<E>();
    require(nlohmann::json(e) == v, std::string("model config: invalid ") + key + " " + v.dump());
    return e;
  }
};

/// Grid-position offset added to every patch token's (row, col) for RoPE.
struct GridOffset {
  double row = 0, col = 0;
};

class PixlModel {
 public:
  explicit PixlModel(const ModelConfig& cfg, uint64_t seed = 0) : cfg_(cfg), rng_(seed) {
    cfg_.validate();
    build();
  }

  const ModelConfig& config() const { return cfg_; }
  ad::ParamSet& params() { return params_; }
  const ad::ParamSet& params() const { return params_; }

  /// I_S [B,3,H,W] -> tokens [B, (H/p)(W/p), d]
  ad::Tensor encode_source(const ad::Tensor& img) const {
    check_image(img, 3, "source image");
    require(cfg_.trunk_mode == TrunkMode::fused, "encode_source: the intrinsics-only model has no source encoder");
    auto x = ad::conv2d(img, src_patch_w_, src_patch_b_, {.stride = cfg_.p});
    auto tokens = to_tokens(x);
    const auto [rows, cols] = grid_positions(img.dim(2) / cfg_.p, img.dim(3) / cfg_.p, {});
    for (const auto& blk : src_blocks_) tokens = block_forward(blk, tokens, 0, rows, cols);
    return tokens;
  }

  /// C_T [B,9,H,W] -> tokens [B, (H/p)(W/p), d]
  ad::Tensor encode_intrinsics(const ad::Tensor& cond) const {
    check_image(cond, ConditioningStack::kChannels, "conditioning stack");
    auto x = ad::conv2d(cond, cond_stem_w_, cond_stem_b_);
    for (const auto& blk : cond_blocks_) {
      auto y = ad::conv2d(x, blk.dw_w, blk.dw_b,
                          {.pad = 3, .pad_mode = ad::PadMode::replicate, .groups = cfg_.intrinsics_width});
      y = ad::permute(y, {0, 2, 3, 1});
      y = ad::layer_norm(y, blk.ln_g, blk.ln_b);
      y = ad::linear(ad::gelu(ad::linear(y, blk.pw1_w, blk.pw1_b)), blk.pw2_w, blk.pw2_b);
      x = ad::add(x, ad::permute(y, {0, 3, 1, 2}));
    }
    return to_tokens(ad::conv2d(x, cond_proj_w_, cond_proj_b_, {.stride = cfg_.p}));
  }

  /// Per-location fusion: [src; cond] along channels, MLP back to d. In
  /// intrinsics-only mode `src` is ignored and may be undefined.
  ad::Tensor fuse_tokens(const ad::Tensor& src, const ad::Tensor& cond) const {
    ad::Tensor x = cond;
    if (cfg_.trunk_mode == TrunkMode::fused) {
      require(src.defined() && src.shape() == cond.shape(),
              "fuse_tokens: grid mismatch " + ad::shape_str(src.defined() ? src.shape() : ad::Shape{}) + " vs " +
                  ad::shape_str(cond.shape()));
      x = ad::concat({src, cond}, 2);
    }
    return ad::linear(ad::gelu(ad::linear(x, fuse1_w_, fuse1_b_)), fuse2_w_, fuse2_b_);
  }

  /// Runs the trunk on [B, N, d] tokens laid out on a gh×gw grid. Returns the
  /// outputs of the four readout blocks with registers removed.
  std::array<ad::Tensor, 4> trunk_forward(const ad::Tensor& tokens, int gh, int gw, GridOffset off = {}) const {
    require(tokens.ndim() == 3 && tokens.dim(1) == gh * gw && tokens.dim(2) == cfg_.d,
            "trunk_forward: expected [B, " + std::to_string(gh * gw) + ", " + std::to_string(cfg_.d) + "], got " +
                ad::shape_str(tokens.shape()));
    const int bs = tokens.dim(0), r = cfg_.n_registers;
    auto x = tokens;
    if (r > 0) x = ad::concat({ad::broadcast_to(registers_, {bs, r, cfg_.d}), tokens}, 1);
    const auto [rows, cols] = grid_positions(gh, gw, off);
    std::array<ad::Tensor, 4> out;
    for (int i = 0; i < cfg_.L; ++i) {
      x = block_forward(trunk_blocks_[size_t(i)], x, r, rows, cols);
      for (size_t k = 0; k < 4; ++k)
        if (cfg_.readout_indices[k] == i) out[k] = r > 0 ? ad::slice(x, 1, r, r + gh * gw) : x;
    }
    return out;
  }

  /// Pre-softmax attention logits of trunk block `block` for input tokens
  /// (registers are prepended as in trunk_forward). Returns [B, heads, N, N].
  ad::Tensor attention_logits(const ad::Tensor& tokens, int gh, int gw, GridOffset off, int block = 0) const {
    const int bs = tokens.dim(0), r = cfg_.n_registers;
    auto x = tokens;
    if (r > 0) x = ad::concat({ad::broadcast_to(registers_, {bs, r, cfg_.d}), tokens}, 1);
    const auto [rows, cols] = grid_positions(gh, gw, off);
    const auto& blk = trunk_blocks_[size_t(block)];
    auto [q, k, v] = qkv(blk, ad::layer_norm(x, blk.ln1_g, blk.ln1_b), r, rows, cols);
    const int n = x.dim(1), dh = cfg_.head_dim();
    auto qf = ad::reshape(q, {bs * cfg_.heads, n, dh});
    auto kt = ad::transpose(ad::reshape(k, {bs * cfg_.heads, n, dh}), 1, 2);
    return ad::reshape(ad::scale(ad::matmul(qf, kt), 1.f / std::sqrt(float(dh))), {bs, cfg_.heads, n, n});
  }

  /// Four [B, N, d] streams on a gh×gw grid -> dense features [B, C, gh·p, gw·p].
  ad::Tensor dpt_readout(const std::array<ad::Tensor, 4>& streams, int gh, int gw) const {
    std::array<ad::Tensor, 4> maps;
    for (size_t k = 0; k < 4; ++k) {
      require(streams[k].defined() && streams[k].ndim() == 3 && streams[k].dim(1) == gh * gw,
              "dpt_readout: stream " + std::to_string(k) + " does not match the " + std::to_string(gh) + "x" +
                  std::to_string(gw) + " grid");
      maps[k] = ad::conv2d(to_map(streams[k], gh, gw), dpt_proj_w_[k], dpt_proj_b_[k]);
    }
    auto f = rcu(dpt_rcu_in_[3], maps[3]);
    for (int k = 2; k >= 0; --k) f = rcu(dpt_rcu_out_[size_t(k)], ad::add(f, rcu(dpt_rcu_in_[size_t(k)], maps[size_t(k)])));
    int h = gh, w = gw;
    for (const auto& st : dpt_up_) {
      h *= 2;
      w *= 2;
      f = ad::gelu(ad::conv2d(ad::upsample_bilinear(f, h, w), st.w, st.b, {.pad = 1, .pad_mode = ad::PadMode::replicate}));
    }
    return f;
  }

  /// Raw head output: 6 channels (gain, bias) or 3 in direct-regression mode.
  ad::Tensor head(const ad::Tensor& features) const { return ad::conv2d(features, out_w_, out_b_); }

  /// Î_T = clip((1+g)⊙I_S + b, 0, 1), or sigmoid(head) in direct-regression mode.
  static ad::Tensor apply_head(const ad::Tensor& raw, const ad::Tensor& src, HeadMode mode) {
    if (mode == HeadMode::direct_regression) return ad::sigmoid(raw);
    auto g = ad::slice(raw, 1, 0, 3);
    auto b = ad::slice(raw, 1, 3, 6);
    return ad::clip(ad::add(ad::add(src, ad::mul(g, src)), b), 0.f, 1.f);
  }

  /// I_S [B,3,H,W] in [0,1] (sRGB), C_T [B,9,H,W] -> Î_T [B,3,H,W].
  ad::Tensor forward(const ad::Tensor& src, const ad::Tensor& cond) const {
    check_image(src, 3, "source image");
    check_image(cond, ConditioningStack::kChannels, "conditioning stack");
    require(src.dim(0) == cond.dim(0) && src.dim(2) == cond.dim(2) && src.dim(3) == cond.dim(3),
            "forward: source " + ad::shape_str(src.shape()) + " and conditioning " + ad::shape_str(cond.shape()) +
                " differ in batch or spatial size");
    const int gh = src.dim(2) / cfg_.p, gw = src.dim(3) / cfg_.p;
    auto c = encode_intrinsics(cond);
    ad::Tensor s;
    if (cfg_.trunk_mode == TrunkMode::fused) s = encode_source(src);
    auto streams = trunk_forward(fuse_tokens(s, c), gh, gw);
    return apply_head(head(dpt_readout(streams, gh, gw)), src, cfg_.head_mode);
  }

  /// Single-image convenience wrapper without gradient recording.
  FloatBuffer relight(const FloatBuffer& src_srgb, const ConditioningStack& cond) const {
    ad::NoGrad ng;
    const int h = src_srgb.height(), w = src_srgb.width();
    auto s = ad::Tensor::from({1, 3, h, w}, src_srgb.vec());
    auto c = ad::Tensor::from({1, 9, h, w}, cond.data().vec());
    return FloatBuffer(3, h, w, forward(s, c).values_f32());
  }

  ad::Checkpoint checkpoint(int64_t step, ad::AdamW* opt) const {
    ad::Checkpoint ck;
    ck.config = cfg_.canonical();
    ck.config_hash = cfg_.hash();
    ck.step = step;
    ad::append_state(ck, params_, opt);
    return ck;
  }

  void load(const ad::Checkpoint& ck, ad::AdamW* opt) {
    require(ck.config_hash == cfg_.hash(), "checkpoint was written for a different model configuration");
    ad::restore_state(ck, params_, opt);
  }

  static PixlModel from_checkpoint(const ad::Checkpoint& ck) {
    const auto j = nlohmann::json::parse(ck.config, nullptr, false);
    require(!j.is_discarded(), "checkpoint carries an unreadable model configuration");
    const auto cfg = ModelConfig::from_json(j);
    require(cfg.hash() == ck.config_hash, "checkpoint configuration hash mismatch");
    PixlModel m(cfg);
    m.load(ck, nullptr);
    return m;
  }

 private:
  struct Block {
    ad::Tensor ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b, ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };
  struct ConvBlock {
    ad::Tensor dw_w, dw_b, ln_g, ln_b, pw1_w, pw1_b, pw2_w, pw2_b;
  };
  struct ResidualConvUnit {
    ad::Tensor w1, b1, w2, b2;
  };
  struct UpStage {
    ad::Tensor w, b;
  };

  ad::Tensor param(const std::string& name, ad::Shape shape, double stddev, bool decay = true) {
    std::normal_distribution<float> nd(0.f, float(stddev));
    std::vector<float> v(ad::numel(shape));
    if (stddev > 0)
      for (float& x : v) x = nd(rng_);
    return params_.add(name, ad::Tensor::from(std::move(shape), std::move(v)), decay);
  }
  ad::Tensor constant(const std::string& name, ad::Shape shape, float value) {
    return params_.add(name, ad::Tensor::full(std::move(shape), value), false);
  }
  // Linear weight [in, out] with 1/sqrt(fan_in) init and zero bias.
  std::pair<ad::Tensor, ad::Tensor> linear_params(const std::string& name, int in, int out) {
    auto w = param(name + ".w", {in, out}, 1.0 / std::sqrt(double(in)));
    return {w, constant(name + ".b", {out}, 0.f)};
  }
  std::pair<ad::Tensor, ad::Tensor> conv_params(const std::string& name, int out, int in, int k) {
    auto w = param(name + ".w", {out, in, k, k}, 1.0 / std::sqrt(double(in * k * k)));
    return {w, constant(name + ".b", {out}, 0.f)};
  }

  Block make_block(const std::string& name) {
    const int d = cfg_.d, hidden = d * cfg_.mlp_ratio;
    Block b;
    b.ln1_g = constant(name + ".ln1.g", {d}, 1.f);
    b.ln1_b = constant(name + ".ln1.b", {d}, 0.f);
    std::tie(b.qkv_w, b.qkv_b) = linear_params(name + ".qkv", d, 3 * d);
    std::tie(b.proj_w, b.proj_b) = linear_params(name + ".proj", d, d);
    b.ln2_g = constant(name + ".ln2.g", {d}, 1.f);
    b.ln2_b = constant(name + ".ln2.b", {d}, 0.f);
    std::tie(b.fc1_w, b.fc1_b) = linear_params(name + ".fc1", d, hidden);
    std::tie(b.fc2_w, b.fc2_b) = linear_params(name + ".fc2", hidden, d);
    return b;
  }

  ResidualConvUnit make_rcu(const std::string& name) {
    const int f = cfg_.dpt_features;
    ResidualConvUnit u;
    std::tie(u.w1, u.b1) = conv_params(name + ".conv1", f, f, 3);
    std::tie(u.w2, u.b2) = conv_params(name + ".conv2", f, f, 3);
    return u;
  }

  void build() {
    const int d = cfg_.d, p = cfg_.p, cw = cfg_.intrinsics_width;
    if (cfg_.trunk_mode == TrunkMode::fused) {
      std::tie(src_patch_w_, src_patch_b_) = conv_params("source.patch", d, 3, p);
      for (int i = 0; i < cfg_.source_encoder_depth; ++i)
        src_blocks_.push_back(make_block("source.block" + std::to_string(i)));
    }

    std::tie(cond_stem_w_, cond_stem_b_) = conv_params("intrinsics.stem", cw, ConditioningStack::kChannels, 1);
    for (int i = 0; i < cfg_.intrinsics_encoder_depth; ++i) {
      const std::string n = "intrinsics.block" + std::to_string(i);
      ConvBlock b;
      b.dw_w = param(n + ".dw.w", {cw, 1, 7, 7}, 1.0 / 7.0);
      b.dw_b = constant(n + ".dw.b", {cw}, 0.f);
      b.ln_g = constant(n + ".ln.g", {cw}, 1.f);
      b.ln_b = constant(n + ".ln.b", {cw}, 0.f);
      std::tie(b.pw1_w, b.pw1_b) = linear_params(n + ".pw1", cw, cw * cfg_.mlp_ratio);
      std::tie(b.pw2_w, b.pw2_b) = linear_params(n + ".pw2", cw * cfg_.mlp_ratio, cw);
      cond_blocks_.push_back(b);
    }
    std::tie(cond_proj_w_, cond_proj_b_) = conv_params("intrinsics.proj", d, cw, p);

    const int fuse_in = cfg_.trunk_mode == TrunkMode::fused ? 2 * d : d;
    std::tie(fuse1_w_, fuse1_b_) = linear_params("fuse.fc1", fuse_in, d);
    std::tie(fuse2_w_, fuse2_b_) = linear_params("fuse.fc2", d, d);

    if (cfg_.n_registers > 0) registers_ = param("trunk.registers", {1, cfg_.n_registers, d}, 0.02, false);
    for (int i = 0; i < cfg_.L; ++i) trunk_blocks_.push_back(make_block("trunk.block" + std::to_string(i)));

    const int f = cfg_.dpt_features;
    for (size_t k = 0; k < 4; ++k) {
      std::tie(dpt_proj_w_[k], dpt_proj_b_[k]) = conv_params("dpt.proj" + std::to_string(k), f, d, 1);
      dpt_rcu_in_[k] = make_rcu("dpt.rcu_in" + std::to_string(k));
      if (k < 3) dpt_rcu_out_[k] = make_rcu("dpt.rcu_out" + std::to_string(k));
    }
    const auto widths = cfg_.stage_widths();
    for (size_t s = 0; s + 1 < widths.size(); ++s) {
      UpStage st;
      std::tie(st.w, st.b) = conv_params("dpt.up" + std::to_string(s), widths[s + 1], widths[s], 3);
      dpt_up_.push_back(st);
    }
    const int out_ch = cfg_.head_mode == HeadMode::modulation ? 6 : 3;
    // Zero-initialized output layer: gain and bias start at exactly 0.
    out_w_ = params_.add("head.out.w", ad::Tensor::zeros({out_ch, widths.back(), 1, 1}), true);
    out_b_ = params_.add("head.out.b", ad::Tensor::zeros({out_ch}), false);
  }

  void check_image(const ad::Tensor& t, int channels, const char* what) const {
    require(t.ndim() == 4 && t.dim(1) == channels,
            std::string(what) + ": expected [B, " + std::to_string(channels) + ", H, W], got " + ad::shape_str(t.shape()));
    require(t.dim(2) % cfg_.p == 0 && t.dim(3) % cfg_.p == 0,
            std::string(what) + ": " + std::to_string(t.dim(2)) + "x" + std::to_string(t.dim(3)) +
                " is not divisible by patch size " + std::to_string(cfg_.p));
  }

  // [B, C, gh, gw] -> [B, gh·gw, C]
  static ad::Tensor to_tokens(const ad::Tensor& map) {
    auto x = ad::reshape(map, {map.dim(0), map.dim(1), map.dim(2) * map.dim(3)});
    return ad::transpose(x, 1, 2);
  }
  // [B, gh·gw, C] -> [B, C, gh, gw]
  static ad::Tensor to_map(const ad::Tensor& tokens, int gh, int gw) {
    return ad::reshape(ad::transpose(tokens, 1, 2), {tokens.dim(0), tokens.dim(2), gh, gw});
  }

  static std::pair<std::vector<double>, std::vector<double>> grid_positions(int gh, int gw, GridOffset off) {
    std::vector<double> rows, cols;
    for (int y = 0; y < gh; ++y)
      for (int x = 0; x < gw; ++x) {
        rows.push_back(y + off.row);
        cols.push_back(x + off.col);
      }
    return {rows, cols};
  }

  std::array<ad::Tensor, 3> qkv(const Block& blk, const ad::Tensor& xn, int prefix, const std::vector<double>& rows,
                                const std::vector<double>& cols) const {
    const int bs = xn.dim(0), n = xn.dim(1), h = cfg_.heads, dh = cfg_.head_dim();
    auto t = ad::reshape(ad::linear(xn, blk.qkv_w, blk.qkv_b), {bs, n, 3, h, dh});
    t = ad::permute(t, {2, 0, 3, 1, 4});  // [3, B, heads, N, dh]
    auto part = [&](int i) { return ad::reshape(ad::slice(t, 0, i, i + 1), {bs, h, n, dh}); };
    return {ad::rope2d(part(0), prefix, rows, cols, cfg_.rope_base),
            ad::rope2d(part(1), prefix, rows, cols, cfg_.rope_base), part(2)};
  }

  ad::Tensor block_forward(const Block& blk, const ad::Tensor& x, int prefix, const std::vector<double>& rows,
                           const std::vector<double>& cols) const {
    const int bs = x.dim(0), n = x.dim(1);
    auto [q, k, v] = qkv(blk, ad::layer_norm(x, blk.ln1_g, blk.ln1_b), prefix, rows, cols);
    auto a = ad::scaled_dot_product_attention(q, k, v);
    a = ad::reshape(ad::permute(a, {0, 2, 1, 3}), {bs, n, cfg_.d});
    auto y = ad::add(x, ad::linear(a, blk.proj_w, blk.proj_b));
    auto m = ad::gelu(ad::linear(ad::layer_norm(y, blk.ln2_g, blk.ln2_b), blk.fc1_w, blk.fc1_b));
    return ad::add(y, ad::linear(m, blk.fc2_w, blk.fc2_b));
  }

  static ad::Tensor rcu(const ResidualConvUnit& u, const ad::Tensor& x) {
    const ad::Conv2dOptions o{.pad = 1, .pad_mode = ad::PadMode::replicate};
    auto y = ad::conv2d(ad::gelu(x), u.w1, u.b1, o);
    y = ad::conv2d(ad::gelu(y), u.w2, u.b2, o);
    return ad::add(x, y);
  }

  ModelConfig cfg_;
  std::mt19937_64 rng_;
  ad::ParamSet params_;

  ad::Tensor src_patch_w_, src_patch_b_;
  std::vector<Block> src_blocks_;
  ad::Tensor cond_stem_w_, cond_stem_b_, cond_proj_w_, cond_proj_b_;
  std::vector<ConvBlock> cond_blocks_;
  ad::Tensor fuse1_w_, fuse1_b_, fuse2_w_, fuse2_b_;
  ad::Tensor registers_;
  std::vector<Block> trunk_blocks_;
  std::array<ad::Tensor, 4> dpt_proj_w_, dpt_proj_b_;
  std::array<ResidualConvUnit, 4> dpt_rcu_in_;
  std::array<ResidualConvUnit, 3> dpt_rcu_out_;
  std::vector<UpStage> dpt_up_;
  ad::Tensor out_w_, out_b_;
};

}  // namespace pixl
