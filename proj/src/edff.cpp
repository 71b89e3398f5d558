#include "efs/edff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace efs {

void ModelConfig::validate() const {
  if (num_bins < 2) throw std::invalid_argument("ModelConfig: num_bins must be >= 2");
  if (base_channels < 1) throw std::invalid_argument("ModelConfig: base_channels must be >= 1");
  if (num_levels < 2) throw std::invalid_argument("ModelConfig: num_levels must be >= 2");
  if (attention_dim < 1) throw std::invalid_argument("ModelConfig: attention_dim must be >= 1");
  if (rdb_layers < 1) throw std::invalid_argument("ModelConfig: rdb_layers must be >= 1");
  if (rdb_growth < 1) throw std::invalid_argument("ModelConfig: rdb_growth must be >= 1");
  if (attention_downsample < 1) {
    throw std::invalid_argument("ModelConfig: attention_downsample must be >= 1");
  }
  if (!(depth_scale_m > 0.0)) throw std::invalid_argument("ModelConfig: depth_scale_m must be positive");
  if (use_fdcm && attention_dim != base_channels) {
    throw std::invalid_argument(
        "ModelConfig: attention_dim must equal base_channels when use_fdcm is set");
  }
}

void LossConfig::validate() const {
  if (alpha < 0.0 || beta < 0.0) {
    throw std::invalid_argument("LossConfig: alpha and beta must be nonnegative");
  }
}

void TrainConfig::validate() const {
  if (iterations < 0) throw std::invalid_argument("TrainConfig: iterations must be nonnegative");
  if (learning_rate < 0.0) throw std::invalid_argument("TrainConfig: learning_rate must be nonnegative");
  if (trace_every < 1) throw std::invalid_argument("TrainConfig: trace_every must be >= 1");
}

// ---------------------------------------------------------------------------

template <typename Real>
TensorT<Real> EDFFModelT<Real>::make_param(const std::string& name, std::vector<int> shape,
                                           double stddev) {
  TensorT<Real> t;
  if (stddev > 0.0) {
    t = randn<Real>(std::move(shape), rng_, stddev, true);
  } else {
    t = TensorT<Real>::zeros(std::move(shape), true);
  }
  params_.push_back(t);
  param_names_.push_back(name);
  return t;
}

template <typename Real>
ConvParams<Real> EDFFModelT<Real>::make_conv(const std::string& name, int out_ch, int in_ch, int k,
                                             bool zero_init) {
  ConvParams<Real> conv;
  const double fan_in = static_cast<double>(in_ch) * k * k;
  const double stddev = zero_init ? 0.0 : std::sqrt(2.0 / fan_in);
  conv.weight = make_param(name + ".weight", {out_ch, in_ch, k, k}, stddev);
  conv.bias = make_param(name + ".bias", {out_ch}, 0.0);
  return conv;
}

template <typename Real>
EDFFModelT<Real>::EDFFModelT(const ModelConfig& cfg, int height, int width)
    : cfg_(cfg), height_(height), width_(width), rng_(cfg.seed) {
  cfg_.validate();
  const int down_factor = 1 << (cfg_.num_levels - 1);
  if (height <= 0 || width <= 0 || height % down_factor != 0 || width % down_factor != 0) {
    throw std::invalid_argument("EDFFModel: " + std::to_string(height) + "x" +
                                std::to_string(width) + " is not divisible by 2^(num_levels-1) = " +
                                std::to_string(down_factor));
  }
  const int c = cfg_.base_channels;
  const int in_ch = cfg_.num_bins * 2;

  shallow_v1_ = make_conv("shallow_v.conv1", c, in_ch, 3);
  shallow_v2_ = make_conv("shallow_v.conv2", c, c, 3);
  shallow_d1_ = make_conv("shallow_d.conv1", c, in_ch, 3);
  shallow_d2_ = make_conv("shallow_d.conv2", c, c, 3);

  if (cfg_.use_fdcm) {
    fdcm_.ln_v_gamma = make_param("fdcm.ln_v.gamma", {c}, 0.0);
    for (auto& v : fdcm_.ln_v_gamma.values()) v = Real(1);
    fdcm_.ln_v_beta = make_param("fdcm.ln_v.beta", {c}, 0.0);
    fdcm_.ln_d_gamma = make_param("fdcm.ln_d.gamma", {c}, 0.0);
    for (auto& v : fdcm_.ln_d_gamma.values()) v = Real(1);
    fdcm_.ln_d_beta = make_param("fdcm.ln_d.beta", {c}, 0.0);
    fdcm_.proj_q = make_conv("fdcm.proj_q", c, c, 1);
    fdcm_.proj_k = make_conv("fdcm.proj_k", c, c, 1);
    fdcm_.proj_v = make_conv("fdcm.proj_v", c, c, 1);
    fdcm_.mlp_expand = make_conv("fdcm.mlp.expand", 2 * c, c, 1);
    fdcm_.mlp_project = make_conv("fdcm.mlp.project", c, 2 * c, 1);
    const int a = cfg_.attention_downsample;
    if (a > 1) {
      // Constant depthwise average-pooling kernel expressed as a conv.
      std::vector<Real> w(static_cast<size_t>(c) * c * a * a, Real(0));
      for (int o = 0; o < c; ++o) {
        for (int ky = 0; ky < a; ++ky) {
          for (int kx = 0; kx < a; ++kx) {
            w[((static_cast<size_t>(o) * c + o) * a + ky) * a + kx] = Real(1.0 / (a * a));
          }
        }
      }
      fdcm_.pool_kernel = TensorT<Real>::from_data({c, c, a, a}, std::move(w));
    }
  } else if (cfg_.ablation_parity) {
    fdcm_replace1_ = make_conv("fdcm_replace.conv1", c, 2 * c, 1);
    fdcm_replace2_ = make_conv("fdcm_replace.conv2", c, c, 3);
  }

  // UNet encoder, decoder and per-level depth heads.
  enc1_.resize(cfg_.num_levels);
  enc2_.resize(cfg_.num_levels);
  down_.resize(cfg_.num_levels - 1);
  up_.resize(cfg_.num_levels - 1);
  dec1_.resize(cfg_.num_levels - 1);
  dec2_.resize(cfg_.num_levels - 1);
  heads_.resize(cfg_.num_levels);
  for (int l = 0; l < cfg_.num_levels; ++l) {
    const int ch = c << l;
    const std::string tag = "unet.enc" + std::to_string(l);
    if (l > 0) down_[l - 1] = make_conv("unet.down" + std::to_string(l), ch, ch / 2, 3);
    enc1_[l] = make_conv(tag + ".conv1", ch, l == 0 ? c : ch, 3);
    enc2_[l] = make_conv(tag + ".conv2", ch, ch, 3);
  }
  heads_[cfg_.num_levels - 1] =
      make_conv("unet.head" + std::to_string(cfg_.num_levels - 1), 1,
                c << (cfg_.num_levels - 1), 3);
  for (int l = cfg_.num_levels - 2; l >= 0; --l) {
    const int ch = c << l;
    up_[l] = make_conv("unet.up" + std::to_string(l), ch, ch * 2, 3);
    dec1_[l] = make_conv("unet.dec" + std::to_string(l) + ".conv1", ch, ch * 2, 3);
    dec2_[l] = make_conv("unet.dec" + std::to_string(l) + ".conv2", ch, ch, 3);
    heads_[l] = make_conv("unet.head" + std::to_string(l), 1, ch, 3);
  }

  if (cfg_.use_mdfb) {
    const int fuse_ch = 2 * cfg_.rdb_growth;
    mdfb_.resize(cfg_.num_levels - 1);
    for (int s = 0; s < cfg_.num_levels - 1; ++s) {
      const std::string tag = "mdfb.stage" + std::to_string(s);
      MdfbStage& stage = mdfb_[s];
      stage.fuse_in = make_conv(tag + ".fuse_in", fuse_ch, 5, 3);
      stage.rdb_convs.resize(cfg_.rdb_layers);
      for (int lyr = 0; lyr < cfg_.rdb_layers; ++lyr) {
        stage.rdb_convs[lyr] = make_conv(tag + ".rdb.conv" + std::to_string(lyr), cfg_.rdb_growth,
                                         fuse_ch + lyr * cfg_.rdb_growth, 3);
      }
      stage.rdb_local = make_conv(tag + ".rdb.local", fuse_ch,
                                  fuse_ch + cfg_.rdb_layers * cfg_.rdb_growth, 1);
      stage.to_shuffle = make_conv(tag + ".to_shuffle", 4, fuse_ch, 3);
      stage.out_conv = make_conv(tag + ".out", 1, 1, 3, /*zero_init=*/true);
    }
  } else if (cfg_.ablation_parity) {
    mdfb_replace1_ = make_conv("mdfb_replace.conv1", cfg_.rdb_growth, 1, 3);
    mdfb_replace2_ = make_conv("mdfb_replace.conv2", 1, cfg_.rdb_growth, 3, /*zero_init=*/true);
  }
}

template <typename Real>
void EDFFModelT<Real>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename Real>
TensorT<Real> EDFFModelT<Real>::encoding_to_input(const NdArray& encoding, double scale) const {
  const std::vector<int> expected = {cfg_.num_bins, 2, height_, width_};
  if (encoding.shape != expected) {
    throw std::invalid_argument("EDFFModel: encoding shape " + shape_to_string(encoding.shape) +
                                " does not match expected " + shape_to_string(expected));
  }
  std::vector<Real> values(encoding.data.size());
  const double inv = 1.0 / scale;
  for (size_t i = 0; i < values.size(); ++i) values[i] = static_cast<Real>(encoding.data[i] * inv);
  return TensorT<Real>::from_data({cfg_.num_bins * 2, height_, width_}, std::move(values));
}

template <typename Real>
TensorT<Real> EDFFModelT<Real>::conv_block(const TensorT<Real>& x, const ConvParams<Real>& c1,
                                           const ConvParams<Real>& c2) {
  auto h = relu(conv2d(x, c1.weight, c1.bias, 1, 1));
  return relu(conv2d(h, c2.weight, c2.bias, 1, 1));
}

template <typename Real>
std::pair<TensorT<Real>, TensorT<Real>> EDFFModelT<Real>::shallow_extract(
    const TensorT<Real>& voxel_input, const TensorT<Real>& surface_input) {
  if (voxel_input.shape() != surface_input.shape()) {
    throw std::invalid_argument("shallow_extract: input shape mismatch " +
                                shape_to_string(voxel_input.shape()) + " vs " +
                                shape_to_string(surface_input.shape()));
  }
  auto f_v = conv_block(voxel_input, shallow_v1_, shallow_v2_);
  auto f_d = conv_block(surface_input, shallow_d1_, shallow_d2_);
  return {f_v, f_d};
}

template <typename Real>
TensorT<Real> EDFFModelT<Real>::fdcm_attention(const TensorT<Real>& f_v, const TensorT<Real>& f_d) {
  if (!cfg_.use_fdcm) throw std::logic_error("fdcm_attention: model built without FDCM");
  if (f_v.shape() != f_d.shape() || f_v.shape().size() != 3 ||
      f_v.shape()[0] != cfg_.attention_dim) {
    throw std::invalid_argument("fdcm_attention: features must be [attention_dim, H, W], got " +
                                shape_to_string(f_v.shape()) + " and " +
                                shape_to_string(f_d.shape()));
  }
  const int h = f_v.shape()[1];
  const int w = f_v.shape()[2];
  const int a = cfg_.attention_downsample;
  if (h % a != 0 || w % a != 0) {
    throw std::invalid_argument("fdcm_attention: spatial dims not divisible by downsample " +
                                std::to_string(a));
  }

  auto norm_v = layer_norm_chw(f_v, fdcm_.ln_v_gamma, fdcm_.ln_v_beta);
  auto norm_d = layer_norm_chw(f_d, fdcm_.ln_d_gamma, fdcm_.ln_d_beta);
  auto q = conv2d(norm_v, fdcm_.proj_q.weight, fdcm_.proj_q.bias, 1, 0);
  auto k = conv2d(norm_d, fdcm_.proj_k.weight, fdcm_.proj_k.bias, 1, 0);
  auto v = conv2d(norm_d, fdcm_.proj_v.weight, fdcm_.proj_v.bias, 1, 0);
  if (a > 1) {
    q = conv2d(q, fdcm_.pool_kernel, a, 0);
    k = conv2d(k, fdcm_.pool_kernel, a, 0);
    v = conv2d(v, fdcm_.pool_kernel, a, 0);
  }
  const int c = cfg_.attention_dim;
  const int hw = (h / a) * (w / a);
  auto qm = reshape(q, {c, hw});
  auto km = reshape(k, {c, hw});
  auto vm = reshape(v, {c, hw});

  // scores[i][j] = <query of token i, key of token j> / sqrt(d); softmax
  // normalizes each column, so the output token j mixes V tokens with
  // column-j weights.
  auto scores = mul_scalar(matmul(qm, km, /*trans_a=*/true, /*trans_b=*/false),
                           static_cast<Real>(1.0 / std::sqrt(static_cast<double>(c))));
  auto weights = softmax(scores, 0);
  auto attended = reshape(matmul(vm, weights), {c, h / a, w / a});
  TensorT<Real> attention_term = a > 1 ? upsample_nearest(attended, a) : attended;

  auto residual = add(attention_term, f_v);
  auto hidden = relu(conv2d(residual, fdcm_.mlp_expand.weight, fdcm_.mlp_expand.bias, 1, 0));
  auto mlp_out = conv2d(hidden, fdcm_.mlp_project.weight, fdcm_.mlp_project.bias, 1, 0);
  return add(residual, mlp_out);
}

template <typename Real>
std::vector<TensorT<Real>> EDFFModelT<Real>::unet_forward(const TensorT<Real>& fused) {
  const int down_factor = 1 << (cfg_.num_levels - 1);
  if (fused.shape().size() != 3 || fused.shape()[1] % down_factor != 0 ||
      fused.shape()[2] % down_factor != 0) {
    throw std::invalid_argument("unet_forward: spatial dims of " + shape_to_string(fused.shape()) +
                                " not divisible by " + std::to_string(down_factor));
  }
  std::vector<TensorT<Real>> skips;
  auto x = conv_block(fused, enc1_[0], enc2_[0]);
  skips.push_back(x);
  for (int l = 1; l < cfg_.num_levels; ++l) {
    x = relu(conv2d(x, down_[l - 1].weight, down_[l - 1].bias, 2, 1));
    x = conv_block(x, enc1_[l], enc2_[l]);
    skips.push_back(x);
  }

  std::vector<TensorT<Real>> depths;  // coarse to fine
  const int coarsest = cfg_.num_levels - 1;
  depths.push_back(conv2d(x, heads_[coarsest].weight, heads_[coarsest].bias, 1, 1));
  auto cur = x;
  for (int l = cfg_.num_levels - 2; l >= 0; --l) {
    cur = upsample_nearest(cur, 2);
    cur = relu(conv2d(cur, up_[l].weight, up_[l].bias, 1, 1));
    cur = concat<Real>({cur, skips[l]}, 0);
    cur = conv_block(cur, dec1_[l], dec2_[l]);
    depths.push_back(conv2d(cur, heads_[l].weight, heads_[l].bias, 1, 1));
  }
  return depths;
}

template <typename Real>
TensorT<Real> EDFFModelT<Real>::rdb(const TensorT<Real>& x, int stage_idx) {
  const MdfbStage& stage = mdfb_[stage_idx];
  std::vector<TensorT<Real>> feats = {x};
  for (const auto& conv : stage.rdb_convs) {
    auto in = feats.size() == 1 ? feats[0] : concat(feats, 0);
    feats.push_back(relu(conv2d(in, conv.weight, conv.bias, 1, 1)));
  }
  auto local = conv2d(concat(feats, 0), stage.rdb_local.weight, stage.rdb_local.bias, 1, 0);
  return add(x, local);
}

template <typename Real>
TensorT<Real> EDFFModelT<Real>::mdfb_fuse(const std::vector<TensorT<Real>>& initial_depths) {
  if (!cfg_.use_mdfb) throw std::logic_error("mdfb_fuse: model built without MDFB");
  if (initial_depths.empty()) throw std::invalid_argument("mdfb_fuse: empty depth list");
  if (initial_depths.size() == 1) return initial_depths[0];
  if (initial_depths.size() > mdfb_.size() + 1) {
    throw std::invalid_argument("mdfb_fuse: more levels than fusion stages");
  }
  auto cur = initial_depths[0];
  for (size_t i = 1; i < initial_depths.size(); ++i) {
    const auto& finer = initial_depths[i];
    if (finer.shape()[0] != 1 || cur.shape()[0] != 1 ||
        finer.shape()[1] != 2 * cur.shape()[1] || finer.shape()[2] != 2 * cur.shape()[2]) {
      throw std::invalid_argument("mdfb_fuse: levels must be 1-channel with dyadic scales, got " +
                                  shape_to_string(cur.shape()) + " -> " +
                                  shape_to_string(finer.shape()));
    }
    const MdfbStage& stage = mdfb_[i - 1];
    auto pooled = pixel_unshuffle(finer, 2);
    auto cat = concat<Real>({pooled, cur}, 0);
    auto fused = relu(conv2d(cat, stage.fuse_in.weight, stage.fuse_in.bias, 1, 1));
    fused = rdb(fused, static_cast<int>(i - 1));
    fused = conv2d(fused, stage.to_shuffle.weight, stage.to_shuffle.bias, 1, 1);
    auto delta = pixel_shuffle(fused, 2);
    delta = conv2d(delta, stage.out_conv.weight, stage.out_conv.bias, 1, 1);
    cur = add(finer, delta);
  }
  return cur;
}

template <typename Real>
TensorT<Real> EDFFModelT<Real>::forward(const TensorT<Real>& voxel_input,
                                        const TensorT<Real>& surface_input) {
  auto [f_v, f_d] = shallow_extract(voxel_input, surface_input);
  TensorT<Real> fused;
  if (cfg_.use_fdcm) {
    fused = fdcm_attention(f_v, f_d);
  } else if (cfg_.ablation_parity) {
    auto cat = concat<Real>({f_v, f_d}, 0);
    auto h = relu(conv2d(cat, fdcm_replace1_.weight, fdcm_replace1_.bias, 1, 0));
    fused = relu(conv2d(h, fdcm_replace2_.weight, fdcm_replace2_.bias, 1, 1));
  } else {
    fused = f_v;
  }
  auto depths = unet_forward(fused);
  TensorT<Real> final_depth;
  if (cfg_.use_mdfb) {
    final_depth = mdfb_fuse(depths);
  } else if (cfg_.ablation_parity) {
    auto finest = depths.back();
    auto h = relu(conv2d(finest, mdfb_replace1_.weight, mdfb_replace1_.bias, 1, 1));
    final_depth = add(finest, conv2d(h, mdfb_replace2_.weight, mdfb_replace2_.bias, 1, 1));
  } else {
    final_depth = depths.back();
  }
  return mul_scalar(final_depth, static_cast<Real>(cfg_.depth_scale_m));
}

template <typename Real>
TensorT<Real> EDFFModelT<Real>::forward_encodings(const NdArray& voxel, const NdArray& surface) {
  auto voxel_input = encoding_to_input(voxel, 1.0);
  auto surface_input = encoding_to_input(surface, cfg_.depth_scale_m);
  return forward(voxel_input, surface_input);
}

template class EDFFModelT<float>;
template class EDFFModelT<double>;

// ---------------------------------------------------------------------------
// Loss

template <typename Real>
TensorT<Real> edff_loss(const TensorT<Real>& pred, const TensorT<Real>& gt, const NdArray& mask,
                        const LossConfig& cfg) {
  cfg.validate();
  if (pred.shape() != gt.shape() || pred.shape().size() != 3 || pred.shape()[0] != 1) {
    throw std::invalid_argument("edff_loss: pred/gt must both be [1,H,W], got " +
                                shape_to_string(pred.shape()) + " and " +
                                shape_to_string(gt.shape()));
  }
  const int h = pred.shape()[1];
  const int w = pred.shape()[2];
  if (mask.shape != std::vector<int>{h, w}) {
    throw std::invalid_argument("edff_loss: mask shape " + shape_to_string(mask.shape) +
                                " does not match depth " + shape_to_string(pred.shape()));
  }

  std::vector<Real> m(mask.data.size());
  for (size_t i = 0; i < m.size(); ++i) m[i] = static_cast<Real>(mask.data[i]);
  auto mask_t = TensorT<Real>::from_data({1, h, w}, std::move(m));

  auto term_l2 = l2_distance(mul(pred, mask_t), mul(gt, mask_t));

  // Forward-difference gradients; a gradient pixel survives only when both
  // stencil pixels carry events.
  std::vector<Real> gmx(static_cast<size_t>(h) * (w - 1));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x + 1 < w; ++x) {
      gmx[static_cast<size_t>(y) * (w - 1) + x] =
          static_cast<Real>(mask.at2(y, x) * mask.at2(y, x + 1));
    }
  }
  std::vector<Real> gmy(static_cast<size_t>(h - 1) * w);
  for (int y = 0; y + 1 < h; ++y) {
    for (int x = 0; x < w; ++x) {
      gmy[static_cast<size_t>(y) * w + x] = static_cast<Real>(mask.at2(y, x) * mask.at2(y + 1, x));
    }
  }
  auto gmask_x = TensorT<Real>::from_data({1, h, w - 1}, std::move(gmx));
  auto gmask_y = TensorT<Real>::from_data({1, h - 1, w}, std::move(gmy));

  auto grad_x = [&](const TensorT<Real>& d) {
    return sub(slice(d, 2, 1, w - 1), slice(d, 2, 0, w - 1));
  };
  auto grad_y = [&](const TensorT<Real>& d) {
    return sub(slice(d, 1, 1, h - 1), slice(d, 1, 0, h - 1));
  };
  auto term_gx = l1_distance(mul(grad_x(pred), gmask_x), mul(grad_x(gt), gmask_x));
  auto term_gy = l1_distance(mul(grad_y(pred), gmask_y), mul(grad_y(gt), gmask_y));

  return add(mul_scalar(term_l2, static_cast<Real>(cfg.alpha)),
             mul_scalar(add(term_gx, term_gy), static_cast<Real>(cfg.beta)));
}

template TensorT<float> edff_loss<float>(const TensorT<float>&, const TensorT<float>&,
                                         const NdArray&, const LossConfig&);
template TensorT<double> edff_loss<double>(const TensorT<double>&, const TensorT<double>&,
                                           const NdArray&, const LossConfig&);

// ---------------------------------------------------------------------------
// Training, prediction, checkpoints

namespace {

double masked_rmse_nd(const NdArray& pred, const NdArray& gt, const NdArray& mask) {
  double se = 0.0;
  int64_t n = 0;
  for (size_t i = 0; i < mask.data.size(); ++i) {
    if (mask.data[i] > 0.5 && gt.data[i] > 0.0) {
      const double d = pred.data[i] - gt.data[i];
      se += d * d;
      ++n;
    }
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : std::sqrt(se / n);
}

Tensor gt_tensor(const TrainingSample& s, int h, int w) {
  std::vector<float> values(s.gt.data.size());
  for (size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(s.gt.data[i]);
  return Tensor::from_data({1, h, w}, std::move(values));
}

}  // namespace

std::vector<TraceRow> train_edff(EDFFModel& model, const std::vector<TrainingSample>& train_set,
                                 const TrainingSample* holdout, const TrainConfig& tcfg,
                                 const LossConfig& lcfg) {
  tcfg.validate();
  lcfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train_edff: empty training set");
  const int h = model.height();
  const int w = model.width();
  const TrainingSample& probe = holdout ? *holdout : train_set.front();

  AdamState<float> adam;
  adam.learning_rate = tcfg.learning_rate;
  adam.initialize(model.parameters());

  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(tcfg.seed);

  auto probe_rmse = [&]() {
    auto pred = to_ndarray(model.forward_encodings(probe.voxel, probe.surface));
    pred.shape = {h, w};
    return masked_rmse_nd(pred, probe.gt, probe.mask);
  };

  std::vector<TraceRow> trace;
  double last_finite = std::numeric_limits<double>::quiet_NaN();
  for (int iter = 0; iter < tcfg.iterations; ++iter) {
    if (iter % train_set.size() == 0) std::shuffle(order.begin(), order.end(), rng);
    const TrainingSample& sample = train_set[order[iter % train_set.size()]];

    model.zero_grad();
    auto pred = model.forward_encodings(sample.voxel, sample.surface);
    auto loss = edff_loss(pred, gt_tensor(sample, h, w), sample.mask, lcfg);
    const double loss_value = loss.scalar();
    if (!std::isfinite(loss_value)) {
      throw DivergenceError("train_edff: non-finite loss at iteration " + std::to_string(iter) +
                                " (last finite loss " + std::to_string(last_finite) + ")",
                            last_finite, iter);
    }
    last_finite = loss_value;
    loss.backward();
    adam.update(model.parameters());

    if (iter % tcfg.trace_every == 0 || iter + 1 == tcfg.iterations) {
      trace.push_back(TraceRow{iter + 1, loss_value, probe_rmse()});
    }
  }
  if (tcfg.iterations == 0) {
    trace.push_back(TraceRow{0, std::numeric_limits<double>::quiet_NaN(), probe_rmse()});
  }
  return trace;
}

SparseDepth edff_predict(const EventStream& stream, EDFFModel& model) {
  if (stream.width != model.width() || stream.height != model.height()) {
    throw std::invalid_argument("edff_predict: stream " + std::to_string(stream.width) + "x" +
                                std::to_string(stream.height) + " does not match the trained " +
                                std::to_string(model.width()) + "x" +
                                std::to_string(model.height()) + " sensor");
  }
  EncodingConfig enc;
  enc.num_bins = model.config().num_bins;
  enc.height = model.height();
  enc.width = model.width();
  const VoxelGrid voxel = build_voxel_grid(stream, enc);
  const DepthSurface surface = build_depth_surface(stream, enc);
  const BinaryMask mask = build_mask(stream, enc);

  auto out = to_ndarray(model.forward_encodings(voxel.values, surface.values));
  SparseDepth result;
  result.depth_map = NdArray({model.height(), model.width()});
  result.mask = mask.values;
  for (size_t i = 0; i < result.depth_map.data.size(); ++i) {
    result.depth_map.data[i] = out.data[i] * mask.values.data[i];
  }
  return result;
}

std::string loss_trace_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream os;
  os << "iteration,loss,masked_rmse\n";
  os.precision(10);
  for (const auto& row : trace) {
    os << row.iteration << "," << row.loss << "," << row.masked_rmse << "\n";
  }
  return os.str();
}

void model_config_to_kv(const ModelConfig& cfg, FlatKv& kv, const std::string& prefix) {
  kv.set_int(prefix + "num_bins", cfg.num_bins);
  kv.set_int(prefix + "base_channels", cfg.base_channels);
  kv.set_int(prefix + "num_levels", cfg.num_levels);
  kv.set_int(prefix + "attention_dim", cfg.attention_dim);
  kv.set_int(prefix + "rdb_layers", cfg.rdb_layers);
  kv.set_int(prefix + "rdb_growth", cfg.rdb_growth);
  kv.set_bool(prefix + "use_fdcm", cfg.use_fdcm);
  kv.set_bool(prefix + "use_mdfb", cfg.use_mdfb);
  kv.set_int(prefix + "seed", static_cast<int64_t>(cfg.seed));
  kv.set_int(prefix + "attention_downsample", cfg.attention_downsample);
  kv.set_double(prefix + "depth_scale_m", cfg.depth_scale_m);
  kv.set_bool(prefix + "ablation_parity", cfg.ablation_parity);
}

ModelConfig model_config_from_kv(const FlatKv& kv, const std::string& prefix) {
  ModelConfig cfg;
  cfg.num_bins = static_cast<int>(kv.get_int(prefix + "num_bins"));
  cfg.base_channels = static_cast<int>(kv.get_int(prefix + "base_channels"));
  cfg.num_levels = static_cast<int>(kv.get_int(prefix + "num_levels"));
  cfg.attention_dim = static_cast<int>(kv.get_int(prefix + "attention_dim"));
  cfg.rdb_layers = static_cast<int>(kv.get_int(prefix + "rdb_layers"));
  cfg.rdb_growth = static_cast<int>(kv.get_int(prefix + "rdb_growth"));
  cfg.use_fdcm = kv.get_bool(prefix + "use_fdcm");
  cfg.use_mdfb = kv.get_bool(prefix + "use_mdfb");
  cfg.seed = static_cast<uint64_t>(kv.get_int(prefix + "seed"));
  cfg.attention_downsample = static_cast<int>(kv.get_int(prefix + "attention_downsample"));
  cfg.depth_scale_m = kv.get_double(prefix + "depth_scale_m");
  cfg.ablation_parity = kv.get_bool(prefix + "ablation_parity");
  return cfg;
}

void save_checkpoint(const std::filesystem::path& dir, const EDFFModel& model) {
  std::filesystem::create_directories(dir);
  const auto& params = model.parameters();
  const auto& names = model.parameter_names();
  std::ostringstream manifest;
  for (size_t i = 0; i < params.size(); ++i) {
    NdArray blob;
    blob.shape = params[i].shape();
    blob.data.assign(params[i].values().begin(), params[i].values().end());
    write_ten1(dir / (names[i] + ".ten1"), blob);
    manifest << names[i];
    for (int d : params[i].shape()) manifest << " " << d;
    manifest << "\n";
  }
  write_text_atomic(dir / "params.txt", manifest.str());
  FlatKv kv;
  model_config_to_kv(model.config(), kv);
  kv.set_int("input.height", model.height());
  kv.set_int("input.width", model.width());
  write_text_atomic(dir / "config.txt", kv.serialize());
}

EDFFModel load_checkpoint(const std::filesystem::path& dir) {
  const FlatKv kv = FlatKv::parse(read_text(dir / "config.txt"));
  const ModelConfig cfg = model_config_from_kv(kv);
  EDFFModel model(cfg, static_cast<int>(kv.get_int("input.height")),
                  static_cast<int>(kv.get_int("input.width")));

  std::istringstream manifest(read_text(dir / "params.txt"));
  const auto& names = model.parameter_names();
  auto& params = model.parameters();
  std::string line;
  size_t index = 0;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name;
    ls >> name;
    if (index >= names.size() || name != names[index]) {
      throw IoError("checkpoint " + dir.string() + ": unexpected parameter '" + name + "'");
    }
    std::vector<int> shape;
    int d;
    while (ls >> d) shape.push_back(d);
    if (shape != params[index].shape()) {
      throw IoError("checkpoint " + dir.string() + ": shape mismatch for '" + name + "'");
    }
    const NdArray blob = read_ten1(dir / (name + ".ten1"));
    if (blob.shape != shape) {
      throw IoError("checkpoint " + dir.string() + ": blob shape mismatch for '" + name + "'");
    }
    auto& values = params[index].values();
    for (size_t i = 0; i < values.size(); ++i) values[i] = static_cast<float>(blob.data[i]);
    ++index;
  }
  if (index != names.size()) {
    throw IoError("checkpoint " + dir.string() + ": missing parameters");
  }
  return model;
}

}  // namespace efs
