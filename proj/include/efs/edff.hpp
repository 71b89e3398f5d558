#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "efs/autodiff.hpp"
#include "efs/classical_dff.hpp"
#include "efs/encodings.hpp"
#include "efs/event_stream.hpp"

namespace efs {

struct ModelConfig {
  int num_bins = 8;          // N of the encodings this model consumes
  int base_channels = 16;
  int num_levels = 3;        // UNet depth (encoder levels)
  int attention_dim = 16;    // d of the attention scaling; equals base_channels
  int rdb_layers = 3;
  int rdb_growth = 8;
  bool use_fdcm = true;
  bool use_mdfb = true;
  uint64_t seed = 42;
  int attention_downsample = 4;  // token grid reduction inside FDCM
  double depth_scale_m = 10.0;   // output head units -> meters
  // Replace disabled modules with parameter-matched convolution stacks
  // instead of pure passthroughs (used by the ablation harness).
  bool ablation_parity = false;

  void validate() const;
};

struct LossConfig {
  double alpha = 128.0;  // weight of the L2 term
  double beta = 1.0;     // weight of the gradient (smoothness) term

  void validate() const;
};

template <typename Real>
struct ConvParams {
  TensorT<Real> weight;
  TensorT<Real> bias;
};

// Projection and MLP weights of the focal-distance-guided cross-modal
// attention. Q comes from the event-domain features, K and V from the
// focal-distance-domain features.
template <typename Real>
struct AttentionBlock {
  TensorT<Real> ln_v_gamma, ln_v_beta;
  TensorT<Real> ln_d_gamma, ln_d_beta;
  ConvParams<Real> proj_q, proj_k, proj_v;
  ConvParams<Real> mlp_expand, mlp_project;
  TensorT<Real> pool_kernel;  // constant depthwise average, not a parameter
};

/// EDFF: shallow feature extraction per {voxel grid, depth surface} pair,
/// FDCM cross-modal attention, UNet-like trunk emitting per-level coarse
/// depths, and MDFB coarse-to-fine fusion.
template <typename Real>
class EDFFModelT {
 public:
  EDFFModelT(const ModelConfig& cfg, int height, int width);

  const ModelConfig& config() const { return cfg_; }
  int height() const { return height_; }
  int width() const { return width_; }

  std::vector<TensorT<Real>>& parameters() { return params_; }
  const std::vector<TensorT<Real>>& parameters() const { return params_; }
  const std::vector<std::string>& parameter_names() const { return param_names_; }
  void zero_grad();

  // Flattens an [N,2,H,W] encoding into the (N*2) x H x W network input;
  // `scale` divides the values (used to normalize the depth surface).
  TensorT<Real> encoding_to_input(const NdArray& encoding, double scale = 1.0) const;

  std::pair<TensorT<Real>, TensorT<Real>> shallow_extract(const TensorT<Real>& voxel_input,
                                                          const TensorT<Real>& surface_input);
  TensorT<Real> fdcm_attention(const TensorT<Real>& f_v, const TensorT<Real>& f_d);
  std::vector<TensorT<Real>> unet_forward(const TensorT<Real>& fused);
  TensorT<Real> mdfb_fuse(const std::vector<TensorT<Real>>& initial_depths);

  // Full pipeline: returns the final depth map {1, H, W} in meters.
  TensorT<Real> forward(const TensorT<Real>& voxel_input, const TensorT<Real>& surface_input);
  TensorT<Real> forward_encodings(const NdArray& voxel, const NdArray& surface);

  const AttentionBlock<Real>& attention_block() const { return fdcm_; }

 private:
  ConvParams<Real> make_conv(const std::string& name, int out_ch, int in_ch, int k,
                             bool zero_init = false);
  TensorT<Real> make_param(const std::string& name, std::vector<int> shape, double stddev);

  TensorT<Real> conv_block(const TensorT<Real>& x, const ConvParams<Real>& c1,
                           const ConvParams<Real>& c2);
  TensorT<Real> rdb(const TensorT<Real>& x, int stage);

  ModelConfig cfg_;
  int height_ = 0;
  int width_ = 0;
  std::mt19937_64 rng_;

  std::vector<TensorT<Real>> params_;
  std::vector<std::string> param_names_;

  // shallow extraction (two independent stacks)
  ConvParams<Real> shallow_v1_, shallow_v2_, shallow_d1_, shallow_d2_;
  // FDCM or its parity replacement
  AttentionBlock<Real> fdcm_;
  ConvParams<Real> fdcm_replace1_, fdcm_replace2_;
  // UNet
  std::vector<ConvParams<Real>> enc1_, enc2_;   // per level
  std::vector<ConvParams<Real>> down_;          // levels 1..L-1
  std::vector<ConvParams<Real>> up_;            // decoder upsampling convs
  std::vector<ConvParams<Real>> dec1_, dec2_;   // decoder blocks
  std::vector<ConvParams<Real>> heads_;         // coarse-to-fine depth heads
  // MDFB stages (coarse-to-fine pair fusions)
  struct MdfbStage {
    ConvParams<Real> fuse_in;
    std::vector<ConvParams<Real>> rdb_convs;
    ConvParams<Real> rdb_local;
    ConvParams<Real> to_shuffle;
    ConvParams<Real> out_conv;  // zero-initialized
  };
  std::vector<MdfbStage> mdfb_;
  ConvParams<Real> mdfb_replace1_, mdfb_replace2_;
};

using EDFFModel = EDFFModelT<float>;

extern template class EDFFModelT<float>;
extern template class EDFFModelT<double>;

/// Masked training loss: alpha * ||M(pred) - M(gt)||_2 plus beta * L1 of the
/// masked forward-difference gradients; gradient pixels whose stencil
/// touches a masked-out pixel are excluded.
template <typename Real>
TensorT<Real> edff_loss(const TensorT<Real>& pred, const TensorT<Real>& gt,
                        const NdArray& mask, const LossConfig& cfg);

extern template TensorT<float> edff_loss<float>(const TensorT<float>&, const TensorT<float>&,
                                                const NdArray&, const LossConfig&);
extern template TensorT<double> edff_loss<double>(const TensorT<double>&, const TensorT<double>&,
                                                  const NdArray&, const LossConfig&);

struct DivergenceError : std::runtime_error {
  double last_finite_loss;
  int iteration;
  DivergenceError(const std::string& what, double last_loss, int iter)
      : std::runtime_error(what), last_finite_loss(last_loss), iteration(iter) {}
};

struct TrainConfig {
  int iterations = 500;
  double learning_rate = 5e-4;
  uint64_t seed = 0;
  int trace_every = 10;

  void validate() const;
};

// One prepared training sample (encodings plus ground truth).
struct TrainingSample {
  NdArray voxel;    // [N,2,H,W]
  NdArray surface;  // [N,2,H,W]
  NdArray gt;       // [H,W] meters
  NdArray mask;     // [H,W] {0,1}
};

struct TraceRow {
  int iteration;
  double loss;
  double masked_rmse;  // on the holdout sample
};

/// Adam training loop; deterministic given config seeds. Throws
/// DivergenceError when the loss goes non-finite. `holdout` may be null, in
/// which case the trace reports RMSE on the first training sample.
std::vector<TraceRow> train_edff(EDFFModel& model, const std::vector<TrainingSample>& train_set,
                                 const TrainingSample* holdout, const TrainConfig& tcfg,
                                 const LossConfig& lcfg);

/// Encodings -> network -> final depth, masked by build_mask(stream).
SparseDepth edff_predict(const EventStream& stream, EDFFModel& model);

std::string loss_trace_csv(const std::vector<TraceRow>& trace);

/// Checkpoint layout: params.txt (ordered names + shapes), one TEN1 blob per
/// parameter, and the model configuration in flat key = value form.
void save_checkpoint(const std::filesystem::path& dir, const EDFFModel& model);
EDFFModel load_checkpoint(const std::filesystem::path& dir);

ModelConfig model_config_from_kv(const FlatKv& kv, const std::string& prefix = "model.");
void model_config_to_kv(const ModelConfig& cfg, FlatKv& kv, const std::string& prefix = "model.");

}  // namespace efs
