#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ampattn/attention.hpp"
#include "ampattn/mfcc.hpp"
#include "ampattn/tensor.hpp"

namespace ampattn {

enum class RunMode { train, eval };

struct ModelConfig {
  int n_mfcc = 40;
  int seg_len = 50;
  int conv_channels = 64;
  int conv_kernel_f = 3;  // kernel (3,1): 3 along features, 1 along time
  int pool_f = 2;         // pool (2,1): halve features, keep time
  int lstm_hidden = 256;
  int heads = 8;
  int fc_hidden = 256;
  int n_classes = 2;
  AttentionVariant variant = AttentionVariant::BMHSA;
  double sigma_floor = 0.1;
  bool scale_dm_literal = false;
  bool disable_focal_bias = false;
  bool force_calibration_one = false;
  uint64_t seed = 1;

  int conv_out_features() const { return n_mfcc / pool_f / pool_f; }
  int lstm_in() const { return conv_channels * conv_out_features(); }
  int d_m() const { return 2 * lstm_hidden; }
  AttentionConfig attention() const;
  void validate() const;  // ConfigError on violation
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

struct ConvBlockParams {
  // No conv bias: batch-norm directly after the convolution absorbs any
  // additive constant, so a bias would sit at exactly zero gradient forever.
  Tensor kernel;  // C_out x C_in x K
  Tensor bn_gamma, bn_beta;                  // C_out, trained
  Tensor bn_running_mean, bn_running_var;    // C_out, updated by train forwards
};

struct LstmCellParams {
  // Gates use x W + h U + b with W: d_in x H, U: H x H, b: 1 x H.
  Tensor w_i, u_i, b_i;
  Tensor w_f, u_f, b_f;
  Tensor w_g, u_g, b_g;
  Tensor w_o, u_o, b_o;
};

struct BiLstmParams {
  LstmCellParams fwd, bwd;
};

struct DenseParams {
  Tensor w;  // in x out
  Tensor b;  // 1 x out
};

struct ModelParams {
  ConvBlockParams conv1, conv2;
  BiLstmParams lstm1, lstm2;
  AttentionParams attn;
  DenseParams fc1, fc2;

  /// Visit every parameter under its stable checkpoint name (conv1.kernel,
  /// lstm1.fwd.W_i, attn.head3.U_c, ...). Order is fixed.
  void visit(const std::function<void(const std::string&, Tensor&)>& fn);

  /// Everything the optimizer updates (excludes batch-norm running stats).
  std::vector<Tensor> trainable();

  ModelParams clone() const;
};

/// Deterministic per seed: conv/FC/attention weights uniform in
/// +-sqrt(6/(fan_in+fan_out)), recurrent U matrices orthogonal, forget-gate
/// bias 1, batch-norm at identity.
ModelParams init_params(const ModelConfig& cfg);

/// Convolution along the feature axis of a C x F x T tensor, kernel (K,1),
/// stride 1, zero padding K/2 so F is preserved; time untouched.
/// bias (C_out), when given, is added per output channel.
Tensor conv2d_f(Graph& g, const Tensor& x, const Tensor& kernel, const Tensor* bias = nullptr);

/// Per-channel batch normalization over the F x T plane. Train mode uses the
/// sample's own statistics (biased variance) and updates the running
/// estimates; eval mode normalizes with the running estimates.
Tensor batchnorm(Graph& g, const Tensor& x, ConvBlockParams& p, RunMode mode);

/// Max-pool along the feature axis, window = stride = pool; floor division
/// drops a trailing remainder; ties keep the first index.
Tensor maxpool_f(Graph& g, const Tensor& x, int pool);

/// C x F x T -> T x (C*F), the per-step flattening feeding the recurrence.
Tensor time_major(Graph& g, const Tensor& x);

/// Conv -> batch-norm -> ReLU -> max-pool, feature axis only; time untouched.
Tensor conv_block(Graph& g, const Tensor& x, ConvBlockParams& p, const ModelConfig& cfg,
                  RunMode mode);

/// Standard LSTM run forward and backward over time, outputs concatenated per
/// step: m x d_in -> m x 2*hidden.
Tensor bilstm(Graph& g, const Tensor& x, const BiLstmParams& p, int hidden);

/// Segment (m x n_mfcc) -> 1 x n_classes logits.
/// Pipeline: 1 x n_mfcc x m -> two conv blocks -> per-step flatten ->
/// two BiLSTM layers -> attention -> mean over valid steps -> two FC layers.
Tensor model_forward(Graph& g, const Segment& seg, const ModelConfig& cfg, ModelParams& params,
                     RunMode mode, AttentionTrace* trace = nullptr);

/// Checkpoint: <dir>/manifest.json + <dir>/params/<name>.tnsr per parameter.
/// extra_json (a JSON object; "{}" for none) is stored verbatim in the
/// manifest; callers use it for metrics, the label vocabulary, and the
/// feature-extraction config so a checkpoint is self-contained.
void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& cfg,
                     ModelParams& params, int epoch, const std::string& extra_json);

struct Checkpoint {
  ModelConfig cfg;
  ModelParams params;
  int epoch = 0;
  std::string extra_json;
};

Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace ampattn
