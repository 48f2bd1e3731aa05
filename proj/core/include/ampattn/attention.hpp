#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ampattn/tensor.hpp"

namespace ampattn {

enum class AttentionVariant { BMHSA, MHSA_FA, MHSA_FACA };

std::string to_string(AttentionVariant v);
AttentionVariant variant_from_string(const std::string& s);  // ConfigError on unknown

struct AttentionConfig {
  int d_m = 0;
  int h = 1;
  AttentionVariant variant = AttentionVariant::BMHSA;
  double sigma_floor = 0.1;      // floor on sigma_tilde before squaring
  bool scale_dm_literal = false; // scores / sqrt(d_m) instead of sqrt(d_h)
  // Equivalence switches: with both set, MHSA_FACA runs the exact BMHSA code
  // path (no added zeros, no multiplies by one), so outputs match bitwise.
  bool disable_focal_bias = false;
  bool force_calibration_one = false;

  int d_h() const { return d_m / h; }
  void validate() const;  // ConfigError on violation
};

/// Per-head parameters. Field names are role-based; the checkpoint naming
/// contract (attn.head<i>.W_q and friends) lives in cldnn-model's visit().
struct AttentionHeadParams {
  Tensor query_proj, key_proj, value_proj;  // d_m x d_h
  Tensor focal_input_w;                     // W_p: d_m x d_m, shared across steps
  Tensor focal_mean_w;                      // W_g: d_m x d_m
  Tensor center_vec, scope_vec;             // U_c, U_d: d_m x 1
};

struct AttentionParams {
  std::vector<AttentionHeadParams> heads;
  Tensor out_proj;  // W_o: (h*d_h) x d_m
  Tensor gate_w;    // W_s: h x h
  Tensor gate_b;    // b_s: h x 1

  std::vector<Tensor> trainable() const;
};

/// All parameter groups are allocated regardless of variant so the three
/// variants start from identical shared weights under one seed; ops a variant
/// does not use never enter the graph and stay frozen.
AttentionParams init_attention_params(const AttentionConfig& cfg, Rng& rng);

struct HeadTrace {
  Tensor scores;       // m x m pre-softmax (after masking/bias)
  Tensor focal_bias;   // m x m, FA variants only
  Tensor H_o;          // m x m post-softmax
  Tensor H_s;          // m x m gated, FACA only
  Tensor mu_tilde, sigma_tilde;  // m x 1, FA variants only
};

struct AttentionTrace {
  std::vector<HeadTrace> heads;
  Tensor s;  // h x 1 calibration scores, FACA only
};

struct ScaledDotResult {
  Tensor output;  // m x d
  Tensor map;     // m x m post-softmax
  Tensor scores;  // m x m pre-softmax
};

/// map = softmax_rows(Q K^T / divisor + bias); output = map V.
/// divisor <= 0 means sqrt(d) with d = Q's column count.
ScaledDotResult scaled_dot_attention(Graph& g, const Tensor& Q, const Tensor& K, const Tensor& V,
                                     const Tensor* bias = nullptr, double divisor = 0.0);

struct FocalParams {
  Tensor mu_tilde, sigma_tilde;  // m x 1, each in (0, m)
};

/// G = row mean of Q; hidden_i = tanh(W_p Q_i + W_g G) shared between the
/// center and scope projections; mu_tilde = m*sigmoid(U_c^T hidden),
/// sigma_tilde = m*sigmoid(U_d^T hidden).
FocalParams focal_params(Graph& g, const Tensor& Q, const AttentionHeadParams& head);

/// f[i][j] = -(P_j - mu_tilde_i)^2 / (sigma_tilde_i^2 / 2), P_j = j (0-based),
/// with sigma_tilde floored at sigma_floor first. All entries <= 0.
Tensor focal_bias(Graph& g, const FocalParams& fp, int m, double sigma_floor);

struct CalibrationResult {
  std::vector<Tensor> gated;  // H_s per head
  Tensor s;                   // h x 1
};

/// g[i] = global max pool over head i's map (query rows < valid_rows only);
/// s = sigmoid(W_s g + b_s); H_s[i] = s[i] * H_o[i].
CalibrationResult calibrate_heads(Graph& g, const std::vector<Tensor>& H_o, const Tensor& gate_w,
                                  const Tensor& gate_b, int valid_rows = -1);

/// Full multi-head forward. valid_rows < m masks padded key positions with a
/// -1e9 pre-softmax bias and excludes padded query rows from pooling;
/// valid_rows = -1 means all rows are real.
Tensor mhsa_forward(Graph& g, const Tensor& X, const AttentionConfig& cfg,
                    const AttentionParams& params, int valid_rows = -1,
                    AttentionTrace* trace = nullptr);

/// Per-head CSV maps named <utt>_<offset>_head<i>_<kind>.csv (kinds Ho, Hs, f
/// as applicable) plus a <utt>_<offset>_focal.json sidecar with mu_tilde,
/// sigma_tilde, and s.
void export_trace(const std::filesystem::path& dir, const std::string& utterance_id, int offset,
                  const AttentionTrace& trace, const AttentionConfig& cfg);

}  // namespace ampattn
