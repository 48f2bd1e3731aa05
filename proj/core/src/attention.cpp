#include "ampattn/attention.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ampattn/errors.hpp"
#include "ampattn/tensor_io.hpp"

namespace ampattn {

namespace {
constexpr double kMaskBias = -1e9;

Tensor glorot(Shape shape, int fan_in, int fan_out, Rng& rng) {
  double bound = std::sqrt(6.0 / (fan_in + fan_out));
  return Tensor::uniform(std::move(shape), bound, rng, true);
}
}  // namespace

std::string to_string(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::BMHSA: return "bmhsa";
    case AttentionVariant::MHSA_FA: return "mhsa_fa";
    case AttentionVariant::MHSA_FACA: return "mhsa_faca";
  }
  return "?";
}

AttentionVariant variant_from_string(const std::string& s) {
  if (s == "bmhsa") return AttentionVariant::BMHSA;
  if (s == "mhsa_fa") return AttentionVariant::MHSA_FA;
  if (s == "mhsa_faca") return AttentionVariant::MHSA_FACA;
  throw ConfigError("unknown attention variant '" + s +
                    "' (expected bmhsa, mhsa_fa, or mhsa_faca)");
}

void AttentionConfig::validate() const {
  if (d_m < 1 || h < 1 || d_m % h != 0)
    throw ConfigError("d_m " + std::to_string(d_m) + " must be a positive multiple of h " +
                      std::to_string(h));
  if (sigma_floor <= 0) throw ConfigError("sigma_floor must be positive");
}

std::vector<Tensor> AttentionParams::trainable() const {
  std::vector<Tensor> out;
  for (const auto& hd : heads)
    for (const auto& t : {hd.query_proj, hd.key_proj, hd.value_proj, hd.focal_input_w,
                          hd.focal_mean_w, hd.center_vec, hd.scope_vec})
      out.push_back(t);
  out.push_back(out_proj);
  out.push_back(gate_w);
  out.push_back(gate_b);
  return out;
}

AttentionParams init_attention_params(const AttentionConfig& cfg, Rng& rng) {
  cfg.validate();
  int dm = cfg.d_m, dh = cfg.d_h(), h = cfg.h;
  AttentionParams p;
  p.heads.resize(h);
  for (auto& hd : p.heads) {
    hd.query_proj = glorot({dm, dh}, dm, dh, rng);
    hd.key_proj = glorot({dm, dh}, dm, dh, rng);
    hd.value_proj = glorot({dm, dh}, dm, dh, rng);
    hd.focal_input_w = glorot({dm, dm}, dm, dm, rng);
    hd.focal_mean_w = glorot({dm, dm}, dm, dm, rng);
    hd.center_vec = glorot({dm, 1}, dm, 1, rng);
    hd.scope_vec = glorot({dm, 1}, dm, 1, rng);
  }
  p.out_proj = glorot({h * dh, dm}, h * dh, dm, rng);
  p.gate_w = glorot({h, h}, h, h, rng);
  // Gates start near-open (sigmoid(2) ~ 0.88) so early training sees all heads.
  p.gate_b = Tensor::full({h, 1}, 2.0, true);
  return p;
}

ScaledDotResult scaled_dot_attention(Graph& g, const Tensor& Q, const Tensor& K, const Tensor& V,
                                     const Tensor* bias, double divisor) {
  if (Q.rank() != 2 || K.rank() != 2 || V.rank() != 2 || Q.extent(1) != K.extent(1) ||
      K.extent(0) != V.extent(0) || Q.extent(0) != K.extent(0))
    throw std::invalid_argument("scaled_dot_attention: inconsistent shapes Q" +
                                shape_str(Q.shape()) + " K" + shape_str(K.shape()) + " V" +
                                shape_str(V.shape()));
  if (divisor <= 0) divisor = std::sqrt(static_cast<double>(Q.extent(1)));
  ScaledDotResult r;
  r.scores = g.scale(g.matmul(Q, g.transpose(K)), 1.0 / divisor);
  if (bias) r.scores = g.add(r.scores, *bias);
  r.map = g.softmax_rows(r.scores);
  r.output = g.matmul(r.map, V);
  return r;
}

FocalParams focal_params(Graph& g, const Tensor& Q, const AttentionHeadParams& head) {
  int m = Q.extent(0);
  Tensor G = g.mean_axis(Q, 0);  // 1 x d_m
  // Row i of hidden = tanh(W_p Q_i + W_g G), computed once and shared by the
  // center and scope projections.
  Tensor hidden = g.tanh(g.add(g.matmul(Q, g.transpose(head.focal_input_w)),
                               g.matmul(G, g.transpose(head.focal_mean_w))));
  FocalParams fp;
  fp.mu_tilde = g.scale(g.sigmoid(g.matmul(hidden, head.center_vec)), m);
  fp.sigma_tilde = g.scale(g.sigmoid(g.matmul(hidden, head.scope_vec)), m);
  return fp;
}

Tensor focal_bias(Graph& g, const FocalParams& fp, int m, double sigma_floor) {
  std::vector<double> pos(m);
  for (int j = 0; j < m; ++j) pos[j] = j;
  Tensor P = Tensor::from_data({1, m}, std::move(pos));
  Tensor dist2 = g.square(g.sub(P, fp.mu_tilde));  // broadcast to m x m
  Tensor denom = g.scale(g.square(g.clamp_min(fp.sigma_tilde, sigma_floor)), 0.5);
  return g.neg(g.div(dist2, denom));
}

CalibrationResult calibrate_heads(Graph& g, const std::vector<Tensor>& H_o, const Tensor& gate_w,
                                  const Tensor& gate_b, int valid_rows) {
  if (H_o.empty()) throw std::invalid_argument("calibrate_heads: no heads");
  int h = static_cast<int>(H_o.size());
  int m = H_o[0].extent(0);
  int valid = valid_rows < 0 ? m : valid_rows;
  std::vector<Tensor> pooled;
  pooled.reserve(h);
  for (const auto& map : H_o) {
    Tensor gmax = valid == m ? g.max(map) : g.max(g.rows(map, 0, valid));
    pooled.push_back(g.reshape(gmax, {1, 1}));
  }
  Tensor gvec = g.concat_rows(pooled);  // h x 1
  CalibrationResult r;
  r.s = g.sigmoid(g.add(g.matmul(gate_w, gvec), gate_b));
  for (int i = 0; i < h; ++i) r.gated.push_back(g.mul(H_o[i], g.row(r.s, i)));
  return r;
}

Tensor mhsa_forward(Graph& g, const Tensor& X, const AttentionConfig& cfg,
                    const AttentionParams& params, int valid_rows, AttentionTrace* trace) {
  cfg.validate();
  if (X.rank() != 2 || X.extent(1) != cfg.d_m)
    throw std::invalid_argument("mhsa_forward: X " + shape_str(X.shape()) +
                                " does not match d_m " + std::to_string(cfg.d_m));
  if (static_cast<int>(params.heads.size()) != cfg.h)
    throw std::invalid_argument("mhsa_forward: have " + std::to_string(params.heads.size()) +
                                " head params, config wants " + std::to_string(cfg.h));
  int m = X.extent(0);
  int valid = valid_rows < 0 ? m : valid_rows;
  if (valid < 1 || valid > m)
    throw std::invalid_argument("mhsa_forward: valid_rows " + std::to_string(valid) +
                                " outside [1," + std::to_string(m) + "]");
  bool use_focal = cfg.variant != AttentionVariant::BMHSA && !cfg.disable_focal_bias;
  bool use_gate = cfg.variant == AttentionVariant::MHSA_FACA && !cfg.force_calibration_one;
  double divisor = std::sqrt(static_cast<double>(cfg.scale_dm_literal ? cfg.d_m : cfg.d_h()));

  Tensor mask;  // -1e9 on padded key columns, added pre-softmax
  if (valid < m) {
    mask = Tensor::zeros({1, m});
    for (int j = valid; j < m; ++j) mask(j) = kMaskBias;
  }

  if (trace) {
    trace->heads.assign(cfg.h, HeadTrace{});
    trace->s = Tensor();
  }

  std::vector<Tensor> maps, values;
  for (int i = 0; i < cfg.h; ++i) {
    const auto& hp = params.heads[i];
    Tensor Q = g.matmul(X, hp.query_proj);
    Tensor K = g.matmul(X, hp.key_proj);
    Tensor V = g.matmul(X, hp.value_proj);
    Tensor scores = g.scale(g.matmul(Q, g.transpose(K)), 1.0 / divisor);
    if (use_focal) {
      FocalParams fp = focal_params(g, X, hp);
      Tensor f = focal_bias(g, fp, m, cfg.sigma_floor);
      scores = g.add(scores, f);
      if (trace) {
        trace->heads[i].focal_bias = f;
        trace->heads[i].mu_tilde = fp.mu_tilde;
        trace->heads[i].sigma_tilde = fp.sigma_tilde;
      }
    }
    if (mask.defined()) scores = g.add(scores, mask);
    Tensor map = g.softmax_rows(scores);
    if (trace) {
      trace->heads[i].scores = scores;
      trace->heads[i].H_o = map;
    }
    maps.push_back(map);
    values.push_back(V);
  }

  if (use_gate) {
    CalibrationResult cal = calibrate_heads(g, maps, params.gate_w, params.gate_b, valid);
    maps = cal.gated;
    if (trace) {
      trace->s = cal.s;
      for (int i = 0; i < cfg.h; ++i) trace->heads[i].H_s = maps[i];
    }
  }

  std::vector<Tensor> head_outs;
  head_outs.reserve(cfg.h);
  for (int i = 0; i < cfg.h; ++i) head_outs.push_back(g.matmul(maps[i], values[i]));
  return g.matmul(g.concat_cols(head_outs), params.out_proj);
}

void export_trace(const std::filesystem::path& dir, const std::string& utterance_id, int offset,
                  const AttentionTrace& trace, const AttentionConfig& cfg) {
  std::filesystem::create_directories(dir);
  std::string stem = utterance_id + "_" + std::to_string(offset);
  nlohmann::json side;
  side["utterance_id"] = utterance_id;
  side["offset"] = offset;
  side["variant"] = to_string(cfg.variant);
  side["heads"] = nlohmann::json::array();
  for (size_t i = 0; i < trace.heads.size(); ++i) {
    const HeadTrace& ht = trace.heads[i];
    std::string head = stem + "_head" + std::to_string(i) + "_";
    if (ht.H_o.defined()) save_csv(dir / (head + "Ho.csv"), ht.H_o);
    if (ht.H_s.defined()) save_csv(dir / (head + "Hs.csv"), ht.H_s);
    if (ht.focal_bias.defined()) save_csv(dir / (head + "f.csv"), ht.focal_bias);
    nlohmann::json hj;
    hj["head"] = i;
    if (ht.mu_tilde.defined()) {
      hj["mu_tilde"] = std::vector<double>(ht.mu_tilde.data().begin(), ht.mu_tilde.data().end());
      hj["sigma_tilde"] =
          std::vector<double>(ht.sigma_tilde.data().begin(), ht.sigma_tilde.data().end());
    }
    side["heads"].push_back(hj);
  }
  if (trace.s.defined())
    side["s"] = std::vector<double>(trace.s.data().begin(), trace.s.data().end());
  std::ofstream out(dir / (stem + "_focal.json"));
  if (!out) throw std::runtime_error((dir / (stem + "_focal.json")).string() + ": cannot open");
  out << side.dump(2) << '\n';
}

}  // namespace ampattn
