#include "ampattn/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ampattn/errors.hpp"
#include "ampattn/tensor_io.hpp"

namespace ampattn {

namespace {
constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;
}  // namespace

AttentionConfig ModelConfig::attention() const {
  AttentionConfig a;
  a.d_m = d_m();
  a.h = heads;
  a.variant = variant;
  a.sigma_floor = sigma_floor;
  a.scale_dm_literal = scale_dm_literal;
  a.disable_focal_bias = disable_focal_bias;
  a.force_calibration_one = force_calibration_one;
  return a;
}

void ModelConfig::validate() const {
  if (n_mfcc < 4) throw ConfigError("n_mfcc must be >= 4 (two feature halvings must leave >= 1)");
  if (conv_kernel_f < 1 || conv_kernel_f % 2 == 0)
    throw ConfigError("conv_kernel_f must be odd (zero padding preserves the feature extent)");
  if (pool_f < 1) throw ConfigError("pool_f must be >= 1");
  if (conv_out_features() < 1) throw ConfigError("pooling erases all features");
  if (seg_len < 1 || conv_channels < 1 || lstm_hidden < 1 || fc_hidden < 1)
    throw ConfigError("seg_len, conv_channels, lstm_hidden, fc_hidden must be positive");
  if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
  attention().validate();
}

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["n_mfcc"] = cfg.n_mfcc;
  j["seg_len"] = cfg.seg_len;
  j["conv_channels"] = cfg.conv_channels;
  j["conv_kernel_f"] = cfg.conv_kernel_f;
  j["pool_f"] = cfg.pool_f;
  j["lstm_hidden"] = cfg.lstm_hidden;
  j["heads"] = cfg.heads;
  j["fc_hidden"] = cfg.fc_hidden;
  j["n_classes"] = cfg.n_classes;
  j["variant"] = to_string(cfg.variant);
  j["sigma_floor"] = cfg.sigma_floor;
  j["scale_dm_literal"] = cfg.scale_dm_literal;
  j["disable_focal_bias"] = cfg.disable_focal_bias;
  j["force_calibration_one"] = cfg.force_calibration_one;
  j["seed"] = cfg.seed;
  return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig d;
  ModelConfig c;
  c.n_mfcc = j.value("n_mfcc", d.n_mfcc);
  c.seg_len = j.value("seg_len", d.seg_len);
  c.conv_channels = j.value("conv_channels", d.conv_channels);
  c.conv_kernel_f = j.value("conv_kernel_f", d.conv_kernel_f);
  c.pool_f = j.value("pool_f", d.pool_f);
  c.lstm_hidden = j.value("lstm_hidden", d.lstm_hidden);
  c.heads = j.value("heads", d.heads);
  c.fc_hidden = j.value("fc_hidden", d.fc_hidden);
  c.n_classes = j.value("n_classes", d.n_classes);
  c.variant = variant_from_string(j.value("variant", std::string("bmhsa")));
  c.sigma_floor = j.value("sigma_floor", d.sigma_floor);
  c.scale_dm_literal = j.value("scale_dm_literal", d.scale_dm_literal);
  c.disable_focal_bias = j.value("disable_focal_bias", d.disable_focal_bias);
  c.force_calibration_one = j.value("force_calibration_one", d.force_calibration_one);
  c.seed = j.value("seed", d.seed);
  return c;
}

// ---------------------------------------------------------------------------
// Parameter plumbing
// ---------------------------------------------------------------------------

namespace {

void visit_conv(const std::string& prefix, ConvBlockParams& p,
                const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(prefix + ".kernel", p.kernel);
  fn(prefix + ".bn.gamma", p.bn_gamma);
  fn(prefix + ".bn.beta", p.bn_beta);
  fn(prefix + ".bn.running_mean", p.bn_running_mean);
  fn(prefix + ".bn.running_var", p.bn_running_var);
}

void visit_cell(const std::string& prefix, LstmCellParams& p,
                const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(prefix + ".W_i", p.w_i);
  fn(prefix + ".U_i", p.u_i);
  fn(prefix + ".b_i", p.b_i);
  fn(prefix + ".W_f", p.w_f);
  fn(prefix + ".U_f", p.u_f);
  fn(prefix + ".b_f", p.b_f);
  fn(prefix + ".W_g", p.w_g);
  fn(prefix + ".U_g", p.u_g);
  fn(prefix + ".b_g", p.b_g);
  fn(prefix + ".W_o", p.w_o);
  fn(prefix + ".U_o", p.u_o);
  fn(prefix + ".b_o", p.b_o);
}

}  // namespace

void ModelParams::visit(const std::function<void(const std::string&, Tensor&)>& fn) {
  visit_conv("conv1", conv1, fn);
  visit_conv("conv2", conv2, fn);
  visit_cell("lstm1.fwd", lstm1.fwd, fn);
  visit_cell("lstm1.bwd", lstm1.bwd, fn);
  visit_cell("lstm2.fwd", lstm2.fwd, fn);
  visit_cell("lstm2.bwd", lstm2.bwd, fn);
  for (size_t i = 0; i < attn.heads.size(); ++i) {
    std::string prefix = "attn.head" + std::to_string(i);
    auto& hd = attn.heads[i];
    fn(prefix + ".W_q", hd.query_proj);
    fn(prefix + ".W_k", hd.key_proj);
    fn(prefix + ".W_v", hd.value_proj);
    fn(prefix + ".W_p", hd.focal_input_w);
    fn(prefix + ".W_g", hd.focal_mean_w);
    fn(prefix + ".U_c", hd.center_vec);
    fn(prefix + ".U_d", hd.scope_vec);
  }
  fn("attn.W_o", attn.out_proj);
  fn("attn.W_s", attn.gate_w);
  fn("attn.b_s", attn.gate_b);
  fn("fc1.W", fc1.w);
  fn("fc1.b", fc1.b);
  fn("fc2.W", fc2.w);
  fn("fc2.b", fc2.b);
}

std::vector<Tensor> ModelParams::trainable() {
  std::vector<Tensor> out;
  visit([&out](const std::string& name, Tensor& t) {
    if (name.find("running") == std::string::npos) out.push_back(t);
  });
  return out;
}

ModelParams ModelParams::clone() const {
  ModelParams c = *this;  // shares handles, then deep-copies each below
  c.visit([](const std::string&, Tensor& t) { t = t.clone(); });
  return c;
}

namespace {

Tensor glorot(Shape shape, int fan_in, int fan_out, Rng& rng) {
  double bound = std::sqrt(6.0 / (fan_in + fan_out));
  return Tensor::uniform(std::move(shape), bound, rng, true);
}

/// Orthogonal n x n matrix: modified Gram-Schmidt on a random normal matrix.
/// MGS yields the unique Q with positive R diagonal, so the result is
/// deterministic in the rng stream.
Tensor orthogonal(int n, Rng& rng) {
  std::vector<double> a(static_cast<size_t>(n) * n);
  for (auto& v : a) v = rng.normal();
  std::vector<double> q(a);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < j; ++i) {
      double dot = 0.0;
      for (int r = 0; r < n; ++r) dot += q[static_cast<size_t>(r) * n + i] * q[static_cast<size_t>(r) * n + j];
      for (int r = 0; r < n; ++r) q[static_cast<size_t>(r) * n + j] -= dot * q[static_cast<size_t>(r) * n + i];
    }
    double norm = 0.0;
    for (int r = 0; r < n; ++r) norm += q[static_cast<size_t>(r) * n + j] * q[static_cast<size_t>(r) * n + j];
    norm = std::sqrt(norm);
    for (int r = 0; r < n; ++r) q[static_cast<size_t>(r) * n + j] /= norm;
  }
  return Tensor::from_data({n, n}, std::move(q), true);
}

ConvBlockParams init_conv(int c_in, int c_out, int k, Rng& rng) {
  ConvBlockParams p;
  p.kernel = glorot({c_out, c_in, k}, c_in * k, c_out * k, rng);
  p.bn_gamma = Tensor::full({c_out}, 1.0, true);
  p.bn_beta = Tensor::zeros({c_out}, true);
  p.bn_running_mean = Tensor::zeros({c_out});
  p.bn_running_var = Tensor::full({c_out}, 1.0);
  return p;
}

LstmCellParams init_cell(int d_in, int hidden, Rng& rng) {
  LstmCellParams p;
  auto w = [&]() { return glorot({d_in, hidden}, d_in, hidden, rng); };
  auto u = [&]() { return orthogonal(hidden, rng); };
  p.w_i = w(); p.u_i = u(); p.b_i = Tensor::zeros({1, hidden}, true);
  p.w_f = w(); p.u_f = u(); p.b_f = Tensor::full({1, hidden}, 1.0, true);
  p.w_g = w(); p.u_g = u(); p.b_g = Tensor::zeros({1, hidden}, true);
  p.w_o = w(); p.u_o = u(); p.b_o = Tensor::zeros({1, hidden}, true);
  return p;
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  ModelParams p;
  p.conv1 = init_conv(1, cfg.conv_channels, cfg.conv_kernel_f, rng);
  p.conv2 = init_conv(cfg.conv_channels, cfg.conv_channels, cfg.conv_kernel_f, rng);
  p.lstm1.fwd = init_cell(cfg.lstm_in(), cfg.lstm_hidden, rng);
  p.lstm1.bwd = init_cell(cfg.lstm_in(), cfg.lstm_hidden, rng);
  p.lstm2.fwd = init_cell(cfg.d_m(), cfg.lstm_hidden, rng);
  p.lstm2.bwd = init_cell(cfg.d_m(), cfg.lstm_hidden, rng);
  p.attn = init_attention_params(cfg.attention(), rng);
  p.fc1.w = glorot({cfg.d_m(), cfg.fc_hidden}, cfg.d_m(), cfg.fc_hidden, rng);
  p.fc1.b = Tensor::zeros({1, cfg.fc_hidden}, true);
  p.fc2.w = glorot({cfg.fc_hidden, cfg.n_classes}, cfg.fc_hidden, cfg.n_classes, rng);
  p.fc2.b = Tensor::zeros({1, cfg.n_classes}, true);
  return p;
}

// ---------------------------------------------------------------------------
// Fused conv / batch-norm / pool ops on C x F x T tensors
// ---------------------------------------------------------------------------


/// Convolution along the feature axis, kernel (K,1), stride 1, zero padding
/// K/2 so F is preserved; the time axis is untouched.
Tensor conv2d_f(Graph& g, const Tensor& x, const Tensor& kernel, const Tensor* bias) {
  int ci = x.extent(0), F = x.extent(1), T = x.extent(2);
  int co = kernel.extent(0), K = kernel.extent(2);
  if (kernel.extent(1) != ci)
    throw std::invalid_argument("conv: kernel " + shape_str(kernel.shape()) +
                                " does not match input channels " + std::to_string(ci));
  if (F < K)
    throw std::invalid_argument("conv: feature extent " + std::to_string(F) +
                                " smaller than kernel " + std::to_string(K));
  int P = K / 2;
  Tensor y = Tensor::zeros({co, F, T});
  {
    auto xs = x.data();
    auto ws = kernel.data();
    auto ys = y.data();
    for (int o = 0; o < co; ++o) {
      double* yb = &ys[static_cast<size_t>(o) * F * T];
      double b = bias ? bias->data()[o] : 0.0;
      for (int64_t i = 0; i < static_cast<int64_t>(F) * T; ++i) yb[i] = b;
      for (int c = 0; c < ci; ++c)
        for (int k = 0; k < K; ++k) {
          double w = ws[(static_cast<size_t>(o) * ci + c) * K + k];
          if (w == 0.0) continue;
          for (int f = 0; f < F; ++f) {
            int fi = f + k - P;
            if (fi < 0 || fi >= F) continue;
            const double* xrow = &xs[(static_cast<size_t>(c) * F + fi) * T];
            double* yrow = &yb[static_cast<size_t>(f) * T];
            for (int t = 0; t < T; ++t) yrow[t] += w * xrow[t];
          }
        }
    }
  }
  Tensor xc = x, wc = kernel;
  Tensor bc = bias ? *bias : Tensor();
  std::vector<Tensor> inputs = bias ? std::vector<Tensor>{x, kernel, *bias}
                                    : std::vector<Tensor>{x, kernel};
  return g.make_op("conv2d_f", inputs, y, [xc, wc, bc, y, ci, co, F, T, K, P]() mutable {
    auto gy = y.grad();
    auto xs = xc.data();
    auto ws = wc.data();
    bool nx = xc.needs_grad(), nw = wc.needs_grad();
    bool nb = bc.defined() && bc.needs_grad();
    if (nb) {
      auto gb = bc.grad();
      for (int o = 0; o < co; ++o) {
        double acc = 0.0;
        const double* gb_row = &gy[static_cast<size_t>(o) * F * T];
        for (int64_t i = 0; i < static_cast<int64_t>(F) * T; ++i) acc += gb_row[i];
        gb[o] += acc;
      }
    }
    if (!nx && !nw) return;
    auto gx = nx ? xc.grad() : std::span<double>{};
    auto gw = nw ? wc.grad() : std::span<double>{};
    for (int o = 0; o < co; ++o)
      for (int c = 0; c < ci; ++c)
        for (int k = 0; k < K; ++k) {
          double w = ws[(static_cast<size_t>(o) * ci + c) * K + k];
          double acc = 0.0;
          for (int f = 0; f < F; ++f) {
            int fi = f + k - P;
            if (fi < 0 || fi >= F) continue;
            const double* gyrow = &gy[(static_cast<size_t>(o) * F + f) * T];
            const double* xrow = &xs[(static_cast<size_t>(c) * F + fi) * T];
            if (nx) {
              double* gxrow = &gx[(static_cast<size_t>(c) * F + fi) * T];
              for (int t = 0; t < T; ++t) gxrow[t] += w * gyrow[t];
            }
            if (nw)
              for (int t = 0; t < T; ++t) acc += xrow[t] * gyrow[t];
          }
          if (nw) gw[(static_cast<size_t>(o) * ci + c) * K + k] += acc;
        }
  });
}

/// Per-channel batch norm over the F x T plane of one sample. Train mode uses
/// the sample's own statistics (the per-segment forward is a batch of one) and
/// updates running stats; eval mode reads running stats.
Tensor batchnorm(Graph& g, const Tensor& x, ConvBlockParams& p, RunMode mode) {
  int C = x.extent(0), F = x.extent(1), T = x.extent(2);
  int64_t N = static_cast<int64_t>(F) * T;
  std::vector<double> mean(C), var(C);
  if (mode == RunMode::train) {
    auto xs = x.data();
    for (int c = 0; c < C; ++c) {
      const double* xb = &xs[static_cast<size_t>(c) * N];
      double mu = 0.0;
      for (int64_t i = 0; i < N; ++i) mu += xb[i];
      mu /= static_cast<double>(N);
      double v = 0.0;
      for (int64_t i = 0; i < N; ++i) v += (xb[i] - mu) * (xb[i] - mu);
      v /= static_cast<double>(N);  // biased, matching the running estimate
      mean[c] = mu;
      var[c] = v;
      p.bn_running_mean(c) = (1.0 - kBnMomentum) * p.bn_running_mean(c) + kBnMomentum * mu;
      p.bn_running_var(c) = (1.0 - kBnMomentum) * p.bn_running_var(c) + kBnMomentum * v;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = p.bn_running_mean(c);
      var[c] = p.bn_running_var(c);
    }
  }
  Tensor y = Tensor::zeros({C, F, T});
  {
    auto xs = x.data();
    auto ys = y.data();
    auto gam = p.bn_gamma.data();
    auto bet = p.bn_beta.data();
    for (int c = 0; c < C; ++c) {
      double inv = 1.0 / std::sqrt(var[c] + kBnEps);
      const double* xb = &xs[static_cast<size_t>(c) * N];
      double* yb = &ys[static_cast<size_t>(c) * N];
      for (int64_t i = 0; i < N; ++i) yb[i] = gam[c] * (xb[i] - mean[c]) * inv + bet[c];
    }
  }
  Tensor xc = x, gamma = p.bn_gamma, beta = p.bn_beta;
  bool train = mode == RunMode::train;
  return g.make_op("batchnorm", {x, gamma, beta}, y,
                   [xc, gamma, beta, y, mean, var, C, N, train]() mutable {
    auto gy = y.grad();
    auto xs = xc.data();
    auto gam = gamma.data();
    bool nx = xc.needs_grad();
    auto gx = nx ? xc.grad() : std::span<double>{};
    auto gg = gamma.needs_grad() ? gamma.grad() : std::span<double>{};
    auto gb = beta.needs_grad() ? beta.grad() : std::span<double>{};
    for (int c = 0; c < C; ++c) {
      double inv = 1.0 / std::sqrt(var[c] + kBnEps);
      const double* xb = &xs[static_cast<size_t>(c) * N];
      const double* gyb = &gy[static_cast<size_t>(c) * N];
      double sum_gy = 0.0, sum_gy_xhat = 0.0;
      for (int64_t i = 0; i < N; ++i) {
        sum_gy += gyb[i];
        sum_gy_xhat += gyb[i] * (xb[i] - mean[c]) * inv;
      }
      if (!gg.empty()) gg[c] += sum_gy_xhat;
      if (!gb.empty()) gb[c] += sum_gy;
      if (nx) {
        double* gxb = &gx[static_cast<size_t>(c) * N];
        if (train) {
          // d/dx of normalization with the sample's own mean/var.
          double nd = static_cast<double>(N);
          for (int64_t i = 0; i < N; ++i) {
            double xhat = (xb[i] - mean[c]) * inv;
            gxb[i] += gam[c] * inv / nd * (nd * gyb[i] - sum_gy - xhat * sum_gy_xhat);
          }
        } else {
          for (int64_t i = 0; i < N; ++i) gxb[i] += gam[c] * inv * gyb[i];
        }
      }
    }
  });
}

/// Max-pool along the feature axis, window = stride = p; floor division drops
/// a trailing remainder. Ties keep the first index (scan order).
Tensor maxpool_f(Graph& g, const Tensor& x, int pool) {
  int C = x.extent(0), F = x.extent(1), T = x.extent(2);
  int Fo = F / pool;
  if (Fo < 1)
    throw std::invalid_argument("maxpool: feature extent " + std::to_string(F) +
                                " smaller than pool " + std::to_string(pool));
  Tensor y = Tensor::zeros({C, Fo, T});
  std::vector<int64_t> arg(static_cast<size_t>(C) * Fo * T);
  {
    auto xs = x.data();
    auto ys = y.data();
    for (int c = 0; c < C; ++c)
      for (int fo = 0; fo < Fo; ++fo)
        for (int t = 0; t < T; ++t) {
          int64_t best = (static_cast<size_t>(c) * F + static_cast<size_t>(fo) * pool) * T + t;
          double bv = xs[best];
          for (int k = 1; k < pool; ++k) {
            int64_t idx = (static_cast<size_t>(c) * F + static_cast<size_t>(fo) * pool + k) * T + t;
            if (xs[idx] > bv) {
              bv = xs[idx];
              best = idx;
            }
          }
          int64_t oi = (static_cast<size_t>(c) * Fo + fo) * T + t;
          ys[oi] = bv;
          arg[oi] = best;
        }
  }
  Tensor xc = x;
  return g.make_op("maxpool_f", {x}, y, [xc, y, arg]() mutable {
    if (!xc.needs_grad()) return;
    auto gx = xc.grad();
    auto gy = y.grad();
    for (size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += gy[i];
  });
}

/// C x F x T -> T x (C*F): row t collects every channel/feature at time t.
Tensor time_major(Graph& g, const Tensor& x) {
  int C = x.extent(0), F = x.extent(1), T = x.extent(2);
  Tensor y = Tensor::zeros({T, C * F});
  {
    auto xs = x.data();
    auto ys = y.data();
    for (int c = 0; c < C; ++c)
      for (int f = 0; f < F; ++f)
        for (int t = 0; t < T; ++t)
          ys[static_cast<size_t>(t) * C * F + static_cast<size_t>(c) * F + f] =
              xs[(static_cast<size_t>(c) * F + f) * T + t];
  }
  Tensor xc = x;
  return g.make_op("time_major", {x}, y, [xc, y, C, F, T]() mutable {
    if (!xc.needs_grad()) return;
    auto gx = xc.grad();
    auto gy = y.grad();
    for (int c = 0; c < C; ++c)
      for (int f = 0; f < F; ++f)
        for (int t = 0; t < T; ++t)
          gx[(static_cast<size_t>(c) * F + f) * T + t] +=
              gy[static_cast<size_t>(t) * C * F + static_cast<size_t>(c) * F + f];
  });
}


Tensor conv_block(Graph& g, const Tensor& x, ConvBlockParams& p, const ModelConfig& cfg,
                  RunMode mode) {
  Tensor y = conv2d_f(g, x, p.kernel);
  y = batchnorm(g, y, p, mode);
  y = g.relu(y);
  return maxpool_f(g, y, cfg.pool_f);
}

// ---------------------------------------------------------------------------
// BiLSTM
// ---------------------------------------------------------------------------

namespace {

Tensor lstm_direction(Graph& g, const Tensor& x, const LstmCellParams& p, int hidden,
                      bool reverse) {
  int m = x.extent(0);
  // Input projections batched over the whole sequence.
  Tensor xi = g.matmul(x, p.w_i), xf = g.matmul(x, p.w_f);
  Tensor xg = g.matmul(x, p.w_g), xo = g.matmul(x, p.w_o);
  Tensor h = Tensor::zeros({1, hidden});
  Tensor c = Tensor::zeros({1, hidden});
  std::vector<Tensor> outs(m);
  for (int step = 0; step < m; ++step) {
    int t = reverse ? m - 1 - step : step;
    Tensor ig = g.sigmoid(g.add(g.add(g.row(xi, t), g.matmul(h, p.u_i)), p.b_i));
    Tensor fg = g.sigmoid(g.add(g.add(g.row(xf, t), g.matmul(h, p.u_f)), p.b_f));
    Tensor cand = g.tanh(g.add(g.add(g.row(xg, t), g.matmul(h, p.u_g)), p.b_g));
    Tensor og = g.sigmoid(g.add(g.add(g.row(xo, t), g.matmul(h, p.u_o)), p.b_o));
    c = g.add(g.mul(fg, c), g.mul(ig, cand));
    h = g.mul(og, g.tanh(c));
    outs[t] = h;
  }
  return g.concat_rows(outs);
}

}  // namespace

Tensor bilstm(Graph& g, const Tensor& x, const BiLstmParams& p, int hidden) {
  Tensor f = lstm_direction(g, x, p.fwd, hidden, false);
  Tensor b = lstm_direction(g, x, p.bwd, hidden, true);
  return g.concat_cols({f, b});
}

// ---------------------------------------------------------------------------
// Full forward
// ---------------------------------------------------------------------------

Tensor model_forward(Graph& g, const Segment& seg, const ModelConfig& cfg, ModelParams& params,
                     RunMode mode, AttentionTrace* trace) {
  if (seg.frames.rank() != 2 || seg.frames.extent(0) != cfg.seg_len ||
      seg.frames.extent(1) != cfg.n_mfcc)
    throw std::invalid_argument("model input: segment " + shape_str(seg.frames.shape()) +
                                " does not match " + std::to_string(cfg.seg_len) + "x" +
                                std::to_string(cfg.n_mfcc));
  int valid = seg.valid > 0 ? seg.valid : cfg.seg_len;

  // m x n_mfcc -> 1 x n_mfcc x m (channels, features, time)
  Tensor x = g.reshape(g.transpose(seg.frames), {1, cfg.n_mfcc, cfg.seg_len});
  x = conv_block(g, x, params.conv1, cfg, mode);
  x = conv_block(g, x, params.conv2, cfg, mode);
  x = time_major(g, x);  // m x lstm_in

  x = bilstm(g, x, params.lstm1, cfg.lstm_hidden);
  x = bilstm(g, x, params.lstm2, cfg.lstm_hidden);

  x = mhsa_forward(g, x, cfg.attention(), params.attn, valid, trace);

  Tensor pooled = g.mean_axis(valid == cfg.seg_len ? x : g.rows(x, 0, valid), 0);  // 1 x d_m
  Tensor h1 = g.relu(g.add(g.matmul(pooled, params.fc1.w), params.fc1.b));
  return g.add(g.matmul(h1, params.fc2.w), params.fc2.b);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& dir, const ModelConfig& cfg,
                     ModelParams& params, int epoch, const std::string& extra_json) {
  std::filesystem::create_directories(dir / "params");
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["config"] = nlohmann::json::parse(model_config_to_json(cfg));
  manifest["epoch"] = epoch;
  manifest["extra"] =
      extra_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(extra_json);
  auto names = nlohmann::json::array();
  params.visit([&](const std::string& name, Tensor& t) {
    names.push_back(name);
    save_tensor(dir / "params" / (name + ".tnsr"), t);
  });
  manifest["params"] = names;
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error((dir / "manifest.json").string() + ": cannot open");
  out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error((dir / "manifest.json").string() + ": cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json manifest = nlohmann::json::parse(ss.str());
  Checkpoint ck;
  ck.cfg = model_config_from_json(manifest.at("config").dump());
  ck.epoch = manifest.value("epoch", 0);
  ck.extra_json = manifest.value("extra", nlohmann::json::object()).dump();
  ck.params = init_params(ck.cfg);
  ck.params.visit([&](const std::string& name, Tensor& t) {
    auto path = dir / "params" / (name + ".tnsr");
    Tensor loaded = load_tensor(path);
    if (loaded.shape() != t.shape())
      throw std::runtime_error(path.string() + ": shape " + shape_str(loaded.shape()) +
                               " does not match expected " + shape_str(t.shape()));
    t.copy_from(loaded);
  });
  return ck;
}

}  // namespace ampattn
