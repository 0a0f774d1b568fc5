#include "csteer/model.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>

#include "csteer/errors.hpp"
#include "csteer/rng.hpp"

namespace csteer {

namespace {

constexpr double kRmsEps = 1e-6;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) {
  double u = kGeluC * (x + kGeluA * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
  double u = kGeluC * (x + kGeluA * x * x * x);
  double t = std::tanh(u);
  double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

void matvec(const double* w, const double* x, double* y, int n_out, int n_in) {
  for (int o = 0; o < n_out; ++o) {
    const double* row = w + static_cast<std::size_t>(o) * n_in;
    double acc = 0.0;
    for (int i = 0; i < n_in; ++i) {
      acc += row[i] * x[i];
    }
    y[o] = acc;
  }
}

// dx += W^T dy
void matvec_t_acc(const double* w, const double* dy, double* dx, int n_out, int n_in) {
  for (int o = 0; o < n_out; ++o) {
    const double g = dy[o];
    if (g == 0.0) continue;
    const double* row = w + static_cast<std::size_t>(o) * n_in;
    for (int i = 0; i < n_in; ++i) {
      dx[i] += row[i] * g;
    }
  }
}

// dW += dy (outer) x
void outer_acc(const double* dy, const double* x, double* dw, int n_out, int n_in) {
  for (int o = 0; o < n_out; ++o) {
    const double g = dy[o];
    if (g == 0.0) continue;
    double* row = dw + static_cast<std::size_t>(o) * n_in;
    for (int i = 0; i < n_in; ++i) {
      row[i] += g * x[i];
    }
  }
}

double inv_rms(const double* x, int d) {
  double ms = 0.0;
  for (int i = 0; i < d; ++i) {
    ms += x[i] * x[i];
  }
  return 1.0 / std::sqrt(ms / d + kRmsEps);
}

// y = x * s; given dy and s, accumulate dx.
void rmsnorm_backward(const double* x, double s, const double* dy, double* dx, int d) {
  double dot = 0.0;
  for (int i = 0; i < d; ++i) {
    dot += x[i] * dy[i];
  }
  const double k = s * s * s * dot / d;
  for (int i = 0; i < d; ++i) {
    dx[i] += s * dy[i] - k * x[i];
  }
}

}  // namespace

ToyModel::ToyModel(const ToyModelConfig& cfg) : cfg_(cfg) {
  if (cfg.d_model <= 0 || cfg.d_model > 256 || cfg.d_model % cfg.n_heads != 0 ||
      cfg.context <= 0 || cfg.context > 256 || cfg.vocab_size <= 0) {
    throw Error(ErrorCode::config_invalid, "toy model shape out of supported range");
  }
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto v = static_cast<std::size_t>(cfg.vocab_size);
  std::size_t cursor = 0;
  off_.wte = cursor;
  cursor += v * d;
  off_.wpos = cursor;
  cursor += static_cast<std::size_t>(cfg.context) * d;
  off_.wout = cursor;
  cursor += v * d;
  off_.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& L : off_.layers) {
    L.wq = cursor;
    cursor += d * d;
    L.wk = cursor;
    cursor += d * d;
    L.wv = cursor;
    cursor += d * d;
    L.wo = cursor;
    cursor += d * d;
    L.w1 = cursor;
    cursor += 4 * d * d;
    L.w2 = cursor;
    cursor += d * 4 * d;
  }
  off_.total = cursor;

  params_.assign(off_.total, 0.0);
  Rng rng(cfg.init_seed);
  for (double& p : params_) {
    p = rng.gauss() * cfg.init_std;
  }
}

std::span<const double> ToyModel::embedding_row(TokenId id) const {
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  return {params_.data() + off_.wte + static_cast<std::size_t>(id) * d, d};
}

void ToyModel::attention(int layer, int t, const double* q_t, const double* k_all,
                         const double* v_all, double* probs_row, double* cat_t) const {
  const int d = cfg_.d_model;
  const int heads = cfg_.n_heads;
  const int hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  (void)layer;

  for (int h = 0; h < heads; ++h) {
    const int hs = h * hd;
    double* p = probs_row + static_cast<std::size_t>(h) * (t + 1);
    double max_s = -1e300;
    for (int j = 0; j <= t; ++j) {
      const double* k_j = k_all + static_cast<std::size_t>(j) * d + hs;
      double dot = 0.0;
      for (int i = 0; i < hd; ++i) {
        dot += q_t[hs + i] * k_j[i];
      }
      p[j] = dot * scale;
      max_s = std::max(max_s, p[j]);
    }
    double sum = 0.0;
    for (int j = 0; j <= t; ++j) {
      p[j] = std::exp(p[j] - max_s);
      sum += p[j];
    }
    const double inv = 1.0 / sum;
    for (int j = 0; j <= t; ++j) {
      p[j] *= inv;
    }
    for (int i = 0; i < hd; ++i) {
      double acc = 0.0;
      for (int j = 0; j <= t; ++j) {
        acc += p[j] * v_all[static_cast<std::size_t>(j) * d + hs + i];
      }
      cat_t[hs + i] = acc;
    }
  }
}

void ToyModel::block_forward(int layer, int n, const double* x_in,
                             Activations::Layer& L) const {
  const int d = cfg_.d_model;
  const int heads = cfg_.n_heads;
  const auto nd = static_cast<std::size_t>(n) * d;
  const double* wq = params_.data() + off_.layers[layer].wq;
  const double* wk = params_.data() + off_.layers[layer].wk;
  const double* wv = params_.data() + off_.layers[layer].wv;
  const double* wo = params_.data() + off_.layers[layer].wo;
  const double* w1 = params_.data() + off_.layers[layer].w1;

  L.x_in.assign(x_in, x_in + nd);
  L.inv_rms1.resize(static_cast<std::size_t>(n));
  L.a.resize(nd);
  L.q.resize(nd);
  L.k.resize(nd);
  L.v.resize(nd);
  L.probs.assign(static_cast<std::size_t>(n) * heads * n, 0.0);
  L.attn_cat.resize(nd);
  L.x_mid.resize(nd);
  L.inv_rms2.resize(static_cast<std::size_t>(n));
  L.b.resize(nd);
  L.h1.resize(nd * 4);
  L.hg.resize(nd * 4);

  for (int t = 0; t < n; ++t) {
    const double* xt = x_in + static_cast<std::size_t>(t) * d;
    double* at = L.a.data() + static_cast<std::size_t>(t) * d;
    const double s = inv_rms(xt, d);
    L.inv_rms1[static_cast<std::size_t>(t)] = s;
    for (int i = 0; i < d; ++i) {
      at[i] = xt[i] * s;
    }
    matvec(wq, at, L.q.data() + static_cast<std::size_t>(t) * d, d, d);
    matvec(wk, at, L.k.data() + static_cast<std::size_t>(t) * d, d, d);
    matvec(wv, at, L.v.data() + static_cast<std::size_t>(t) * d, d, d);

    // causal attention over positions 0..t; probs stored per head with
    // row stride (t+1) packed into the n-wide slot
    double* probs_row = L.probs.data() + (static_cast<std::size_t>(t) * heads) * n;
    attention(layer, t, L.q.data() + static_cast<std::size_t>(t) * d, L.k.data(),
              L.v.data(), probs_row, L.attn_cat.data() + static_cast<std::size_t>(t) * d);

    double* xm = L.x_mid.data() + static_cast<std::size_t>(t) * d;
    double attn_out[512];
    matvec(wo, L.attn_cat.data() + static_cast<std::size_t>(t) * d, attn_out, d, d);
    for (int i = 0; i < d; ++i) {
      xm[i] = xt[i] + attn_out[i];
    }

    double* bt = L.b.data() + static_cast<std::size_t>(t) * d;
    const double s2 = inv_rms(xm, d);
    L.inv_rms2[static_cast<std::size_t>(t)] = s2;
    for (int i = 0; i < d; ++i) {
      bt[i] = xm[i] * s2;
    }
    double* h1t = L.h1.data() + static_cast<std::size_t>(t) * 4 * d;
    double* hgt = L.hg.data() + static_cast<std::size_t>(t) * 4 * d;
    matvec(w1, bt, h1t, 4 * d, d);
    for (int i = 0; i < 4 * d; ++i) {
      hgt[i] = gelu(h1t[i]);
    }
  }
}

void ToyModel::forward(std::span<const TokenId> ids, Activations& acts,
                       std::span<const int> logit_positions,
                       const EmbeddingNudge* nudge) const {
  const int n = static_cast<int>(ids.size());
  const int d = cfg_.d_model;
  const int v = cfg_.vocab_size;
  assert(n >= 1 && n <= cfg_.context);

  acts.n = n;
  acts.ids.assign(ids.begin(), ids.end());
  const auto nd = static_cast<std::size_t>(n) * d;
  acts.x0.resize(nd);
  for (int t = 0; t < n; ++t) {
    const double* te = params_.data() + off_.wte + static_cast<std::size_t>(ids[t]) * d;
    const double* pe = params_.data() + off_.wpos + static_cast<std::size_t>(t) * d;
    double* x = acts.x0.data() + static_cast<std::size_t>(t) * d;
    for (int i = 0; i < d; ++i) {
      x[i] = te[i] + pe[i];
    }
  }
  if (nudge) {
    acts.x0[static_cast<std::size_t>(nudge->position) * d +
            static_cast<std::size_t>(nudge->dim)] += nudge->delta;
  }

  acts.layers.resize(static_cast<std::size_t>(cfg_.n_layers));
  const double* x_cur = acts.x0.data();
  std::vector<double> x_next(nd);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    auto& L = acts.layers[static_cast<std::size_t>(l)];
    block_forward(l, n, x_cur, L);
    const double* w2 = params_.data() + off_.layers[l].w2;
    for (int t = 0; t < n; ++t) {
      double mlp_out[512];
      matvec(w2, L.hg.data() + static_cast<std::size_t>(t) * 4 * d, mlp_out, d, d * 4);
      const double* xm = L.x_mid.data() + static_cast<std::size_t>(t) * d;
      double* xn = x_next.data() + static_cast<std::size_t>(t) * d;
      for (int i = 0; i < d; ++i) {
        xn[i] = xm[i] + mlp_out[i];
      }
    }
    x_cur = x_next.data();
    if (l + 1 == cfg_.n_layers) {
      acts.x_final = x_next;
    }
  }

  acts.inv_rmsf.resize(static_cast<std::size_t>(n));
  acts.f.resize(nd);
  for (int t = 0; t < n; ++t) {
    const double* xt = acts.x_final.data() + static_cast<std::size_t>(t) * d;
    double* ft = acts.f.data() + static_cast<std::size_t>(t) * d;
    const double s = inv_rms(xt, d);
    acts.inv_rmsf[static_cast<std::size_t>(t)] = s;
    for (int i = 0; i < d; ++i) {
      ft[i] = xt[i] * s;
    }
  }

  acts.logits.assign(static_cast<std::size_t>(n) * v, 0.0);
  const double* wout = params_.data() + off_.wout;
  auto fill_row = [&](int t) {
    matvec(wout, acts.f.data() + static_cast<std::size_t>(t) * d,
           acts.logits.data() + static_cast<std::size_t>(t) * v, v, d);
  };
  if (logit_positions.empty()) {
    for (int t = 0; t < n; ++t) {
      fill_row(t);
    }
  } else {
    for (int t : logit_positions) {
      assert(t >= 0 && t < n);
      fill_row(t);
    }
  }
}

void ToyModel::backward(const Activations& acts,
                        const std::vector<std::pair<int, std::vector<double>>>& dlogits,
                        std::vector<double>* input_grads,
                        std::vector<double>* param_grads) const {
  const int n = acts.n;
  const int d = cfg_.d_model;
  const int v = cfg_.vocab_size;
  const int heads = cfg_.n_heads;
  const int hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const auto nd = static_cast<std::size_t>(n) * d;

  const double* wout = params_.data() + off_.wout;
  std::vector<double> df(nd, 0.0);
  for (const auto& [pos, dvec] : dlogits) {
    assert(pos >= 0 && pos < n && static_cast<int>(dvec.size()) == v);
    matvec_t_acc(wout, dvec.data(), df.data() + static_cast<std::size_t>(pos) * d, v, d);
    if (param_grads) {
      outer_acc(dvec.data(), acts.f.data() + static_cast<std::size_t>(pos) * d,
                param_grads->data() + off_.wout, v, d);
    }
  }

  // final norm
  std::vector<double> dx(nd, 0.0);
  for (int t = 0; t < n; ++t) {
    rmsnorm_backward(acts.x_final.data() + static_cast<std::size_t>(t) * d,
                     acts.inv_rmsf[static_cast<std::size_t>(t)],
                     df.data() + static_cast<std::size_t>(t) * d,
                     dx.data() + static_cast<std::size_t>(t) * d, d);
  }

  std::vector<double> da(nd), db(nd), dq(nd), dk(nd), dv(nd), dcat(nd), dxmid(nd);
  std::vector<double> dh1(nd * 4);
  for (int l = cfg_.n_layers - 1; l >= 0; --l) {
    const auto& L = acts.layers[static_cast<std::size_t>(l)];
    const double* wq = params_.data() + off_.layers[l].wq;
    const double* wk = params_.data() + off_.layers[l].wk;
    const double* wv = params_.data() + off_.layers[l].wv;
    const double* wo = params_.data() + off_.layers[l].wo;
    const double* w1 = params_.data() + off_.layers[l].w1;
    const double* w2 = params_.data() + off_.layers[l].w2;

    std::fill(da.begin(), da.end(), 0.0);
    std::fill(db.begin(), db.end(), 0.0);
    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    std::fill(dcat.begin(), dcat.end(), 0.0);
    std::fill(dxmid.begin(), dxmid.end(), 0.0);
    std::fill(dh1.begin(), dh1.end(), 0.0);

    // x_out = x_mid + W2 gelu(W1 b); dx holds d x_out
    for (int t = 0; t < n; ++t) {
      const double* dxt = dx.data() + static_cast<std::size_t>(t) * d;
      double* dxm = dxmid.data() + static_cast<std::size_t>(t) * d;
      std::memcpy(dxm, dxt, sizeof(double) * static_cast<std::size_t>(d));

      double dhg[1024];
      std::fill(dhg, dhg + 4 * d, 0.0);
      matvec_t_acc(w2, dxt, dhg, d, 4 * d);
      if (param_grads) {
        outer_acc(dxt, L.hg.data() + static_cast<std::size_t>(t) * 4 * d,
                  param_grads->data() + off_.layers[l].w2, d, 4 * d);
      }
      double* dh1t = dh1.data() + static_cast<std::size_t>(t) * 4 * d;
      const double* h1t = L.h1.data() + static_cast<std::size_t>(t) * 4 * d;
      for (int i = 0; i < 4 * d; ++i) {
        dh1t[i] = dhg[i] * gelu_grad(h1t[i]);
      }
      matvec_t_acc(w1, dh1t, db.data() + static_cast<std::size_t>(t) * d, 4 * d, d);
      if (param_grads) {
        outer_acc(dh1t, L.b.data() + static_cast<std::size_t>(t) * d,
                  param_grads->data() + off_.layers[l].w1, 4 * d, d);
      }
      rmsnorm_backward(L.x_mid.data() + static_cast<std::size_t>(t) * d,
                       L.inv_rms2[static_cast<std::size_t>(t)],
                       db.data() + static_cast<std::size_t>(t) * d, dxm, d);
    }

    // x_mid = x_in + Wo cat; dxmid now holds d x_mid
    for (int t = 0; t < n; ++t) {
      const double* dxm = dxmid.data() + static_cast<std::size_t>(t) * d;
      matvec_t_acc(wo, dxm, dcat.data() + static_cast<std::size_t>(t) * d, d, d);
      if (param_grads) {
        outer_acc(dxm, L.attn_cat.data() + static_cast<std::size_t>(t) * d,
                  param_grads->data() + off_.layers[l].wo, d, d);
      }
    }

    // attention backward
    for (int t = 0; t < n; ++t) {
      const double* dcat_t = dcat.data() + static_cast<std::size_t>(t) * d;
      const double* probs_row = L.probs.data() + (static_cast<std::size_t>(t) * heads) * n;
      double* dq_t = dq.data() + static_cast<std::size_t>(t) * d;
      for (int h = 0; h < heads; ++h) {
        const int hs = h * hd;
        const double* p = probs_row + static_cast<std::size_t>(h) * (t + 1);
        double dp[256];
        for (int j = 0; j <= t; ++j) {
          const double* v_j = L.v.data() + static_cast<std::size_t>(j) * d + hs;
          double acc = 0.0;
          for (int i = 0; i < hd; ++i) {
            acc += dcat_t[hs + i] * v_j[i];
          }
          dp[j] = acc;
          double* dv_j = dv.data() + static_cast<std::size_t>(j) * d + hs;
          for (int i = 0; i < hd; ++i) {
            dv_j[i] += p[j] * dcat_t[hs + i];
          }
        }
        double dot = 0.0;
        for (int j = 0; j <= t; ++j) {
          dot += dp[j] * p[j];
        }
        for (int j = 0; j <= t; ++j) {
          const double ds = p[j] * (dp[j] - dot) * scale;
          const double* k_j = L.k.data() + static_cast<std::size_t>(j) * d + hs;
          const double* q_t = L.q.data() + static_cast<std::size_t>(t) * d + hs;
          double* dk_j = dk.data() + static_cast<std::size_t>(j) * d + hs;
          for (int i = 0; i < hd; ++i) {
            dq_t[hs + i] += ds * k_j[i];
            dk_j[i] += ds * q_t[i];
          }
        }
      }
    }

    // q/k/v projections and first norm
    for (int t = 0; t < n; ++t) {
      const std::size_t td = static_cast<std::size_t>(t) * d;
      matvec_t_acc(wq, dq.data() + td, da.data() + td, d, d);
      matvec_t_acc(wk, dk.data() + td, da.data() + td, d, d);
      matvec_t_acc(wv, dv.data() + td, da.data() + td, d, d);
      if (param_grads) {
        outer_acc(dq.data() + td, L.a.data() + td, param_grads->data() + off_.layers[l].wq, d, d);
        outer_acc(dk.data() + td, L.a.data() + td, param_grads->data() + off_.layers[l].wk, d, d);
        outer_acc(dv.data() + td, L.a.data() + td, param_grads->data() + off_.layers[l].wv, d, d);
      }
    }

    // d x_in = d x_mid (residual) + rms1 backward of da
    for (int t = 0; t < n; ++t) {
      const std::size_t td = static_cast<std::size_t>(t) * d;
      double* dxi = dx.data() + td;
      std::memcpy(dxi, dxmid.data() + td, sizeof(double) * static_cast<std::size_t>(d));
      rmsnorm_backward(L.x_in.data() + td, L.inv_rms1[static_cast<std::size_t>(t)],
                       da.data() + td, dxi, d);
    }
  }

  if (input_grads) {
    *input_grads = dx;
  }
  if (param_grads) {
    for (int t = 0; t < n; ++t) {
      const std::size_t td = static_cast<std::size_t>(t) * d;
      double* wte_row = param_grads->data() + off_.wte +
                        static_cast<std::size_t>(acts.ids[static_cast<std::size_t>(t)]) * d;
      double* wpos_row = param_grads->data() + off_.wpos + static_cast<std::size_t>(t) * d;
      for (int i = 0; i < d; ++i) {
        wte_row[i] += dx[td + static_cast<std::size_t>(i)];
        wpos_row[i] += dx[td + static_cast<std::size_t>(i)];
      }
    }
  }
}

ToyModel::DecodeState ToyModel::make_state() const {
  DecodeState st;
  st.k_cache.resize(static_cast<std::size_t>(cfg_.n_layers));
  st.v_cache.resize(static_cast<std::size_t>(cfg_.n_layers));
  return st;
}

std::vector<double> ToyModel::step(TokenId id, DecodeState& state) const {
  const int d = cfg_.d_model;
  const int v = cfg_.vocab_size;
  const int heads = cfg_.n_heads;
  const int t = state.n;
  if (t >= cfg_.context) {
    throw Error(ErrorCode::context_overflow, "decode state exceeded the context window");
  }

  std::vector<double> x(static_cast<std::size_t>(d));
  {
    const double* te = params_.data() + off_.wte + static_cast<std::size_t>(id) * d;
    const double* pe = params_.data() + off_.wpos + static_cast<std::size_t>(t) * d;
    for (int i = 0; i < d; ++i) {
      x[static_cast<std::size_t>(i)] = te[i] + pe[i];
    }
  }

  std::vector<double> a(static_cast<std::size_t>(d)), cat(static_cast<std::size_t>(d));
  std::vector<double> probs(static_cast<std::size_t>(heads) * (t + 1));
  std::vector<double> h1(static_cast<std::size_t>(4 * d)), hg(static_cast<std::size_t>(4 * d));
  double tmp[512];
  for (int l = 0; l < cfg_.n_layers; ++l) {
    auto& kc = state.k_cache[static_cast<std::size_t>(l)];
    auto& vc = state.v_cache[static_cast<std::size_t>(l)];
    kc.resize(static_cast<std::size_t>(t + 1) * d);
    vc.resize(static_cast<std::size_t>(t + 1) * d);

    const double s = inv_rms(x.data(), d);
    for (int i = 0; i < d; ++i) {
      a[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] * s;
    }
    double q[512];
    matvec(params_.data() + off_.layers[l].wq, a.data(), q, d, d);
    matvec(params_.data() + off_.layers[l].wk, a.data(),
           kc.data() + static_cast<std::size_t>(t) * d, d, d);
    matvec(params_.data() + off_.layers[l].wv, a.data(),
           vc.data() + static_cast<std::size_t>(t) * d, d, d);

    attention(l, t, q, kc.data(), vc.data(), probs.data(), cat.data());

    matvec(params_.data() + off_.layers[l].wo, cat.data(), tmp, d, d);
    for (int i = 0; i < d; ++i) {
      x[static_cast<std::size_t>(i)] += tmp[i];
    }

    const double s2 = inv_rms(x.data(), d);
    for (int i = 0; i < d; ++i) {
      a[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] * s2;
    }
    matvec(params_.data() + off_.layers[l].w1, a.data(), h1.data(), 4 * d, d);
    for (int i = 0; i < 4 * d; ++i) {
      hg[static_cast<std::size_t>(i)] = gelu(h1[static_cast<std::size_t>(i)]);
    }
    matvec(params_.data() + off_.layers[l].w2, hg.data(), tmp, d, 4 * d);
    for (int i = 0; i < d; ++i) {
      x[static_cast<std::size_t>(i)] += tmp[i];
    }
  }

  const double s = inv_rms(x.data(), d);
  for (int i = 0; i < d; ++i) {
    a[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] * s;
  }
  std::vector<double> logits(static_cast<std::size_t>(v));
  matvec(params_.data() + off_.wout, a.data(), logits.data(), v, d);

  state.n = t + 1;
  return logits;
}

std::vector<double> ToyModel::hidden_state(std::span<const TokenId> ids, int layer) const {
  if (layer < 0 || layer > cfg_.n_layers) {
    throw Error(ErrorCode::probe_unsupported,
                "layer index out of range for the toy model");
  }
  Activations acts;
  const int last = static_cast<int>(ids.size()) - 1;
  forward(ids, acts, std::span<const int>(&last, 1));
  const auto d = static_cast<std::size_t>(cfg_.d_model);
  const double* src = nullptr;
  if (layer == 0) {
    src = acts.x0.data();
  } else if (layer == cfg_.n_layers) {
    src = acts.x_final.data();
  } else {
    src = acts.layers[static_cast<std::size_t>(layer)].x_in.data();
  }
  const std::size_t td = static_cast<std::size_t>(last) * d;
  return {src + td, src + td + d};
}

ToyModel train_toy_model_impl(const ToyModelConfig& model_cfg, const TrainConfig& train_cfg,
                              const std::vector<std::vector<TokenId>>& docs) {
  ToyModel model(model_cfg);
  const std::size_t n_params = model.param_count();
  std::vector<double> m(n_params, 0.0), v2(n_params, 0.0), grads(n_params, 0.0);
  Rng rng(train_cfg.seed);

  const int batch = std::max(1, train_cfg.batch_docs);
  std::vector<std::vector<double>> doc_grads(static_cast<std::size_t>(batch));
  std::vector<double> doc_losses(static_cast<std::size_t>(batch));
  std::vector<int> doc_positions(static_cast<std::size_t>(batch));
  std::vector<std::size_t> picks(static_cast<std::size_t>(batch));

  for (int step = 0; step < train_cfg.steps; ++step) {
    for (int b = 0; b < batch; ++b) {
      picks[static_cast<std::size_t>(b)] = rng.below(docs.size());
    }

    parallel_for(static_cast<std::size_t>(batch), train_cfg.policy, [&](std::size_t b) {
      const auto& ids = docs[picks[b]];
      const int n = std::min(static_cast<int>(ids.size()) - 1, model_cfg.context);
      std::span<const TokenId> inputs(ids.data(), static_cast<std::size_t>(n));

      ToyModel::Activations acts;
      model.forward(inputs, acts);

      std::vector<std::pair<int, std::vector<double>>> dlogits;
      dlogits.reserve(static_cast<std::size_t>(n));
      double loss = 0.0;
      const int vsz = model_cfg.vocab_size;
      for (int t = 0; t < n; ++t) {
        const double* row = acts.logits.data() + static_cast<std::size_t>(t) * vsz;
        double mx = row[0];
        for (int k = 1; k < vsz; ++k) {
          mx = std::max(mx, row[k]);
        }
        double sum = 0.0;
        std::vector<double> dl(static_cast<std::size_t>(vsz));
        for (int k = 0; k < vsz; ++k) {
          dl[static_cast<std::size_t>(k)] = std::exp(row[k] - mx);
          sum += dl[static_cast<std::size_t>(k)];
        }
        const double inv = 1.0 / sum;
        const TokenId target = ids[static_cast<std::size_t>(t) + 1];
        for (int k = 0; k < vsz; ++k) {
          dl[static_cast<std::size_t>(k)] *= inv;
        }
        loss -= std::log(std::max(dl[static_cast<std::size_t>(target)], 1e-300));
        dl[static_cast<std::size_t>(target)] -= 1.0;
        dlogits.emplace_back(t, std::move(dl));
      }

      doc_grads[b].assign(n_params, 0.0);
      model.backward(acts, dlogits, nullptr, &doc_grads[b]);
      doc_losses[b] = loss;
      doc_positions[b] = n;
    });

    std::fill(grads.begin(), grads.end(), 0.0);
    double loss_sum = 0.0;
    long total_positions = 0;
    for (int b = 0; b < batch; ++b) {  // fixed order keeps training bit-deterministic
      const auto& g = doc_grads[static_cast<std::size_t>(b)];
      for (std::size_t i = 0; i < n_params; ++i) {
        grads[i] += g[i];
      }
      loss_sum += doc_losses[static_cast<std::size_t>(b)];
      total_positions += doc_positions[static_cast<std::size_t>(b)];
    }
    const double inv_pos = 1.0 / static_cast<double>(total_positions);
    const double mean_loss = loss_sum * inv_pos;
    if (!std::isfinite(mean_loss)) {
      throw Error(ErrorCode::training_diverged, "non-finite loss at step " + std::to_string(step));
    }

    double norm_sq = 0.0;
    for (std::size_t i = 0; i < n_params; ++i) {
      grads[i] *= inv_pos;
      norm_sq += grads[i] * grads[i];
    }
    double clip = 1.0;
    const double norm = std::sqrt(norm_sq);
    if (train_cfg.grad_clip > 0.0 && norm > train_cfg.grad_clip) {
      clip = train_cfg.grad_clip / norm;
    }

    const double warm = std::min(1.0, static_cast<double>(step + 1) /
                                          std::max(1, train_cfg.warmup_steps));
    const double decay = 1.0 - 0.9 * static_cast<double>(step) /
                                   static_cast<double>(train_cfg.steps);
    const double lr = train_cfg.lr * warm * decay;
    const double b1t = std::pow(train_cfg.beta1, step + 1);
    const double b2t = std::pow(train_cfg.beta2, step + 1);
    auto& params = model.params();
    for (std::size_t i = 0; i < n_params; ++i) {
      const double g = grads[i] * clip;
      m[i] = train_cfg.beta1 * m[i] + (1.0 - train_cfg.beta1) * g;
      v2[i] = train_cfg.beta2 * v2[i] + (1.0 - train_cfg.beta2) * g * g;
      const double mh = m[i] / (1.0 - b1t);
      const double vh = v2[i] / (1.0 - b2t);
      params[i] -= lr * mh / (std::sqrt(vh) + train_cfg.adam_eps);
    }
  }

  return model;
}

}  // namespace csteer
