#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "spikegate/layer_spec.hpp"
#include "spikegate/params.hpp"
#include "spikegate/random.hpp"

namespace spikegate {

/// State a stateless layer keeps between its forward and backward call.
struct LayerCache {
  bool valid = false;
  Tensor input;
  Tensor aux;                      // dropout mask, batchnorm x_hat, activation output
  std::vector<std::size_t> index;  // maxpool winners
  std::vector<double> stats;       // batchnorm 1/sqrt(var + eps) per channel
};

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;                  // dropout masks
  const Tensor* dropout_mask = nullptr;  // reuse a mask instead of sampling
  const Tensor* max_key = nullptr;       // maxpool picks the window entry with the largest key
};

struct LayerGrads {
  Tensor input_grad;
  std::map<std::string, Tensor> param_grads;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

namespace detail {

inline ShapeError layer_shape_error(const LayerSpec& l, const std::string& expected, const Shape& actual) {
  return ShapeError("layer '" + l.id + "' (" + layer_kind_name(l.kind) + "): expected input " + expected +
                    ", got " + shape_string(actual));
}

inline void require_rank(const LayerSpec& l, const Tensor& x, std::size_t rank, const char* desc) {
  if (x.rank() != rank) throw layer_shape_error(l, desc, x.shape());
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, k, s, p, oh, ow;
};

inline ConvGeometry conv_geometry(const LayerSpec& l, const Shape& in, const Tensor& weight) {
  if (in.size() != 4) throw layer_shape_error(l, "[N,C,H,W]", in);
  const Shape& ws = weight.shape();
  if (ws.size() != 4 || ws[1] != in[1] || ws[0] != l.out_channels || ws[2] != l.kernel || ws[3] != l.kernel) {
    throw layer_shape_error(l, "channels matching weight " + shape_string(ws), in);
  }
  ConvGeometry g{in[0], in[1], in[2], in[3], ws[0], l.kernel, l.stride, l.padding, 0, 0};
  if (g.h + 2 * g.p < g.k || g.w + 2 * g.p < g.k) throw layer_shape_error(l, "spatial >= kernel", in);
  g.oh = (g.h + 2 * g.p - g.k) / g.s + 1;
  g.ow = (g.w + 2 * g.p - g.k) / g.s + 1;
  return g;
}

// Weight [Cout, Cin, K, K] -> [Cin, K, K, Cout] so the inner loops run
// contiguously over output channels.
inline std::vector<double> conv_weight_to_ckkc(const Tensor& w, const ConvGeometry& g) {
  std::vector<double> t(w.size());
  for (std::size_t co = 0; co < g.cout; ++co)
    for (std::size_t ci = 0; ci < g.cin; ++ci)
      for (std::size_t k = 0; k < g.k * g.k; ++k)
        t[(ci * g.k * g.k + k) * g.cout + co] = w[(co * g.cin + ci) * g.k * g.k + k];
  return t;
}

// Tap tables for one geometry. `src[pos * kk + tap]` is the input pixel
// (iy * w + ix) feeding output position `pos` through kernel tap `tap`, or
// -1 in the padding. The inverse lists, per input pixel, the (tap, pos)
// pairs it contributes to.
struct ConvTaps {
  std::vector<std::ptrdiff_t> src;
  std::vector<std::size_t> inv_begin;               // h * w + 1 offsets
  std::vector<std::pair<std::size_t, std::size_t>> inv;  // (tap, pos)
};

inline ConvTaps conv_taps(const ConvGeometry& g) {
  const std::size_t kk = g.k * g.k, npos = g.oh * g.ow, npix = g.h * g.w;
  ConvTaps t;
  t.src.assign(npos * kk, -1);
  std::vector<std::size_t> count(npix, 0);
  for (std::size_t oy = 0; oy < g.oh; ++oy) {
    for (std::size_t ox = 0; ox < g.ow; ++ox) {
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.s + ky) - static_cast<std::ptrdiff_t>(g.p);
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.s + kx) - static_cast<std::ptrdiff_t>(g.p);
          if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
          const auto pix = static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix);
          t.src[(oy * g.ow + ox) * kk + ky * g.k + kx] = static_cast<std::ptrdiff_t>(pix);
          ++count[pix];
        }
      }
    }
  }
  t.inv_begin.assign(npix + 1, 0);
  for (std::size_t i = 0; i < npix; ++i) t.inv_begin[i + 1] = t.inv_begin[i] + count[i];
  t.inv.resize(t.inv_begin[npix]);
  std::vector<std::size_t> fill(t.inv_begin.begin(), t.inv_begin.end() - 1);
  for (std::size_t pos = 0; pos < npos; ++pos) {
    for (std::size_t tap = 0; tap < kk; ++tap) {
      const std::ptrdiff_t pix = t.src[pos * kk + tap];
      if (pix >= 0) t.inv[fill[static_cast<std::size_t>(pix)]++] = {tap, pos};
    }
  }
  return t;
}

// Forward scatters each nonzero input over the outputs it reaches, so the
// cost scales with input activity (spike inputs are mostly zero).
inline Tensor conv_forward(const LayerSpec& l, const Tensor& x, const ParameterSet& params) {
  const Tensor& weight = params.value(l.id + ".weight");
  const ConvGeometry g = conv_geometry(l, x.shape(), weight);
  const std::vector<double> wt = conv_weight_to_ckkc(weight, g);
  const ConvTaps taps = conv_taps(g);
  const Tensor* bias = params.contains(l.id + ".bias") ? &params.value(l.id + ".bias") : nullptr;
  Tensor y({g.n, g.cout, g.oh, g.ow});
  const std::size_t kk = g.k * g.k, npos = g.oh * g.ow, npix = g.h * g.w, cout = g.cout;
  std::vector<double> acc(npos * cout);
  for (std::size_t n = 0; n < g.n; ++n) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const double* xin = x.ptr() + n * g.cin * npix;
    for (std::size_t ci = 0; ci < g.cin; ++ci) {
      for (std::size_t pix = 0; pix < npix; ++pix) {
        const double v = xin[ci * npix + pix];
        if (v == 0.0) continue;
        for (std::size_t e = taps.inv_begin[pix]; e < taps.inv_begin[pix + 1]; ++e) {
          const auto [tap, pos] = taps.inv[e];
          const double* wrow = wt.data() + (ci * kk + tap) * cout;
          double* orow = acc.data() + pos * cout;
          for (std::size_t co = 0; co < cout; ++co) orow[co] += v * wrow[co];
        }
      }
    }
    double* yout = y.ptr() + n * cout * npos;
    for (std::size_t co = 0; co < cout; ++co) {
      const double b = bias ? (*bias)[co] : 0.0;
      for (std::size_t pos = 0; pos < npos; ++pos) yout[co * npos + pos] = acc[pos * cout + co] + b;
    }
  }
  return y;
}

inline LayerGrads conv_backward(const LayerSpec& l, const Tensor& gy, const Tensor& x, const ParameterSet& params,
                                bool want_input_grad) {
  const Tensor& weight = params.value(l.id + ".weight");
  const ConvGeometry g = conv_geometry(l, x.shape(), weight);
  if (gy.shape() != Shape{g.n, g.cout, g.oh, g.ow}) throw layer_shape_error(l, "matching upstream gradient", gy.shape());
  const ConvTaps taps = conv_taps(g);
  const std::size_t kk = g.k * g.k, npos = g.oh * g.ow, npix = g.h * g.w, cout = g.cout, cin = g.cin;
  // Weight as [tap, Cout, Cin] for the input-gradient matvecs.
  std::vector<double> wtci(weight.size());
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t k = 0; k < kk; ++k) wtci[(k * cout + co) * cin + ci] = weight[(co * cin + ci) * kk + k];
  std::vector<double> gw_t(weight.size(), 0.0);  // [Cin, K, K, Cout]
  Tensor gb({cout});
  LayerGrads out;
  if (want_input_grad) out.input_grad = Tensor(x.shape());
  std::vector<double> ghwc(npos * cout);
  std::vector<char> row_nonzero(npos);
  std::vector<double> gin_hwc(want_input_grad ? npix * cin : 0);
  for (std::size_t n = 0; n < g.n; ++n) {
    const double* gsrc = gy.ptr() + n * cout * npos;
    std::fill(row_nonzero.begin(), row_nonzero.end(), 0);
    for (std::size_t co = 0; co < cout; ++co) {
      for (std::size_t pos = 0; pos < npos; ++pos) {
        const double v = gsrc[co * npos + pos];
        ghwc[pos * cout + co] = v;
        gb[co] += v;
        if (v != 0.0) row_nonzero[pos] = 1;
      }
    }
    const double* xin = x.ptr() + n * cin * npix;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t pix = 0; pix < npix; ++pix) {
        const double v = xin[ci * npix + pix];
        if (v == 0.0) continue;
        for (std::size_t e = taps.inv_begin[pix]; e < taps.inv_begin[pix + 1]; ++e) {
          const auto [tap, pos] = taps.inv[e];
          if (!row_nonzero[pos]) continue;
          const double* grow = ghwc.data() + pos * cout;
          double* gwrow = gw_t.data() + (ci * kk + tap) * cout;
          for (std::size_t co = 0; co < cout; ++co) gwrow[co] += v * grow[co];
        }
      }
    }
    if (!want_input_grad) continue;
    std::fill(gin_hwc.begin(), gin_hwc.end(), 0.0);
    for (std::size_t pos = 0; pos < npos; ++pos) {
      if (!row_nonzero[pos]) continue;
      const double* grow = ghwc.data() + pos * cout;
      for (std::size_t tap = 0; tap < kk; ++tap) {
        const std::ptrdiff_t pix = taps.src[pos * kk + tap];
        if (pix < 0) continue;
        double* gin = gin_hwc.data() + static_cast<std::size_t>(pix) * cin;
        const double* wtap = wtci.data() + tap * cout * cin;
        for (std::size_t co = 0; co < cout; ++co) {
          const double gv = grow[co];
          if (gv == 0.0) continue;
          const double* wrow = wtap + co * cin;
          for (std::size_t ci = 0; ci < cin; ++ci) gin[ci] += gv * wrow[ci];
        }
      }
    }
    double* gdst = out.input_grad.ptr() + n * cin * npix;
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t pix = 0; pix < npix; ++pix) gdst[ci * npix + pix] = gin_hwc[pix * cin + ci];
  }
  Tensor gw(weight.shape());
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t k = 0; k < kk; ++k) gw[(co * cin + ci) * kk + k] = gw_t[(ci * kk + k) * cout + co];
  out.param_grads.emplace(l.id + ".weight", std::move(gw));
  if (params.contains(l.id + ".bias")) out.param_grads.emplace(l.id + ".bias", std::move(gb));
  return out;
}

inline std::size_t affine_in_features(const LayerSpec& l, const Tensor& x, const Tensor& weight) {
  if (x.rank() < 2) throw layer_shape_error(l, "[N,...]", x.shape());
  const std::size_t f = x.size() / x.dim(0);
  if (weight.rank() != 2 || weight.dim(1) != f || weight.dim(0) != l.out_features) {
    throw layer_shape_error(l, std::to_string(weight.rank() == 2 ? weight.dim(1) : 0) + " features per sample",
                            x.shape());
  }
  return f;
}

inline Tensor affine_forward(const LayerSpec& l, const Tensor& x, const ParameterSet& params) {
  const Tensor& w = params.value(l.id + ".weight");
  const std::size_t f = affine_in_features(l, x, w);
  const std::size_t n = x.dim(0), o = l.out_features;
  const Tensor* bias = params.contains(l.id + ".bias") ? &params.value(l.id + ".bias") : nullptr;
  Tensor y({n, o});
  for (std::size_t s = 0; s < n; ++s) {
    const double* xs = x.ptr() + s * f;
    for (std::size_t r = 0; r < o; ++r) {
      const double* wr = w.ptr() + r * f;
      double acc = bias ? (*bias)[r] : 0.0;
      for (std::size_t i = 0; i < f; ++i) acc += wr[i] * xs[i];
      y[s * o + r] = acc;
    }
  }
  return y;
}

inline LayerGrads affine_backward(const LayerSpec& l, const Tensor& gy, const Tensor& x, const ParameterSet& params,
                                  bool want_input_grad) {
  const Tensor& w = params.value(l.id + ".weight");
  const std::size_t f = affine_in_features(l, x, w);
  const std::size_t n = x.dim(0), o = l.out_features;
  if (gy.shape() != Shape{n, o}) throw layer_shape_error(l, "matching upstream gradient", gy.shape());
  LayerGrads out;
  Tensor gw(w.shape());
  Tensor gb({o});
  if (want_input_grad) out.input_grad = Tensor(x.shape());
  for (std::size_t s = 0; s < n; ++s) {
    const double* xs = x.ptr() + s * f;
    double* gx = want_input_grad ? out.input_grad.ptr() + s * f : nullptr;
    for (std::size_t r = 0; r < o; ++r) {
      const double g = gy[s * o + r];
      if (g == 0.0) continue;
      gb[r] += g;
      double* gwr = gw.ptr() + r * f;
      const double* wr = w.ptr() + r * f;
      for (std::size_t i = 0; i < f; ++i) gwr[i] += g * xs[i];
      if (gx) {
        for (std::size_t i = 0; i < f; ++i) gx[i] += g * wr[i];
      }
    }
  }
  out.param_grads.emplace(l.id + ".weight", std::move(gw));
  if (params.contains(l.id + ".bias")) out.param_grads.emplace(l.id + ".bias", std::move(gb));
  return out;
}

inline Tensor pool_forward(const LayerSpec& l, const Tensor& x, LayerCache* cache, const Tensor* key = nullptr) {
  require_rank(l, x, 4, "[N,C,H,W]");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const bool global = l.kind == LayerKind::avgpool && l.kernel == 0;
  const std::size_t k = global ? 0 : l.kernel;
  if (!global && (h < k || w < k || l.stride == 0)) throw layer_shape_error(l, "spatial >= kernel", x.shape());
  const std::size_t oh = global ? 1 : (h - k) / l.stride + 1;
  const std::size_t ow = global ? 1 : (w - k) / l.stride + 1;
  Tensor y({n, c, oh, ow});
  const bool is_max = l.kind == LayerKind::maxpool;
  if (key && key->shape() != x.shape()) throw layer_shape_error(l, "pool key shaped like the input", key->shape());
  if (is_max && cache) cache->index.assign(y.size(), 0);
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const double* plane = x.ptr() + nc * h * w;
    const double* kplane = key ? key->ptr() + nc * h * w : plane;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t y0 = global ? 0 : oy * l.stride, x0 = global ? 0 : ox * l.stride;
        const std::size_t kh = global ? h : k, kw = global ? w : k;
        const std::size_t out_i = (nc * oh + oy) * ow + ox;
        if (is_max) {
          std::size_t best = y0 * w + x0;
          for (std::size_t dy = 0; dy < kh; ++dy)
            for (std::size_t dx = 0; dx < kw; ++dx) {
              const std::size_t idx = (y0 + dy) * w + x0 + dx;
              if (kplane[idx] > kplane[best]) best = idx;
            }
          y[out_i] = plane[best];
          if (cache) cache->index[out_i] = nc * h * w + best;
        } else {
          double s = 0.0;
          for (std::size_t dy = 0; dy < kh; ++dy)
            for (std::size_t dx = 0; dx < kw; ++dx) s += plane[(y0 + dy) * w + x0 + dx];
          y[out_i] = s / static_cast<double>(kh * kw);
        }
      }
    }
  }
  return y;
}

inline Tensor pool_backward(const LayerSpec& l, const Tensor& gy, const LayerCache& cache) {
  const Shape& in = cache.input.shape();
  Tensor gx(in);
  if (l.kind == LayerKind::maxpool) {
    if (cache.index.size() != gy.size()) throw layer_shape_error(l, "matching upstream gradient", gy.shape());
    for (std::size_t i = 0; i < gy.size(); ++i) gx[cache.index[i]] += gy[i];
    return gx;
  }
  const std::size_t n = in[0], c = in[1], h = in[2], w = in[3];
  const bool global = l.kernel == 0;
  const std::size_t k = l.kernel;
  const std::size_t oh = global ? 1 : (h - k) / l.stride + 1;
  const std::size_t ow = global ? 1 : (w - k) / l.stride + 1;
  if (gy.shape() != Shape{n, c, oh, ow}) throw layer_shape_error(l, "matching upstream gradient", gy.shape());
  const std::size_t kh = global ? h : k, kw = global ? w : k;
  const double scale = 1.0 / static_cast<double>(kh * kw);
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double g = gy[(nc * oh + oy) * ow + ox] * scale;
        const std::size_t y0 = global ? 0 : oy * l.stride, x0 = global ? 0 : ox * l.stride;
        for (std::size_t dy = 0; dy < kh; ++dy)
          for (std::size_t dx = 0; dx < kw; ++dx) gx[nc * h * w + (y0 + dy) * w + x0 + dx] += g;
      }
  }
  return gx;
}

// Batchnorm views its input as [N, C, S] with S = spatial size (1 for [N,F]).
inline void bn_dims(const LayerSpec& l, const Tensor& x, std::size_t& n, std::size_t& c, std::size_t& s) {
  if (x.rank() != 4 && x.rank() != 2) throw layer_shape_error(l, "[N,C,H,W] or [N,F]", x.shape());
  n = x.dim(0);
  c = x.dim(1);
  s = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
}

inline Tensor batchnorm_forward(const LayerSpec& l, const Tensor& x, ParameterSet& params, LayerCache* cache,
                                bool training) {
  std::size_t n, c, s;
  bn_dims(l, x, n, c, s);
  const Tensor& gamma = params.value(l.id + ".gamma");
  const Tensor& beta = params.value(l.id + ".beta");
  if (gamma.size() != c) throw layer_shape_error(l, std::to_string(gamma.size()) + " channels", x.shape());
  Tensor& run_mean = params.value(l.id + ".running_mean");
  Tensor& run_var = params.value(l.id + ".running_var");
  Tensor y(x.shape());
  Tensor xhat(x.shape());
  std::vector<double> inv_std(c);
  const double count = static_cast<double>(n * s);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean, var;
    if (training) {
      mean = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < s; ++j) mean += x[(i * c + ch) * s + j];
      mean /= count;
      var = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < s; ++j) {
          const double d = x[(i * c + ch) * s + j] - mean;
          var += d * d;
        }
      var /= count;
      run_mean[ch] = (1.0 - kBatchNormMomentum) * run_mean[ch] + kBatchNormMomentum * mean;
      const double unbiased = count > 1 ? var * count / (count - 1.0) : var;
      run_var[ch] = (1.0 - kBatchNormMomentum) * run_var[ch] + kBatchNormMomentum * unbiased;
    } else {
      mean = run_mean[ch];
      var = run_var[ch];
    }
    inv_std[ch] = 1.0 / std::sqrt(var + kBatchNormEps);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < s; ++j) {
        const std::size_t idx = (i * c + ch) * s + j;
        xhat[idx] = (x[idx] - mean) * inv_std[ch];
        y[idx] = gamma[ch] * xhat[idx] + beta[ch];
      }
  }
  if (cache) {
    cache->aux = std::move(xhat);
    cache->stats = std::move(inv_std);
    cache->index.assign(1, training ? 1 : 0);
  }
  return y;
}

inline LayerGrads batchnorm_backward(const LayerSpec& l, const Tensor& gy, const LayerCache& cache,
                                     const ParameterSet& params) {
  std::size_t n, c, s;
  bn_dims(l, cache.input, n, c, s);
  cache.input.require_same_shape(gy, ("batchnorm '" + l.id + "' backward").c_str());
  const Tensor& gamma = params.value(l.id + ".gamma");
  const bool training = !cache.index.empty() && cache.index[0] == 1;
  LayerGrads out;
  out.input_grad = Tensor(gy.shape());
  Tensor gg({c}), gbeta({c});
  const double count = static_cast<double>(n * s);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < s; ++j) {
        const std::size_t idx = (i * c + ch) * s + j;
        sum_g += gy[idx];
        sum_gx += gy[idx] * cache.aux[idx];
      }
    gg[ch] = sum_gx;
    gbeta[ch] = sum_g;
    const double k = gamma[ch] * cache.stats[ch];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < s; ++j) {
        const std::size_t idx = (i * c + ch) * s + j;
        out.input_grad[idx] = training
                                  ? k * (gy[idx] - sum_g / count - cache.aux[idx] * sum_gx / count)
                                  : k * gy[idx];
      }
  }
  out.param_grads.emplace(l.id + ".gamma", std::move(gg));
  out.param_grads.emplace(l.id + ".beta", std::move(gbeta));
  return out;
}

}  // namespace detail

/// Forward pass of one stateless layer over a batch [N, ...].
///
/// Spike and residual layers are stateful/compound and run through the
/// network engine instead. When `cache` is given, everything backward needs
/// is stored in it.
inline Tensor layer_forward(const LayerSpec& l, const Tensor& x, ParameterSet& params, LayerCache* cache = nullptr,
                            const ForwardOptions& opt = {}) {
  if (cache) {
    *cache = LayerCache{};
    cache->valid = true;
    cache->input = x;
  }
  switch (l.kind) {
    case LayerKind::conv:
      return detail::conv_forward(l, x, params);
    case LayerKind::affine:
      return detail::affine_forward(l, x, params);
    case LayerKind::maxpool:
    case LayerKind::avgpool:
      return detail::pool_forward(l, x, cache, opt.max_key);
    case LayerKind::batchnorm:
      return detail::batchnorm_forward(l, x, params, cache, opt.training);
    case LayerKind::relu: {
      Tensor y(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
      return y;
    }
    case LayerKind::sigmoid: {
      Tensor y(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
      if (cache) cache->aux = y;
      return y;
    }
    case LayerKind::dropout: {
      if (!(l.drop_prob >= 0.0 && l.drop_prob < 1.0)) throw ConfigError("dropout '" + l.id + "': bad probability");
      const double keep = 1.0 - l.drop_prob;
      Tensor y(x.shape());
      if (!opt.training) {
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * keep;
        return y;
      }
      Tensor mask;
      if (opt.dropout_mask) {
        opt.dropout_mask->require_same_shape(x, ("dropout '" + l.id + "' mask").c_str());
        mask = *opt.dropout_mask;
      } else {
        if (!opt.rng) throw ConfigError("dropout '" + l.id + "': training mode needs a seeded generator");
        mask = Tensor(x.shape());
        for (double& m : mask.data()) m = opt.rng->bernoulli(keep) ? 1.0 : 0.0;
      }
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * mask[i];
      if (cache) cache->aux = std::move(mask);
      return y;
    }
    case LayerKind::spike:
    case LayerKind::residual:
      throw ConfigError("layer '" + l.id + "' (" + layer_kind_name(l.kind) + ") is not a stateless layer");
  }
  throw ConfigError("unknown layer kind");
}

/// Backward pass matching a cached layer_forward call. Parameter gradients
/// are returned for the caller to accumulate.
inline LayerGrads layer_backward(const LayerSpec& l, const Tensor& gy, const LayerCache& cache,
                                 const ParameterSet& params, bool want_input_grad = true) {
  if (!cache.valid) throw Error("layer '" + l.id + "': backward called without a cached forward pass");
  switch (l.kind) {
    case LayerKind::conv:
      return detail::conv_backward(l, gy, cache.input, params, want_input_grad);
    case LayerKind::affine:
      return detail::affine_backward(l, gy, cache.input, params, want_input_grad);
    case LayerKind::maxpool:
    case LayerKind::avgpool:
      return {detail::pool_backward(l, gy, cache), {}};
    case LayerKind::batchnorm:
      return detail::batchnorm_backward(l, gy, cache, params);
    default:
      break;
  }
  cache.input.require_same_shape(gy, ("layer '" + l.id + "' backward").c_str());
  Tensor gx(gy.shape());
  switch (l.kind) {
    case LayerKind::relu:
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = cache.input[i] > 0.0 ? gy[i] : 0.0;
      break;
    case LayerKind::sigmoid:
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * cache.aux[i] * (1.0 - cache.aux[i]);
      break;
    case LayerKind::dropout:
      if (cache.aux.empty()) {
        const double keep = 1.0 - l.drop_prob;
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * keep;
      } else {
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * cache.aux[i];
      }
      break;
    default:
      throw ConfigError("layer '" + l.id + "' has no stateless backward");
  }
  return {std::move(gx), {}};
}

/// Central-difference gradient of `loss` with respect to every trainable
/// parameter: (loss(p + h) - loss(p - h)) / 2h per scalar.
inline std::map<std::string, Tensor> finite_difference_gradient(const std::function<double(ParameterSet&)>& loss,
                                                                ParameterSet& params, double h) {
  if (!(h > 0.0)) throw ConfigError("finite difference step must be positive");
  std::map<std::string, Tensor> out;
  for (const auto& name : params.trainable_names()) {
    Tensor& p = params.value(name);
    Tensor g(p.shape());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + h;
      const double up = loss(params);
      p[i] = orig - h;
      const double down = loss(params);
      p[i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("finite difference: non-finite loss at " + name + "[" + std::to_string(i) + "]");
      }
      g[i] = (up - down) / (2.0 * h);
    }
    out.emplace(name, std::move(g));
  }
  return out;
}

}  // namespace spikegate
