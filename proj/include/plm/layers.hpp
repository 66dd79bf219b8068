#pragma once

// Layer primitives used by the matching network. All functions operate on
// planar row-major buffers ([C,H,W] activations, [O,C,3,3] conv weights,
// [out,in] FC weights). Backward functions accumulate (+=) into gradient
// buffers so batches can share them; callers zero the buffers per batch.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace plm {

struct LrnConfig {
  int local_size = 5;
  double alpha = 1e-4;
  double beta = 0.75;
  double k = 1.0;
};

// --- 3x3 convolution, zero padding 1, stride 1 (spatial size preserved) ---

template <typename T>
void conv3x3_forward(const T* in, int C, int H, int W, const T* w, const T* b,
                     int O, T* out) {
  for (int o = 0; o < O; ++o) {
    T* out_plane = out + static_cast<std::size_t>(o) * H * W;
    std::fill(out_plane, out_plane + static_cast<std::size_t>(H) * W, b[o]);
    for (int c = 0; c < C; ++c) {
      const T* in_plane = in + static_cast<std::size_t>(c) * H * W;
      for (int ky = 0; ky < 3; ++ky) {
        int dy = ky - 1;
        for (int kx = 0; kx < 3; ++kx) {
          int dx = kx - 1;
          T wv = w[((static_cast<std::size_t>(o) * C + c) * 3 + ky) * 3 + kx];
          if (wv == T(0)) continue;
          int y0 = std::max(0, -dy), y1 = H - std::max(0, dy);
          int x0 = std::max(0, -dx), x1 = W - std::max(0, dx);
          for (int y = y0; y < y1; ++y) {
            const T* src = in_plane + static_cast<std::size_t>(y + dy) * W + dx;
            T* dst = out_plane + static_cast<std::size_t>(y) * W;
            for (int x = x0; x < x1; ++x) dst[x] += wv * src[x];
          }
        }
      }
    }
  }
}

// gin may be null (bottom layer or frozen path); gw/gb may be null when the
// layer's parameters are frozen.
template <typename T>
void conv3x3_backward(const T* in, int C, int H, int W, const T* w, int O,
                      const T* gout, T* gin, T* gw, T* gb) {
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  if (gb) {
    for (int o = 0; o < O; ++o) {
      const T* g = gout + o * plane;
      T acc = 0;
      for (std::size_t i = 0; i < plane; ++i) acc += g[i];
      gb[o] += acc;
    }
  }
  for (int o = 0; o < O; ++o) {
    const T* gout_plane = gout + o * plane;
    for (int c = 0; c < C; ++c) {
      const T* in_plane = in + c * plane;
      T* gin_plane = gin ? gin + c * plane : nullptr;
      for (int ky = 0; ky < 3; ++ky) {
        int dy = ky - 1;
        for (int kx = 0; kx < 3; ++kx) {
          int dx = kx - 1;
          std::size_t widx = ((static_cast<std::size_t>(o) * C + c) * 3 + ky) * 3 + kx;
          int y0 = std::max(0, -dy), y1 = H - std::max(0, dy);
          int x0 = std::max(0, -dx), x1 = W - std::max(0, dx);
          if (gw) {
            T acc = 0;
            for (int y = y0; y < y1; ++y) {
              const T* src = in_plane + static_cast<std::size_t>(y + dy) * W + dx;
              const T* g = gout_plane + static_cast<std::size_t>(y) * W;
              for (int x = x0; x < x1; ++x) acc += g[x] * src[x];
            }
            gw[widx] += acc;
          }
          if (gin_plane) {
            T wv = w[widx];
            if (wv == T(0)) continue;
            for (int y = y0; y < y1; ++y) {
              T* dst = gin_plane + static_cast<std::size_t>(y + dy) * W + dx;
              const T* g = gout_plane + static_cast<std::size_t>(y) * W;
              for (int x = x0; x < x1; ++x) dst[x] += wv * g[x];
            }
          }
        }
      }
    }
  }
}

// --- ReLU ---

template <typename T>
void relu_forward(const T* in, std::size_t n, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
}

// Subgradient 0 at the kink.
template <typename T>
void relu_backward(const T* pre, std::size_t n, const T* gout, T* gin) {
  for (std::size_t i = 0; i < n; ++i) gin[i] = pre[i] > T(0) ? gout[i] : T(0);
}

// --- 2x2 / stride-2 max pooling, ceil mode (odd trailing row/col pools a
// partial window). argmax records the flat input index chosen per output
// cell; ties break to the first cell in row-major window order. ---

inline int pooled_size(int s) { return (s + 1) / 2; }

template <typename T>
void maxpool2_forward(const T* in, int C, int H, int W, T* out, int* argmax) {
  int Ho = pooled_size(H), Wo = pooled_size(W);
  for (int c = 0; c < C; ++c) {
    const T* in_plane = in + static_cast<std::size_t>(c) * H * W;
    for (int oy = 0; oy < Ho; ++oy) {
      int y0 = 2 * oy, y1 = std::min(y0 + 1, H - 1);
      for (int ox = 0; ox < Wo; ++ox) {
        int x0 = 2 * ox, x1 = std::min(x0 + 1, W - 1);
        int best = y0 * W + x0;
        T bv = in_plane[best];
        for (int y = y0; y <= y1; ++y) {
          for (int x = x0; x <= x1; ++x) {
            int idx = y * W + x;
            if (in_plane[idx] > bv) {
              bv = in_plane[idx];
              best = idx;
            }
          }
        }
        std::size_t oidx = (static_cast<std::size_t>(c) * Ho + oy) * Wo + ox;
        out[oidx] = bv;
        argmax[oidx] = c * H * W + best;
      }
    }
  }
}

template <typename T>
void maxpool2_backward(const int* argmax, std::size_t n_out, const T* gout, T* gin) {
  for (std::size_t i = 0; i < n_out; ++i) gin[argmax[i]] += gout[i];
}

// --- Across-channel local response normalization ---
// b[c] = a[c] / (k + (alpha/n) * sum_{c' in window(c)} a[c']^2)^beta, where
// the window spans local_size channels centered at c, truncated at the
// channel range edges; n stays fixed at local_size.

template <typename T>
void lrn_forward(const T* in, int C, int H, int W, const LrnConfig& cfg,
                 T* out, T* denom) {
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const int half = cfg.local_size / 2;
  const T scale = static_cast<T>(cfg.alpha / cfg.local_size);
  const T k = static_cast<T>(cfg.k);
  const T beta = static_cast<T>(cfg.beta);
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < C; ++c) {
      int c0 = std::max(0, c - half), c1 = std::min(C - 1, c + half);
      T s = 0;
      for (int cc = c0; cc <= c1; ++cc) {
        T a = in[cc * plane + p];
        s += a * a;
      }
      T d = k + scale * s;
      denom[c * plane + p] = d;
      out[c * plane + p] = in[c * plane + p] * std::pow(d, -beta);
    }
  }
}

template <typename T>
void lrn_backward(const T* in, const T* denom, int C, int H, int W,
                  const LrnConfig& cfg, const T* gout, T* gin) {
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const int half = cfg.local_size / 2;
  const T scale = static_cast<T>(cfg.alpha / cfg.local_size);
  const T beta = static_cast<T>(cfg.beta);
  std::vector<T> s(C);
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < C; ++c) {
      s[c] = gout[c * plane + p] * in[c * plane + p] *
             std::pow(denom[c * plane + p], -beta - T(1));
    }
    for (int j = 0; j < C; ++j) {
      int c0 = std::max(0, j - half), c1 = std::min(C - 1, j + half);
      T acc = 0;
      for (int cc = c0; cc <= c1; ++cc) acc += s[cc];
      gin[j * plane + p] = gout[j * plane + p] * std::pow(denom[j * plane + p], -beta) -
                           T(2) * beta * scale * in[j * plane + p] * acc;
    }
  }
}

// --- Fully connected: y = W x + b, W is [out, in] row-major ---

template <typename T>
void fc_forward(const T* in, int n_in, const T* w, const T* b, int n_out, T* out) {
  for (int o = 0; o < n_out; ++o) {
    const T* row = w + static_cast<std::size_t>(o) * n_in;
    T acc = b[o];
    for (int i = 0; i < n_in; ++i) acc += row[i] * in[i];
    out[o] = acc;
  }
}

template <typename T>
void fc_backward(const T* in, int n_in, const T* w, int n_out, const T* gout,
                 T* gin, T* gw, T* gb) {
  if (gb) {
    for (int o = 0; o < n_out; ++o) gb[o] += gout[o];
  }
  if (gw) {
    for (int o = 0; o < n_out; ++o) {
      T g = gout[o];
      if (g == T(0)) continue;
      T* row = gw + static_cast<std::size_t>(o) * n_in;
      for (int i = 0; i < n_in; ++i) row[i] += g * in[i];
    }
  }
  if (gin) {
    for (int o = 0; o < n_out; ++o) {
      T g = gout[o];
      if (g == T(0)) continue;
      const T* row = w + static_cast<std::size_t>(o) * n_in;
      for (int i = 0; i < n_in; ++i) gin[i] += g * row[i];
    }
  }
}

}  // namespace plm
