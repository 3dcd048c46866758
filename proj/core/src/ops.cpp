#include "affseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace affseg {
namespace ops {

namespace {

void record(const TensorPtr& result, std::vector<TensorPtr> parents, std::function<void()> fn,
            const char* name) {
  bool any_grad = false;
  for (const auto& p : parents) {
    if (p->requires_grad()) {
      any_grad = true;
      break;
    }
  }
  if (!any_grad || !grad_enabled()) return;
  result->set_requires_grad(true);
  result->set_graph(std::move(parents), std::move(fn), name);
}

void require_rank(const TensorPtr& t, int rank, const char* op, const char* arg) {
  if (t->rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": " + arg + " must have rank " +
                                std::to_string(rank) + ", got " + shape_string(t->shape()));
  }
}

void require_spatial_match(const TensorPtr& a, const TensorPtr& b, const char* op) {
  if (a->dim(1) != b->dim(1)) {
    throw std::invalid_argument(std::string(op) + ": height mismatch " +
                                std::to_string(a->dim(1)) + " vs " + std::to_string(b->dim(1)));
  }
  if (a->dim(2) != b->dim(2)) {
    throw std::invalid_argument(std::string(op) + ": width mismatch " +
                                std::to_string(a->dim(2)) + " vs " + std::to_string(b->dim(2)));
  }
}

}  // namespace

TensorPtr conv2d(const TensorPtr& input, const TensorPtr& weight, const TensorPtr& bias,
                 int stride, int padding) {
  require_rank(input, 3, "conv2d", "input");
  require_rank(weight, 4, "conv2d", "weight");
  require_rank(bias, 1, "conv2d", "bias");
  const int c_in = input->dim(0), h = input->dim(1), w = input->dim(2);
  const int c_out = weight->dim(0), kh = weight->dim(2), kw = weight->dim(3);
  if (weight->dim(1) != c_in) {
    throw std::invalid_argument("conv2d: weight expects " + std::to_string(weight->dim(1)) +
                                " input channels, input has " + std::to_string(c_in));
  }
  if (bias->dim(0) != c_out) {
    throw std::invalid_argument("conv2d: bias extent " + std::to_string(bias->dim(0)) +
                                " does not match " + std::to_string(c_out) + " output channels");
  }
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
  if (padding < 0) throw std::invalid_argument("conv2d: padding must be non-negative");
  if (kh > h + 2 * padding) {
    throw std::invalid_argument("conv2d: kernel height " + std::to_string(kh) +
                                " exceeds padded input height " + std::to_string(h + 2 * padding));
  }
  if (kw > w + 2 * padding) {
    throw std::invalid_argument("conv2d: kernel width " + std::to_string(kw) +
                                " exceeds padded input width " + std::to_string(w + 2 * padding));
  }

  const int oh = (h + 2 * padding - kh) / stride + 1;
  const int ow = (w + 2 * padding - kw) / stride + 1;
  TensorPtr out = Tensor::zeros({c_out, oh, ow});

  const double* in = input->data().data();
  const double* wt = weight->data().data();
  const double* bs = bias->data().data();
  double* o = out->data().data();

  for (int co = 0; co < c_out; ++co) {
    double* out_c = o + static_cast<long>(co) * oh * ow;
    std::fill(out_c, out_c + static_cast<long>(oh) * ow, bs[co]);
    for (int ci = 0; ci < c_in; ++ci) {
      const double* in_c = in + static_cast<long>(ci) * h * w;
      const double* w_cc = wt + (static_cast<long>(co) * c_in + ci) * kh * kw;
      for (int oy = 0; oy < oh; ++oy) {
        const int iy0 = oy * stride - padding;
        double* out_row = out_c + static_cast<long>(oy) * ow;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = iy0 + ky;
          if (iy < 0 || iy >= h) continue;
          const double* in_row = in_c + static_cast<long>(iy) * w;
          const double* w_row = w_cc + static_cast<long>(ky) * kw;
          if (stride == 1) {
            for (int kx = 0; kx < kw; ++kx) {
              const double wv = w_row[kx];
              const int ix0 = kx - padding;
              const int lo = std::max(0, -ix0);
              const int hi = std::min(ow, w - ix0);
              const double* ip = in_row + ix0 + lo;
              double* op = out_row + lo;
              for (int n = hi - lo; n > 0; --n) *op++ += wv * *ip++;
            }
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix0 = ox * stride - padding;
              double acc = 0.0;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = ix0 + kx;
                if (ix < 0 || ix >= w) continue;
                acc += w_row[kx] * in_row[ix];
              }
              out_row[ox] += acc;
            }
          }
        }
      }
    }
  }

  if (ArchCounters* c = arch_counters()) ++c->conv2d;

  Tensor* self = out.get();
  Tensor* in_t = input.get();
  Tensor* w_t = weight.get();
  Tensor* b_t = bias.get();
  record(
      out, {input, weight, bias},
      [self, in_t, w_t, b_t, c_in, c_out, h, w, kh, kw, oh, ow, stride, padding]() {
        const double* g = self->grad().data();
        const double* in = in_t->data().data();
        const double* wt = w_t->data().data();

        if (b_t->requires_grad()) {
          std::vector<double> gb(static_cast<size_t>(c_out), 0.0);
          for (int co = 0; co < c_out; ++co) {
            const double* g_c = g + static_cast<long>(co) * oh * ow;
            double acc = 0.0;
            for (long i = 0; i < static_cast<long>(oh) * ow; ++i) acc += g_c[i];
            gb[static_cast<size_t>(co)] = acc;
          }
          b_t->accumulate_grad(gb.data(), c_out);
        }

        if (w_t->requires_grad()) {
          std::vector<double> gw(w_t->data().size(), 0.0);
          for (int co = 0; co < c_out; ++co) {
            const double* g_c = g + static_cast<long>(co) * oh * ow;
            for (int ci = 0; ci < c_in; ++ci) {
              const double* in_c = in + static_cast<long>(ci) * h * w;
              double* gw_cc = gw.data() + (static_cast<long>(co) * c_in + ci) * kh * kw;
              for (int oy = 0; oy < oh; ++oy) {
                const int iy0 = oy * stride - padding;
                const double* g_row = g_c + static_cast<long>(oy) * ow;
                for (int ky = 0; ky < kh; ++ky) {
                  const int iy = iy0 + ky;
                  if (iy < 0 || iy >= h) continue;
                  const double* in_row = in_c + static_cast<long>(iy) * w;
                  for (int kx = 0; kx < kw; ++kx) {
                    const int ix0 = kx - padding;
                    double acc = 0.0;
                    if (stride == 1) {
                      const int lo = std::max(0, -ix0);
                      const int hi = std::min(ow, w - ix0);
                      const double* ip = in_row + ix0 + lo;
                      const double* gp = g_row + lo;
                      for (int n = hi - lo; n > 0; --n) acc += *gp++ * *ip++;
                    } else {
                      for (int ox = 0; ox < ow; ++ox) {
                        const int ix = ox * stride + ix0;
                        if (ix < 0 || ix >= w) continue;
                        acc += g_row[ox] * in_row[ix];
                      }
                    }
                    gw_cc[static_cast<long>(ky) * kw + kx] += acc;
                  }
                }
              }
            }
          }
          w_t->accumulate_grad(gw.data(), static_cast<long>(gw.size()));
        }

        if (in_t->requires_grad()) {
          std::vector<double> gi(in_t->data().size(), 0.0);
          for (int co = 0; co < c_out; ++co) {
            const double* g_c = g + static_cast<long>(co) * oh * ow;
            for (int ci = 0; ci < c_in; ++ci) {
              double* gi_c = gi.data() + static_cast<long>(ci) * h * w;
              const double* w_cc = wt + (static_cast<long>(co) * c_in + ci) * kh * kw;
              for (int oy = 0; oy < oh; ++oy) {
                const int iy0 = oy * stride - padding;
                const double* g_row = g_c + static_cast<long>(oy) * ow;
                for (int ky = 0; ky < kh; ++ky) {
                  const int iy = iy0 + ky;
                  if (iy < 0 || iy >= h) continue;
                  double* gi_row = gi_c + static_cast<long>(iy) * w;
                  const double* w_row = w_cc + static_cast<long>(ky) * kw;
                  if (stride == 1) {
                    for (int kx = 0; kx < kw; ++kx) {
                      const double wv = w_row[kx];
                      const int ix0 = kx - padding;
                      const int lo = std::max(0, -ix0);
                      const int hi = std::min(ow, w - ix0);
                      double* gp = gi_row + ix0 + lo;
                      const double* sp = g_row + lo;
                      for (int n = hi - lo; n > 0; --n) *gp++ += wv * *sp++;
                    }
                  } else {
                    for (int ox = 0; ox < ow; ++ox) {
                      const int ix0 = ox * stride - padding;
                      for (int kx = 0; kx < kw; ++kx) {
                        const int ix = ix0 + kx;
                        if (ix < 0 || ix >= w) continue;
                        gi_row[ix] += w_row[kx] * g_row[ox];
                      }
                    }
                  }
                }
              }
            }
          }
          in_t->accumulate_grad(gi.data(), static_cast<long>(gi.size()));
        }
      },
      "conv2d");
  return out;
}

MaxPoolResult maxpool2x2(const TensorPtr& input) {
  require_rank(input, 3, "maxpool2x2", "input");
  const int c = input->dim(0), h = input->dim(1), w = input->dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw std::invalid_argument("maxpool2x2: spatial extents must be even, got " +
                                shape_string(input->shape()));
  }
  const int oh = h / 2, ow = w / 2;
  TensorPtr out = Tensor::zeros({c, oh, ow});
  std::vector<int> argmax(static_cast<size_t>(c) * oh * ow);

  const double* in = input->data().data();
  double* o = out->data().data();
  for (int ci = 0; ci < c; ++ci) {
    const double* in_c = in + static_cast<long>(ci) * h * w;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double best = -1.0;
        int best_idx = -1;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int idx = (oy * 2 + dy) * w + (ox * 2 + dx);
            if (best_idx < 0 || in_c[idx] > best) {
              best = in_c[idx];
              best_idx = idx;
            }
          }
        }
        const long oidx = (static_cast<long>(ci) * oh + oy) * ow + ox;
        o[oidx] = best;
        argmax[static_cast<size_t>(oidx)] = static_cast<int>(ci * h * w + best_idx);
      }
    }
  }

  if (ArchCounters* cnt = arch_counters()) ++cnt->maxpool;

  Tensor* self = out.get();
  Tensor* in_t = input.get();
  std::vector<int> saved = argmax;
  record(
      out, {input},
      [self, in_t, saved = std::move(saved)]() {
        if (!in_t->requires_grad()) return;
        const double* g = self->grad().data();
        std::vector<double> gi(in_t->data().size(), 0.0);
        for (size_t i = 0; i < saved.size(); ++i) {
          gi[static_cast<size_t>(saved[i])] += g[i];
        }
        in_t->accumulate_grad(gi.data(), static_cast<long>(gi.size()));
      },
      "maxpool2x2");
  return {out, std::move(argmax)};
}

TensorPtr upsample_nearest2x(const TensorPtr& input) {
  require_rank(input, 3, "upsample_nearest2x", "input");
  const int c = input->dim(0), h = input->dim(1), w = input->dim(2);
  const int oh = h * 2, ow = w * 2;
  TensorPtr out = Tensor::zeros({c, oh, ow});
  const double* in = input->data().data();
  double* o = out->data().data();
  for (int ci = 0; ci < c; ++ci) {
    for (int y = 0; y < h; ++y) {
      const double* in_row = in + (static_cast<long>(ci) * h + y) * w;
      double* r0 = o + (static_cast<long>(ci) * oh + 2 * y) * ow;
      double* r1 = r0 + ow;
      for (int x = 0; x < w; ++x) {
        const double v = in_row[x];
        r0[2 * x] = v;
        r0[2 * x + 1] = v;
        r1[2 * x] = v;
        r1[2 * x + 1] = v;
      }
    }
  }

  if (ArchCounters* cnt = arch_counters()) ++cnt->upsample;

  Tensor* self = out.get();
  Tensor* in_t = input.get();
  record(
      out, {input},
      [self, in_t, c, h, w, oh, ow]() {
        if (!in_t->requires_grad()) return;
        const double* g = self->grad().data();
        std::vector<double> gi(in_t->data().size(), 0.0);
        for (int ci = 0; ci < c; ++ci) {
          for (int y = 0; y < h; ++y) {
            const double* r0 = g + (static_cast<long>(ci) * oh + 2 * y) * ow;
            const double* r1 = r0 + ow;
            double* gi_row = gi.data() + (static_cast<long>(ci) * h + y) * w;
            for (int x = 0; x < w; ++x) {
              gi_row[x] = r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1];
            }
          }
        }
        in_t->accumulate_grad(gi.data(), static_cast<long>(gi.size()));
      },
      "upsample_nearest2x");
  return out;
}

TensorPtr activation(const TensorPtr& input, Activation kind) {
  TensorPtr out = Tensor::zeros(input->shape());
  const std::vector<double>& in = input->data();
  std::vector<double>& o = out->data();
  switch (kind) {
    case Activation::kRelu:
      for (size_t i = 0; i < in.size(); ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
      break;
    case Activation::kSigmoid:
      for (size_t i = 0; i < in.size(); ++i) o[i] = 1.0 / (1.0 + std::exp(-in[i]));
      break;
    case Activation::kTanh:
      for (size_t i = 0; i < in.size(); ++i) o[i] = std::tanh(in[i]);
      break;
  }

  Tensor* self = out.get();
  Tensor* in_t = input.get();
  const char* name = kind == Activation::kRelu      ? "relu"
                     : kind == Activation::kSigmoid ? "sigmoid"
                                                    : "tanh";
  record(
      out, {input},
      [self, in_t, kind]() {
        if (!in_t->requires_grad()) return;
        const double* g = self->grad().data();
        const double* y = self->data().data();
        const double* x = in_t->data().data();
        std::vector<double> gi(in_t->data().size());
        switch (kind) {
          case Activation::kRelu:
            // subgradient 0 at exactly 0
            for (size_t i = 0; i < gi.size(); ++i) gi[i] = x[i] > 0.0 ? g[i] : 0.0;
            break;
          case Activation::kSigmoid:
            for (size_t i = 0; i < gi.size(); ++i) gi[i] = g[i] * y[i] * (1.0 - y[i]);
            break;
          case Activation::kTanh:
            for (size_t i = 0; i < gi.size(); ++i) gi[i] = g[i] * (1.0 - y[i] * y[i]);
            break;
        }
        in_t->accumulate_grad(gi.data(), static_cast<long>(gi.size()));
      },
      name);
  return out;
}

TensorPtr relu(const TensorPtr& input) { return activation(input, Activation::kRelu); }
TensorPtr sigmoid(const TensorPtr& input) { return activation(input, Activation::kSigmoid); }
TensorPtr tanh(const TensorPtr& input) { return activation(input, Activation::kTanh); }

TensorPtr softmax_spatial(const TensorPtr& input) {
  require_rank(input, 3, "softmax_spatial", "input");
  if (input->dim(0) != 1) {
    throw std::invalid_argument("softmax_spatial: expects a single channel, got " +
                                std::to_string(input->dim(0)));
  }
  const std::vector<double>& in = input->data();
  TensorPtr out = Tensor::zeros(input->shape());
  std::vector<double>& o = out->data();

  double mx = in[0];
  for (double v : in) mx = std::max(mx, v);
  double total = 0.0;
  for (size_t i = 0; i < in.size(); ++i) {
    o[i] = std::exp(in[i] - mx);
    total += o[i];
  }
  const double inv = 1.0 / total;
  for (double& v : o) v *= inv;

  Tensor* self = out.get();
  Tensor* in_t = input.get();
  record(
      out, {input},
      [self, in_t]() {
        if (!in_t->requires_grad()) return;
        const double* g = self->grad().data();
        const double* y = self->data().data();
        const size_t n = self->data().size();
        double dot = 0.0;
        for (size_t i = 0; i < n; ++i) dot += g[i] * y[i];
        std::vector<double> gi(n);
        for (size_t i = 0; i < n; ++i) gi[i] = y[i] * (g[i] - dot);
        in_t->accumulate_grad(gi.data(), static_cast<long>(n));
      },
      "softmax_spatial");
  return out;
}

TensorPtr concat_channels(const TensorPtr& a, const TensorPtr& b) {
  require_rank(a, 3, "concat_channels", "a");
  require_rank(b, 3, "concat_channels", "b");
  require_spatial_match(a, b, "concat_channels");
  const int ca = a->dim(0), cb = b->dim(0), h = a->dim(1), w = a->dim(2);
  TensorPtr out = Tensor::zeros({ca + cb, h, w});
  std::copy(a->data().begin(), a->data().end(), out->data().begin());
  std::copy(b->data().begin(), b->data().end(), out->data().begin() + a->numel());

  Tensor* self = out.get();
  Tensor* a_t = a.get();
  Tensor* b_t = b.get();
  record(
      out, {a, b},
      [self, a_t, b_t]() {
        const double* g = self->grad().data();
        if (a_t->requires_grad()) a_t->accumulate_grad(g, a_t->numel());
        if (b_t->requires_grad()) b_t->accumulate_grad(g + a_t->numel(), b_t->numel());
      },
      "concat_channels");
  return out;
}

TensorPtr mul_broadcast_mask(const TensorPtr& mask, const TensorPtr& x) {
  require_rank(mask, 3, "mul_broadcast_mask", "mask");
  require_rank(x, 3, "mul_broadcast_mask", "x");
  if (mask->dim(0) != 1) {
    throw std::invalid_argument("mul_broadcast_mask: mask must have one channel, got " +
                                std::to_string(mask->dim(0)));
  }
  require_spatial_match(mask, x, "mul_broadcast_mask");
  const int c = x->dim(0), h = x->dim(1), w = x->dim(2);
  const long hw = static_cast<long>(h) * w;
  TensorPtr out = Tensor::zeros(x->shape());
  const double* m = mask->data().data();
  const double* xi = x->data().data();
  double* o = out->data().data();
  for (int ci = 0; ci < c; ++ci) {
    const double* xc = xi + ci * hw;
    double* oc = o + ci * hw;
    for (long i = 0; i < hw; ++i) oc[i] = m[i] * xc[i];
  }

  if (ArchCounters* cnt = arch_counters()) ++cnt->mask_mul;

  Tensor* self = out.get();
  Tensor* m_t = mask.get();
  Tensor* x_t = x.get();
  record(
      out, {mask, x},
      [self, m_t, x_t, c, hw]() {
        const double* g = self->grad().data();
        const double* m = m_t->data().data();
        const double* xv = x_t->data().data();
        if (m_t->requires_grad()) {
          std::vector<double> gm(static_cast<size_t>(hw), 0.0);
          for (int ci = 0; ci < c; ++ci) {
            const double* gc = g + ci * hw;
            const double* xc = xv + ci * hw;
            for (long i = 0; i < hw; ++i) gm[static_cast<size_t>(i)] += gc[i] * xc[i];
          }
          m_t->accumulate_grad(gm.data(), hw);
        }
        if (x_t->requires_grad()) {
          std::vector<double> gx(x_t->data().size());
          for (int ci = 0; ci < c; ++ci) {
            const double* gc = g + ci * hw;
            double* gxc = gx.data() + ci * hw;
            for (long i = 0; i < hw; ++i) gxc[i] = gc[i] * m[i];
          }
          x_t->accumulate_grad(gx.data(), static_cast<long>(gx.size()));
        }
      },
      "mul_broadcast_mask");
  return out;
}

TensorPtr linear(const TensorPtr& x, const TensorPtr& weight, const TensorPtr& bias) {
  require_rank(x, 1, "linear", "x");
  require_rank(weight, 2, "linear", "weight");
  require_rank(bias, 1, "linear", "bias");
  const int m = weight->dim(0), n = weight->dim(1);
  if (x->dim(0) != n) {
    throw std::invalid_argument("linear: weight expects input extent " + std::to_string(n) +
                                ", got " + std::to_string(x->dim(0)));
  }
  if (bias->dim(0) != m) {
    throw std::invalid_argument("linear: bias extent " + std::to_string(bias->dim(0)) +
                                " does not match output extent " + std::to_string(m));
  }
  TensorPtr out = Tensor::zeros({m});
  const double* xv = x->data().data();
  const double* wv = weight->data().data();
  double* o = out->data().data();
  for (int i = 0; i < m; ++i) {
    const double* row = wv + static_cast<long>(i) * n;
    double acc = bias->data()[static_cast<size_t>(i)];
    for (int j = 0; j < n; ++j) acc += row[j] * xv[j];
    o[i] = acc;
  }

  Tensor* self = out.get();
  Tensor* x_t = x.get();
  Tensor* w_t = weight.get();
  Tensor* b_t = bias.get();
  record(
      out, {x, weight, bias},
      [self, x_t, w_t, b_t, m, n]() {
        const double* g = self->grad().data();
        if (b_t->requires_grad()) b_t->accumulate_grad(g, m);
        if (w_t->requires_grad()) {
          std::vector<double> gw(static_cast<size_t>(m) * n);
          const double* xv = x_t->data().data();
          for (int i = 0; i < m; ++i) {
            double* row = gw.data() + static_cast<long>(i) * n;
            for (int j = 0; j < n; ++j) row[j] = g[i] * xv[j];
          }
          w_t->accumulate_grad(gw.data(), static_cast<long>(gw.size()));
        }
        if (x_t->requires_grad()) {
          std::vector<double> gx(static_cast<size_t>(n), 0.0);
          const double* wv = w_t->data().data();
          for (int i = 0; i < m; ++i) {
            const double* row = wv + static_cast<long>(i) * n;
            for (int j = 0; j < n; ++j) gx[static_cast<size_t>(j)] += g[i] * row[j];
          }
          x_t->accumulate_grad(gx.data(), n);
        }
      },
      "linear");
  return out;
}

TensorPtr pixelwise_cross_entropy(const TensorPtr& logits, const LabelMap& target) {
  require_rank(logits, 3, "pixelwise_cross_entropy", "logits");
  const int c = logits->dim(0), h = logits->dim(1), w = logits->dim(2);
  if (target.h != h || target.w != w) {
    throw std::invalid_argument("pixelwise_cross_entropy: target extent (" +
                                std::to_string(target.h) + "x" + std::to_string(target.w) +
                                ") does not match logits " + shape_string(logits->shape()));
  }
  const long hw = static_cast<long>(h) * w;
  const double* lv = logits->data().data();
  double total = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int t = target.at(y, x);
      if (t < 0 || t >= c) {
        throw std::invalid_argument("pixelwise_cross_entropy: label " + std::to_string(t) +
                                    " out of range [0," + std::to_string(c) + ") at pixel (y=" +
                                    std::to_string(y) + ", x=" + std::to_string(x) + ")");
      }
      const long p = static_cast<long>(y) * w + x;
      double mx = lv[p];
      for (int ci = 1; ci < c; ++ci) mx = std::max(mx, lv[ci * hw + p]);
      double lse = 0.0;
      for (int ci = 0; ci < c; ++ci) lse += std::exp(lv[ci * hw + p] - mx);
      total += mx + std::log(lse) - lv[t * hw + p];
    }
  }
  TensorPtr out = Tensor::scalar(total / static_cast<double>(hw));

  Tensor* self = out.get();
  Tensor* l_t = logits.get();
  LabelMap saved = target;
  record(
      out, {logits},
      [self, l_t, saved = std::move(saved), c, h, w, hw]() {
        if (!l_t->requires_grad()) return;
        const double g = self->grad()[0] / static_cast<double>(hw);
        const double* lv = l_t->data().data();
        std::vector<double> gl(l_t->data().size());
        std::vector<double> sm(static_cast<size_t>(c));
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            const long p = static_cast<long>(y) * w + x;
            double mx = lv[p];
            for (int ci = 1; ci < c; ++ci) mx = std::max(mx, lv[ci * hw + p]);
            double total = 0.0;
            for (int ci = 0; ci < c; ++ci) {
              sm[static_cast<size_t>(ci)] = std::exp(lv[ci * hw + p] - mx);
              total += sm[static_cast<size_t>(ci)];
            }
            const int t = saved.at(y, x);
            for (int ci = 0; ci < c; ++ci) {
              double v = sm[static_cast<size_t>(ci)] / total;
              if (ci == t) v -= 1.0;
              gl[static_cast<size_t>(ci * hw + p)] = g * v;
            }
          }
        }
        l_t->accumulate_grad(gl.data(), static_cast<long>(gl.size()));
      },
      "pixelwise_cross_entropy");
  return out;
}

TensorPtr cross_entropy(const TensorPtr& logits, int target) {
  require_rank(logits, 1, "cross_entropy", "logits");
  const int a = logits->dim(0);
  if (target < 0 || target >= a) {
    throw std::invalid_argument("cross_entropy: label " + std::to_string(target) +
                                " out of range [0," + std::to_string(a) + ")");
  }
  const double* lv = logits->data().data();
  double mx = lv[0];
  for (int i = 1; i < a; ++i) mx = std::max(mx, lv[i]);
  double lse = 0.0;
  for (int i = 0; i < a; ++i) lse += std::exp(lv[i] - mx);
  TensorPtr out = Tensor::scalar(mx + std::log(lse) - lv[target]);

  Tensor* self = out.get();
  Tensor* l_t = logits.get();
  record(
      out, {logits},
      [self, l_t, target, a]() {
        if (!l_t->requires_grad()) return;
        const double g = self->grad()[0];
        const double* lv = l_t->data().data();
        double mx = lv[0];
        for (int i = 1; i < a; ++i) mx = std::max(mx, lv[i]);
        double total = 0.0;
        std::vector<double> gl(static_cast<size_t>(a));
        for (int i = 0; i < a; ++i) {
          gl[static_cast<size_t>(i)] = std::exp(lv[i] - mx);
          total += gl[static_cast<size_t>(i)];
        }
        for (int i = 0; i < a; ++i) {
          double v = gl[static_cast<size_t>(i)] / total;
          if (i == target) v -= 1.0;
          gl[static_cast<size_t>(i)] = g * v;
        }
        l_t->accumulate_grad(gl.data(), a);
      },
      "cross_entropy");
  return out;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  if (a->shape() != b->shape()) {
    throw std::invalid_argument("add: shape mismatch " + shape_string(a->shape()) + " vs " +
                                shape_string(b->shape()));
  }
  TensorPtr out = Tensor::zeros(a->shape());
  const double* av = a->data().data();
  const double* bv = b->data().data();
  double* o = out->data().data();
  for (long i = 0; i < a->numel(); ++i) o[i] = av[i] + bv[i];

  Tensor* self = out.get();
  Tensor* a_t = a.get();
  Tensor* b_t = b.get();
  record(
      out, {a, b},
      [self, a_t, b_t]() {
        const double* g = self->grad().data();
        if (a_t->requires_grad()) a_t->accumulate_grad(g, a_t->numel());
        if (b_t->requires_grad()) b_t->accumulate_grad(g, b_t->numel());
      },
      "add");
  return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
  if (a->shape() != b->shape()) {
    throw std::invalid_argument("mul: shape mismatch " + shape_string(a->shape()) + " vs " +
                                shape_string(b->shape()));
  }
  TensorPtr out = Tensor::zeros(a->shape());
  const double* av = a->data().data();
  const double* bv = b->data().data();
  double* o = out->data().data();
  for (long i = 0; i < a->numel(); ++i) o[i] = av[i] * bv[i];

  Tensor* self = out.get();
  Tensor* a_t = a.get();
  Tensor* b_t = b.get();
  record(
      out, {a, b},
      [self, a_t, b_t]() {
        const double* g = self->grad().data();
        const long n = self->numel();
        std::vector<double> buf(static_cast<size_t>(n));
        if (a_t->requires_grad()) {
          const double* bv = b_t->data().data();
          for (long i = 0; i < n; ++i) buf[static_cast<size_t>(i)] = g[i] * bv[i];
          a_t->accumulate_grad(buf.data(), n);
        }
        if (b_t->requires_grad()) {
          const double* av = a_t->data().data();
          for (long i = 0; i < n; ++i) buf[static_cast<size_t>(i)] = g[i] * av[i];
          b_t->accumulate_grad(buf.data(), n);
        }
      },
      "mul");
  return out;
}

TensorPtr scale(const TensorPtr& x, double factor) {
  TensorPtr out = Tensor::zeros(x->shape());
  const double* xv = x->data().data();
  double* o = out->data().data();
  for (long i = 0; i < x->numel(); ++i) o[i] = factor * xv[i];

  Tensor* self = out.get();
  Tensor* x_t = x.get();
  record(
      out, {x},
      [self, x_t, factor]() {
        if (!x_t->requires_grad()) return;
        const double* g = self->grad().data();
        const long n = self->numel();
        std::vector<double> buf(static_cast<size_t>(n));
        for (long i = 0; i < n; ++i) buf[static_cast<size_t>(i)] = factor * g[i];
        x_t->accumulate_grad(buf.data(), n);
      },
      "scale");
  return out;
}

TensorPtr sum(const TensorPtr& x) {
  double total = 0.0;
  for (double v : x->data()) total += v;
  TensorPtr out = Tensor::scalar(total);

  Tensor* self = out.get();
  Tensor* x_t = x.get();
  record(
      out, {x},
      [self, x_t]() {
        if (!x_t->requires_grad()) return;
        const double g = self->grad()[0];
        std::vector<double> buf(x_t->data().size(), g);
        x_t->accumulate_grad(buf.data(), x_t->numel());
      },
      "sum");
  return out;
}

TensorPtr global_avg_pool(const TensorPtr& x) {
  require_rank(x, 3, "global_avg_pool", "x");
  const int c = x->dim(0);
  const long hw = static_cast<long>(x->dim(1)) * x->dim(2);
  TensorPtr out = Tensor::zeros({c});
  const double* xv = x->data().data();
  double* o = out->data().data();
  for (int ci = 0; ci < c; ++ci) {
    double acc = 0.0;
    const double* xc = xv + ci * hw;
    for (long i = 0; i < hw; ++i) acc += xc[i];
    o[ci] = acc / static_cast<double>(hw);
  }

  Tensor* self = out.get();
  Tensor* x_t = x.get();
  record(
      out, {x},
      [self, x_t, c, hw]() {
        if (!x_t->requires_grad()) return;
        const double* g = self->grad().data();
        std::vector<double> buf(x_t->data().size());
        const double inv = 1.0 / static_cast<double>(hw);
        for (int ci = 0; ci < c; ++ci) {
          const double v = g[ci] * inv;
          double* bc = buf.data() + ci * hw;
          for (long i = 0; i < hw; ++i) bc[i] = v;
        }
        x_t->accumulate_grad(buf.data(), static_cast<long>(buf.size()));
      },
      "global_avg_pool");
  return out;
}

}  // namespace ops
}  // namespace affseg
