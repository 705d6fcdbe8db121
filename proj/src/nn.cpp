// Copyright 2026 The avsr-lombard Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "avsr/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include <Eigen/Dense>

namespace avsr::nn {

// ---------------------------------------------------------------------------
// ParameterStore

Parameter& ParameterStore::add(const std::string& name, Tensor value, bool is_buffer) {
  AVSR_REQUIRE(!index_.count(name), "duplicate parameter '", name, "'");
  params_.push_back(std::make_unique<Parameter>(Parameter{name, std::move(value), is_buffer}));
  index_[name] = params_.back().get();
  return *params_.back();
}

Parameter* ParameterStore::find(const std::string& name) {
  const auto it = index_.find(name);
  return it == index_.end() ? nullptr : it->second;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  const auto it = index_.find(name);
  return it == index_.end() ? nullptr : it->second;
}

Parameter& ParameterStore::at(const std::string& name) {
  auto* p = find(name);
  AVSR_REQUIRE(p != nullptr, "unknown parameter '", name, "'");
  return *p;
}

const Parameter& ParameterStore::at(const std::string& name) const {
  const auto* p = find(name);
  AVSR_REQUIRE(p != nullptr, "unknown parameter '", name, "'");
  return *p;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

// ---------------------------------------------------------------------------
// Tape

Tape::Id Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::parameter(const Parameter& p, bool trainable) {
  Node n;
  n.ref = &p.value;
  n.param = trainable && !p.is_buffer ? &p : nullptr;
  n.needs_grad = n.param != nullptr;
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

const Tensor& Tape::value(Id id) const {
  const auto& n = nodes_.at(static_cast<std::size_t>(id));
  return n.ref ? *n.ref : n.value;
}

Tensor& Tape::grad(Id id) {
  auto& n = nodes_.at(static_cast<std::size_t>(id));
  if (n.grad.empty()) n.grad = Tensor(value(id).shape(), 0.0);
  return n.grad;
}

Tape::Id Tape::push(Tensor value, std::initializer_list<Id> inputs,
                    std::function<void(Tape&, Id)> backward) {
  Node n;
  n.value = std::move(value);
  for (Id i : inputs) {
    if (needs_grad(i)) n.needs_grad = true;
  }
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

void Tape::backward(Id root) {
  AVSR_REQUIRE(value(root).size() == 1, "backward(root) needs a scalar root, got shape ",
               value(root).shape_string());
  backward(root, Tensor(value(root).shape(), 1.0));
}

void Tape::backward(Id root, const Tensor& seed) {
  AVSR_REQUIRE(seed.same_shape(value(root)), "seed shape ", seed.shape_string(),
               " differs from root shape ", value(root).shape_string());
  if (!needs_grad(root)) return;
  grad(root).vec() += seed.vec();
  for (Id id = root; id >= 0; --id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, id);
  }
}

Gradients Tape::parameter_gradients() const {
  Gradients out;
  for (const auto& n : nodes_) {
    if (!n.param || n.grad.empty()) continue;
    auto it = out.find(n.param);
    if (it == out.end()) {
      out.emplace(n.param, n.grad);
    } else {
      it->second.vec() += n.grad.vec();
    }
  }
  return out;
}

void apply_running_stats(const std::vector<Tape::RunningStatUpdate>& updates, double momentum) {
  for (const auto& u : updates) {
    u.mean->value.vec() = (1.0 - momentum) * u.mean->value.vec() + momentum * u.batch_mean.vec();
    u.var->value.vec() = (1.0 - momentum) * u.var->value.vec() + momentum * u.batch_var.vec();
  }
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvDims {
  int cin, t, h, w;
  int cout, to, ho, wo;
  int kc;  // cin * kt * kh * kw
};

ConvDims conv_dims(const Tensor& x, const Tensor& weight, const ConvGeometry& g) {
  AVSR_REQUIRE(x.rank() == 4, "conv input must be [C,T,H,W], got ", x.shape_string());
  AVSR_REQUIRE(weight.rank() == 5, "conv weight must be [Cout,Cin,kt,kh,kw], got ", weight.shape_string());
  ConvDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), 0, 0, 0, 0};
  AVSR_REQUIRE(weight.dim(1) == d.cin && weight.dim(2) == g.kt && weight.dim(3) == g.kh &&
                   weight.dim(4) == g.kw,
               "conv weight ", weight.shape_string(), " does not match input ", x.shape_string(),
               " and kernel ", g.kt, "x", g.kh, "x", g.kw);
  d.to = g.out_t(d.t);
  d.ho = g.out_h(d.h);
  d.wo = g.out_w(d.w);
  AVSR_REQUIRE(d.to >= 1 && d.ho >= 1 && d.wo >= 1, "conv output would be empty for input ",
               x.shape_string());
  d.kc = d.cin * g.kt * g.kh * g.kw;
  return d;
}

// Columns are (t, ho, wo) for output frames [t0, t1).
// Input frames [lo, hi) of output frames [t0, t1) at tap dt stay in range.
std::pair<int, int> valid_frames(const ConvDims& d, const ConvGeometry& g, int t0, int t1, int dt) {
  int lo = t0, hi = t1;
  while (lo < hi && lo * g.st - g.pt + dt < 0) ++lo;
  while (hi > lo && (hi - 1) * g.st - g.pt + dt >= d.t) --hi;
  return {lo, hi};
}

bool temporal_only(const ConvDims& d, const ConvGeometry& g) {
  return d.h == 1 && d.w == 1 && g.kh == 1 && g.kw == 1 && g.ph == 0 && g.pw == 0;
}

void im2col(const double* x, const ConvDims& d, const ConvGeometry& g, int t0, int t1, double* col) {
  const int ncols = (t1 - t0) * d.ho * d.wo;
  if (temporal_only(d, g)) {
    for (int ci = 0; ci < d.cin; ++ci) {
      const double* xc = x + static_cast<std::ptrdiff_t>(ci) * d.t;
      for (int dt = 0; dt < g.kt; ++dt) {
        double* out = col + static_cast<std::ptrdiff_t>(ci * g.kt + dt) * ncols - t0;
        const auto [lo, hi] = valid_frames(d, g, t0, t1, dt);
        for (int t = t0; t < lo; ++t) out[t] = 0.0;
        const double* src = xc - g.pt + dt;
        for (int t = lo; t < hi; ++t) out[t] = src[t * g.st];
        for (int t = std::max(lo, hi); t < t1; ++t) out[t] = 0.0;
      }
    }
    return;
  }
  int r = 0;
  for (int ci = 0; ci < d.cin; ++ci) {
    for (int dt = 0; dt < g.kt; ++dt) {
      for (int dh = 0; dh < g.kh; ++dh) {
        for (int dw = 0; dw < g.kw; ++dw, ++r) {
          double* out = col + static_cast<std::ptrdiff_t>(r) * ncols;
          for (int t = t0; t < t1; ++t) {
            const int it = t * g.st - g.pt + dt;
            const bool t_ok = it >= 0 && it < d.t;
            for (int oh = 0; oh < d.ho; ++oh) {
              const int ih = oh * g.sh - g.ph + dh;
              const bool row_ok = t_ok && ih >= 0 && ih < d.h;
              const double* src = row_ok ? x + ((static_cast<std::ptrdiff_t>(ci) * d.t + it) * d.h + ih) * d.w : nullptr;
              for (int ow = 0; ow < d.wo; ++ow) {
                const int iw = ow * g.sw - g.pw + dw;
                *out++ = (row_ok && iw >= 0 && iw < d.w) ? src[iw] : 0.0;
              }
            }
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvDims& d, const ConvGeometry& g, int t0, int t1, double* dx) {
  const int ncols = (t1 - t0) * d.ho * d.wo;
  if (temporal_only(d, g)) {
    for (int ci = 0; ci < d.cin; ++ci) {
      double* dc = dx + static_cast<std::ptrdiff_t>(ci) * d.t - g.pt;
      for (int dt = 0; dt < g.kt; ++dt) {
        const double* in = col + static_cast<std::ptrdiff_t>(ci * g.kt + dt) * ncols - t0;
        const auto [lo, hi] = valid_frames(d, g, t0, t1, dt);
        for (int t = lo; t < hi; ++t) dc[t * g.st + dt] += in[t];
      }
    }
    return;
  }
  int r = 0;
  for (int ci = 0; ci < d.cin; ++ci) {
    for (int dt = 0; dt < g.kt; ++dt) {
      for (int dh = 0; dh < g.kh; ++dh) {
        for (int dw = 0; dw < g.kw; ++dw, ++r) {
          const double* in = col + static_cast<std::ptrdiff_t>(r) * ncols;
          for (int t = t0; t < t1; ++t) {
            const int it = t * g.st - g.pt + dt;
            const bool t_ok = it >= 0 && it < d.t;
            for (int oh = 0; oh < d.ho; ++oh) {
              const int ih = oh * g.sh - g.ph + dh;
              const bool row_ok = t_ok && ih >= 0 && ih < d.h;
              double* dst = row_ok ? dx + ((static_cast<std::ptrdiff_t>(ci) * d.t + it) * d.h + ih) * d.w : nullptr;
              for (int ow = 0; ow < d.wo; ++ow, ++in) {
                const int iw = ow * g.sw - g.pw + dw;
                if (row_ok && iw >= 0 && iw < d.w) dst[iw] += *in;
              }
            }
          }
        }
      }
    }
  }
}

// Output frames per im2col chunk, keeping the column buffer near 2^21
// doubles.
int chunk_frames(const ConvDims& d) {
  const std::size_t per_t = static_cast<std::size_t>(d.kc) * d.ho * d.wo;
  return static_cast<int>(std::clamp<std::size_t>((std::size_t{1} << 21) / std::max<std::size_t>(per_t, 1), 1,
                                                  static_cast<std::size_t>(d.to)));
}

using StridedMap = Eigen::Map<RowMatrix, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>>;

}  // namespace

Tape::Id conv(Tape& tape, Tape::Id x, Tape::Id weight, Tape::Id bias, const ConvGeometry& g) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(weight);
  const ConvDims d = conv_dims(xv, wv, g);
  if (bias != Tape::kNone) {
    AVSR_REQUIRE(tape.value(bias).size() == static_cast<std::size_t>(d.cout), "conv bias size mismatch");
  }
  Tensor y({d.cout, d.to, d.ho, d.wo});
  const int plane = d.ho * d.wo;
  const int stride = d.to * plane;
  const int chunk = chunk_frames(d);
  AlignedBuffer col;
  const ConstMatrixMap wm(wv.data(), d.cout, d.kc);
  for (int t0 = 0; t0 < d.to; t0 += chunk) {
    const int t1 = std::min(d.to, t0 + chunk);
    const int n = (t1 - t0) * plane;
    col.resize(static_cast<std::size_t>(d.kc) * n);
    im2col(xv.data(), d, g, t0, t1, col.data());
    StridedMap ym(y.data() + static_cast<std::ptrdiff_t>(t0) * plane, d.cout, n, Eigen::OuterStride<>(stride));
    ym.noalias() = wm * ConstMatrixMap(col.data(), d.kc, n);
  }
  if (bias != Tape::kNone) {
    const Tensor& bv = tape.value(bias);
    for (int c = 0; c < d.cout; ++c) {
      double* row = y.data() + static_cast<std::ptrdiff_t>(c) * stride;
      for (int i = 0; i < stride; ++i) row[i] += bv[c];
    }
  }
  return tape.push(std::move(y), {x, weight, bias}, [x, weight, bias, g, d, plane, stride, chunk](Tape& tp, Tape::Id self) {
    const Tensor& gy = tp.grad(self);
    const Tensor& xv2 = tp.value(x);
    const ConstMatrixMap wm2(tp.value(weight).data(), d.cout, d.kc);
    const bool need_w = tp.needs_grad(weight), need_x = tp.needs_grad(x);
    AlignedBuffer col, dcol;
    for (int t0 = 0; t0 < d.to; t0 += chunk) {
      const int t1 = std::min(d.to, t0 + chunk);
      const int n = (t1 - t0) * plane;
      const ConstStridedMap gym(gy.data() + static_cast<std::ptrdiff_t>(t0) * plane, d.cout, n,
                                Eigen::OuterStride<>(stride));
      if (need_w) {
        col.resize(static_cast<std::size_t>(d.kc) * n);
        im2col(xv2.data(), d, g, t0, t1, col.data());
        MatrixMap(tp.grad(weight).data(), d.cout, d.kc).noalias() +=
            gym * ConstMatrixMap(col.data(), d.kc, n).transpose();
      }
      if (need_x) {
        dcol.resize(static_cast<std::size_t>(d.kc) * n);
        MatrixMap(dcol.data(), d.kc, n).noalias() = wm2.transpose() * gym;
        col2im(dcol.data(), d, g, t0, t1, tp.grad(x).data());
      }
    }
    if (bias != Tape::kNone && tp.needs_grad(bias)) {
      Tensor& gb = tp.grad(bias);
      for (int c = 0; c < d.cout; ++c) {
        const double* row = gy.data() + static_cast<std::ptrdiff_t>(c) * stride;
        double s = 0;
        for (int i = 0; i < stride; ++i) s += row[i];
        gb[c] += s;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Batch norm

Tape::Id batch_norm(Tape& tape, Tape::Id x, Tape::Id gamma, Tape::Id beta, Parameter& running_mean,
                    Parameter& running_var, bool training, double eps) {
  const Tensor& xv = tape.value(x);
  const int C = xv.dim(0);
  const auto M = static_cast<Eigen::Index>(xv.size() / static_cast<std::size_t>(C));
  AVSR_REQUIRE(tape.value(gamma).size() == static_cast<std::size_t>(C) &&
                   tape.value(beta).size() == static_cast<std::size_t>(C),
               "batch norm affine parameters do not match ", C, " channels");
  AVSR_REQUIRE(!training || M >= 2, "batch norm in training mode needs at least 2 positions per channel");
  const ConstMatrixMap xm(xv.data(), C, M);
  Eigen::VectorXd mean(C), inv_std(C);
  if (training) {
    mean = xm.rowwise().mean();
    const Eigen::VectorXd var = (xm.colwise() - mean).array().square().rowwise().mean();
    inv_std = (var.array() + eps).rsqrt();
    Tensor bm({C}), bv({C});
    bm.vec() = mean;
    bv.vec() = var * (static_cast<double>(M) / static_cast<double>(M - 1));
    tape.record_running_stats({&running_mean, &running_var, std::move(bm), std::move(bv)});
  } else {
    mean = running_mean.value.vec();
    inv_std = (running_var.value.vec().array() + eps).rsqrt();
  }
  Tensor xhat(xv.shape());
  MatrixMap hm(xhat.data(), C, M);
  hm = (xm.colwise() - mean).array().colwise() * inv_std.array();
  Tensor y(xv.shape());
  const auto gv = tape.value(gamma).vec(), bv = tape.value(beta).vec();
  MatrixMap(y.data(), C, M) = (hm.array().colwise() * gv.array()).colwise() + bv.array();
  return tape.push(std::move(y), {x, gamma, beta},
                   [x, gamma, beta, C, M, training, inv_std, xhat = std::move(xhat)](Tape& tp, Tape::Id self) {
                     const ConstMatrixMap gy(tp.grad(self).data(), C, M);
                     const ConstMatrixMap hm2(xhat.data(), C, M);
                     if (tp.needs_grad(gamma)) tp.grad(gamma).vec() += (gy.array() * hm2.array()).rowwise().sum().matrix();
                     if (tp.needs_grad(beta)) tp.grad(beta).vec() += gy.rowwise().sum();
                     if (!tp.needs_grad(x)) return;
                     const auto gv2 = tp.value(gamma).vec();
                     MatrixMap gx(tp.grad(x).data(), C, M);
                     const RowMatrix dh = gy.array().colwise() * gv2.array();
                     if (!training) {
                       gx += (dh.array().colwise() * inv_std.array()).matrix();
                       return;
                     }
                     const Eigen::VectorXd sum_dh = dh.rowwise().sum();
                     const Eigen::VectorXd sum_dh_h = (dh.array() * hm2.array()).rowwise().sum();
                     const double inv_m = 1.0 / static_cast<double>(M);
                     gx += (((dh.array() * static_cast<double>(M)).colwise() - sum_dh.array() -
                             hm2.array().colwise() * sum_dh_h.array())
                                .colwise() *
                            (inv_std.array() * inv_m))
                               .matrix();
                   });
}

// ---------------------------------------------------------------------------
// Elementwise and reshaping ops

Tape::Id relu(Tape& tape, Tape::Id x) {
  Tensor y = tape.value(x);
  for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
  return tape.push(std::move(y), {x}, [x](Tape& tp, Tape::Id self) {
    const Tensor& gy = tp.grad(self);
    const Tensor& yv = tp.value(self);
    Tensor& gx = tp.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (yv[i] > 0.0) gx[i] += gy[i];
    }
  });
}

Tape::Id add(Tape& tape, Tape::Id a, Tape::Id b) {
  AVSR_REQUIRE(tape.value(a).same_shape(tape.value(b)), "add: shapes ", tape.value(a).shape_string(),
               " and ", tape.value(b).shape_string(), " differ");
  Tensor y = tape.value(a);
  y.vec() += tape.value(b).vec();
  return tape.push(std::move(y), {a, b}, [a, b](Tape& tp, Tape::Id self) {
    const Tensor& gy = tp.grad(self);
    if (tp.needs_grad(a)) tp.grad(a).vec() += gy.vec();
    if (tp.needs_grad(b)) tp.grad(b).vec() += gy.vec();
  });
}

Tape::Id max_pool2d(Tape& tape, Tape::Id x, int kernel, int stride, int pad) {
  const Tensor& xv = tape.value(x);
  AVSR_REQUIRE(xv.rank() == 4, "max_pool2d input must be [C,T,H,W]");
  const int planes = xv.dim(0) * xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int Ho = (H + 2 * pad - kernel) / stride + 1, Wo = (W + 2 * pad - kernel) / stride + 1;
  AVSR_REQUIRE(Ho >= 1 && Wo >= 1, "max_pool2d output would be empty");
  Tensor y({xv.dim(0), xv.dim(1), Ho, Wo});
  std::vector<int> arg(y.size());
  for (int p = 0; p < planes; ++p) {
    const double* in = xv.data() + static_cast<std::ptrdiff_t>(p) * H * W;
    for (int oh = 0; oh < Ho; ++oh) {
      for (int ow = 0; ow < Wo; ++ow) {
        double best = -std::numeric_limits<double>::infinity();
        int best_i = -1;
        for (int dh = 0; dh < kernel; ++dh) {
          const int ih = oh * stride - pad + dh;
          if (ih < 0 || ih >= H) continue;
          for (int dw = 0; dw < kernel; ++dw) {
            const int iw = ow * stride - pad + dw;
            if (iw < 0 || iw >= W) continue;
            if (in[ih * W + iw] > best) {
              best = in[ih * W + iw];
              best_i = ih * W + iw;
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(p) * Ho + oh) * Wo + ow;
        y[o] = best;
        arg[o] = p * H * W + best_i;
      }
    }
  }
  return tape.push(std::move(y), {x}, [x, arg = std::move(arg)](Tape& tp, Tape::Id self) {
    const Tensor& gy = tp.grad(self);
    Tensor& gx = tp.grad(x);
    for (std::size_t o = 0; o < gy.size(); ++o) gx[static_cast<std::size_t>(arg[o])] += gy[o];
  });
}

Tape::Id spatial_mean(Tape& tape, Tape::Id x) {
  const Tensor& xv = tape.value(x);
  AVSR_REQUIRE(xv.rank() == 4, "spatial_mean input must be [C,T,H,W]");
  const int C = xv.dim(0), T = xv.dim(1), P = xv.dim(2) * xv.dim(3);
  Tensor y({T, C});
  for (int c = 0; c < C; ++c) {
    for (int t = 0; t < T; ++t) {
      const double* in = xv.data() + (static_cast<std::ptrdiff_t>(c) * T + t) * P;
      double s = 0;
      for (int i = 0; i < P; ++i) s += in[i];
      y[static_cast<std::size_t>(t) * C + c] = s / P;
    }
  }
  return tape.push(std::move(y), {x}, [x, C, T, P](Tape& tp, Tape::Id self) {
    const Tensor& gy = tp.grad(self);
    Tensor& gx = tp.grad(x);
    for (int c = 0; c < C; ++c) {
      for (int t = 0; t < T; ++t) {
        const double g = gy[static_cast<std::size_t>(t) * C + c] / P;
        double* out = gx.data() + (static_cast<std::ptrdiff_t>(c) * T + t) * P;
        for (int i = 0; i < P; ++i) out[i] += g;
      }
    }
  });
}

Tape::Id channels_last(Tape& tape, Tape::Id x) {
  const Tensor& xv = tape.value(x);
  const int C = xv.dim(0);
  const auto M = static_cast<int>(xv.size() / static_cast<std::size_t>(C));
  Tensor y({M, C});
  y.matrix() = ConstMatrixMap(xv.data(), C, M).transpose();
  return tape.push(std::move(y), {x}, [x, C, M](Tape& tp, Tape::Id self) {
    MatrixMap(tp.grad(x).data(), C, M) += tp.grad(self).matrix().transpose();
  });
}

Tape::Id avg_pool_rows(Tape& tape, Tape::Id x, int window) {
  const Tensor& xv = tape.value(x);
  AVSR_REQUIRE(xv.rank() == 2, "avg_pool_rows input must be [N,D]");
  AVSR_REQUIRE(window >= 1, "pooling window must be positive");
  const int N = xv.dim(0), D = xv.dim(1), No = N / window;
  AVSR_REQUIRE(No >= 1, "avg_pool_rows: ", N, " rows is shorter than window ", window);
  Tensor y({No, D});
  const auto xm = xv.matrix();
  auto ym = y.matrix();
  for (int i = 0; i < No; ++i) ym.row(i) = xm.middleRows(static_cast<Eigen::Index>(i) * window, window).colwise().mean();
  return tape.push(std::move(y), {x}, [x, window, No](Tape& tp, Tape::Id self) {
    const auto gy = tp.grad(self).matrix();
    auto gx = tp.grad(x).matrix();
    for (int i = 0; i < No; ++i) {
      gx.middleRows(static_cast<Eigen::Index>(i) * window, window).rowwise() += gy.row(i) / window;
    }
  });
}

Tape::Id concat_cols(Tape& tape, Tape::Id a, Tape::Id b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  AVSR_REQUIRE(av.rank() == 2 && bv.rank() == 2, "concat_cols needs [T,D] inputs");
  AVSR_REQUIRE(av.dim(0) == bv.dim(0), "concat_cols: frame counts differ (", av.dim(0), " vs ",
               bv.dim(0), ")");
  const int T = av.dim(0), A = av.dim(1), B = bv.dim(1);
  Tensor y({T, A + B});
  y.matrix().leftCols(A) = av.matrix();
  y.matrix().rightCols(B) = bv.matrix();
  return tape.push(std::move(y), {a, b}, [a, b, A, B](Tape& tp, Tape::Id self) {
    const auto gy = tp.grad(self).matrix();
    if (tp.needs_grad(a)) tp.grad(a).matrix() += gy.leftCols(A);
    if (tp.needs_grad(b)) tp.grad(b).matrix() += gy.rightCols(B);
  });
}

Tape::Id linear(Tape& tape, Tape::Id x, Tape::Id weight, Tape::Id bias) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(weight);
  AVSR_REQUIRE(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(1), "linear: input ",
               xv.shape_string(), " incompatible with weight ", wv.shape_string());
  Tensor y({xv.dim(0), wv.dim(0)});
  y.matrix().noalias() = xv.matrix() * wv.matrix().transpose();
  if (bias != Tape::kNone) y.matrix().rowwise() += tape.value(bias).vec().transpose();
  return tape.push(std::move(y), {x, weight, bias}, [x, weight, bias](Tape& tp, Tape::Id self) {
    const auto gy = tp.grad(self).matrix();
    if (tp.needs_grad(x)) tp.grad(x).matrix().noalias() += gy * tp.value(weight).matrix();
    if (tp.needs_grad(weight)) tp.grad(weight).matrix().noalias() += gy.transpose() * tp.value(x).matrix();
    if (bias != Tape::kNone && tp.needs_grad(bias)) tp.grad(bias).vec() += gy.colwise().sum().transpose();
  });
}

Tape::Id log_softmax(Tape& tape, Tape::Id x) {
  const Tensor& xv = tape.value(x);
  AVSR_REQUIRE(xv.rank() == 2, "log_softmax input must be [T,K]");
  Tensor y = xv;
  auto ym = y.matrix();
  for (Eigen::Index t = 0; t < ym.rows(); ++t) {
    const double mx = ym.row(t).maxCoeff();
    const double lse = mx + std::log((ym.row(t).array() - mx).exp().sum());
    ym.row(t).array() -= lse;
  }
  return tape.push(std::move(y), {x}, [x](Tape& tp, Tape::Id self) {
    const auto gy = tp.grad(self).matrix();
    const auto yv = tp.value(self).matrix();
    const Eigen::VectorXd s = gy.rowwise().sum();
    tp.grad(x).matrix() += gy - (yv.array().exp().colwise() * s.array()).matrix();
  });
}

// ---------------------------------------------------------------------------
// GRU

namespace {
inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }
}  // namespace

Tape::Id gru(Tape& tape, Tape::Id x, const GruWeights& w, bool reverse) {
  const Tensor& xv = tape.value(x);
  const Tensor& wih = tape.value(w.w_ih);
  const Tensor& whh = tape.value(w.w_hh);
  AVSR_REQUIRE(xv.rank() == 2, "gru input must be [T,D]");
  const int T = xv.dim(0), D = xv.dim(1), H = whh.dim(1);
  AVSR_REQUIRE(wih.dim(0) == 3 * H && wih.dim(1) == D && whh.dim(0) == 3 * H, "gru weights ",
               wih.shape_string(), "/", whh.shape_string(), " do not match input ", xv.shape_string());
  const auto bih = tape.value(w.b_ih).vec(), bhh = tape.value(w.b_hh).vec();

  // Per step: r, z, n, W_hn h + b_hn, h_prev (5H values).
  auto cache = std::make_shared<RowMatrix>(T, 5 * H);
  RowMatrix gx = xv.matrix() * wih.matrix().transpose();
  gx.rowwise() += bih.transpose();
  Tensor y({T, H});
  Eigen::VectorXd h = Eigen::VectorXd::Zero(H);
  Eigen::VectorXd gh(3 * H);
  const auto whm = whh.matrix();
  for (int step = 0; step < T; ++step) {
    const int t = reverse ? T - 1 - step : step;
    gh.noalias() = whm * h;
    gh += bhh;
    auto c = cache->row(t);
    c.segment(4 * H, H) = h.transpose();
    for (int j = 0; j < H; ++j) {
      const double r = sigmoid(gx(t, j) + gh(j));
      const double z = sigmoid(gx(t, H + j) + gh(H + j));
      const double n = std::tanh(gx(t, 2 * H + j) + r * gh(2 * H + j));
      c(j) = r;
      c(H + j) = z;
      c(2 * H + j) = n;
      c(3 * H + j) = gh(2 * H + j);
      h(j) = (1.0 - z) * n + z * h(j);
    }
    y.matrix().row(t) = h.transpose();
  }
  return tape.push(std::move(y), {x, w.w_ih, w.w_hh, w.b_ih, w.b_hh},
                   [x, w, reverse, T, D, H, cache](Tape& tp, Tape::Id self) {
                     const auto gy = tp.grad(self).matrix();
                     const auto whm2 = tp.value(w.w_hh).matrix();
                     RowMatrix dgx(T, 3 * H), dgh(T, 3 * H), hprev(T, H);
                     Eigen::VectorXd dh = Eigen::VectorXd::Zero(H);
                     for (int step = T - 1; step >= 0; --step) {
                       const int t = reverse ? T - 1 - step : step;
                       const auto c = cache->row(t);
                       dh += gy.row(t).transpose();
                       for (int j = 0; j < H; ++j) {
                         const double r = c(j), z = c(H + j), n = c(2 * H + j), hn = c(3 * H + j),
                                      hp = c(4 * H + j);
                         const double dn = dh(j) * (1.0 - z);
                         const double dz = dh(j) * (hp - n);
                         const double dan = dn * (1.0 - n * n);
                         const double dr = dan * hn;
                         const double dar = dr * r * (1.0 - r);
                         const double daz = dz * z * (1.0 - z);
                         dgx(t, j) = dar;
                         dgx(t, H + j) = daz;
                         dgx(t, 2 * H + j) = dan;
                         dgh(t, j) = dar;
                         dgh(t, H + j) = daz;
                         dgh(t, 2 * H + j) = dan * r;
                         dh(j) *= z;
                       }
                       dh.noalias() += whm2.transpose() * dgh.row(t).transpose();
                       hprev.row(t) = c.segment(4 * H, H);
                     }
                     if (tp.needs_grad(w.w_hh)) tp.grad(w.w_hh).matrix().noalias() += dgh.transpose() * hprev;
                     if (tp.needs_grad(w.b_hh)) tp.grad(w.b_hh).vec() += dgh.colwise().sum().transpose();
                     if (tp.needs_grad(w.w_ih)) tp.grad(w.w_ih).matrix().noalias() += dgx.transpose() * tp.value(x).matrix();
                     if (tp.needs_grad(w.b_ih)) tp.grad(w.b_ih).vec() += dgx.colwise().sum().transpose();
                     if (tp.needs_grad(x)) tp.grad(x).matrix().noalias() += dgx * tp.value(w.w_ih).matrix();
                     (void)D;
                   });
}

// ---------------------------------------------------------------------------
// Scalar heads

Tape::Id weighted_sum(Tape& tape, Tape::Id x, const Tensor& weights) {
  AVSR_REQUIRE(weights.size() == tape.value(x).size(), "weighted_sum: weight count mismatch");
  Tensor y(std::vector<int>{}, tape.value(x).vec().dot(weights.vec()));
  return tape.push(std::move(y), {x}, [x, weights](Tape& tp, Tape::Id self) {
    tp.grad(x).vec() += tp.grad(self)[0] * weights.vec();
  });
}

Tape::Id ctc_loss(Tape& tape, Tape::Id logprobs, const ctc::LabelSequence& target, ctc::LossResult* result) {
  const Tensor& lv = tape.value(logprobs);
  AVSR_REQUIRE(lv.rank() == 2, "ctc_loss input must be [T,K]");
  auto r = std::make_shared<ctc::LossResult>(ctc::ctc_loss(RowMatrix(lv.matrix()), target));
  if (result) *result = *r;
  Tensor y(std::vector<int>{}, r->loss);
  return tape.push(std::move(y), {logprobs}, [logprobs, r](Tape& tp, Tape::Id self) {
    if (!r->reachable) return;
    tp.grad(logprobs).matrix() += tp.grad(self)[0] * r->gradient;
  });
}

}  // namespace avsr::nn
