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

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "avsr/ctc.hpp"
#include "avsr/tensor.hpp"

// Minimal reverse-mode differentiation for the recognizer networks.
//
// Parameters live in a ParameterStore owned by the model. A forward pass
// records onto a Tape, which references (never mutates) parameter values,
// so concurrent forward passes over one model each use their own tape.
namespace avsr::nn {

struct Parameter {
  std::string name;
  Tensor value;
  // Buffers such as batch-norm running statistics are saved with the
  // model but never receive gradients.
  bool is_buffer = false;
};

class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor value, bool is_buffer = false);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  // Insertion order.
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t scalar_count() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, Parameter*> index_;
};

using Gradients = std::unordered_map<const Parameter*, Tensor>;

class Tape {
 public:
  using Id = int;
  static constexpr Id kNone = -1;

  Id constant(Tensor value);
  // Parameter leaf. With trainable=false the value is used but no gradient
  // is collected for it.
  Id parameter(const Parameter& p, bool trainable);

  const Tensor& value(Id id) const;
  bool needs_grad(Id id) const { return id >= 0 && nodes_[id].needs_grad; }
  // Gradient buffer, allocated as zeros on first use.
  Tensor& grad(Id id);

  // Records a node. `backward` runs only when some input needs a gradient.
  Id push(Tensor value, std::initializer_list<Id> inputs, std::function<void(Tape&, Id)> backward);

  // Seeds d(root) = 1 for a scalar root and propagates to every input.
  void backward(Id root);
  void backward(Id root, const Tensor& seed);

  // Gradients of every trainable parameter leaf reached by backward().
  Gradients parameter_gradients() const;

  struct RunningStatUpdate {
    Parameter* mean;
    Parameter* var;
    Tensor batch_mean;
    Tensor batch_var;  // unbiased
  };
  void record_running_stats(RunningStatUpdate u) { stat_updates_.push_back(std::move(u)); }
  const std::vector<RunningStatUpdate>& running_stat_updates() const { return stat_updates_; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* ref = nullptr;
    const Parameter* param = nullptr;
    Tensor grad;
    bool needs_grad = false;
    std::function<void(Tape&, Id)> backward;
  };
  std::vector<Node> nodes_;
  std::vector<RunningStatUpdate> stat_updates_;
};

// Moves running statistics towards the recorded batch statistics:
// running = (1 - momentum) * running + momentum * batch.
void apply_running_stats(const std::vector<Tape::RunningStatUpdate>& updates, double momentum = 0.1);

// ---------------------------------------------------------------------------
// Operations. Image-like tensors are [C, T, H, W]; sequences are [T, D].

struct ConvGeometry {
  int kt = 1, kh = 1, kw = 1;
  int st = 1, sh = 1, sw = 1;
  int pt = 0, ph = 0, pw = 0;

  int out_t(int t) const { return (t + 2 * pt - kt) / st + 1; }
  int out_h(int h) const { return (h + 2 * ph - kh) / sh + 1; }
  int out_w(int w) const { return (w + 2 * pw - kw) / sw + 1; }
};

// x [Cin,T,H,W], weight [Cout,Cin,kt,kh,kw], optional bias [Cout];
// zero padding.
Tape::Id conv(Tape& tape, Tape::Id x, Tape::Id weight, Tape::Id bias, const ConvGeometry& g);

// Per-channel normalization over all non-channel positions of x [C, ...].
// In training mode the batch statistics are used and recorded for the
// running averages; otherwise the running statistics are used.
Tape::Id batch_norm(Tape& tape, Tape::Id x, Tape::Id gamma, Tape::Id beta, Parameter& running_mean,
                    Parameter& running_var, bool training, double eps = 1e-5);

Tape::Id relu(Tape& tape, Tape::Id x);
Tape::Id add(Tape& tape, Tape::Id a, Tape::Id b);

// Spatial max pooling of each (channel, frame) plane of x [C,T,H,W].
Tape::Id max_pool2d(Tape& tape, Tape::Id x, int kernel, int stride, int pad);

// [C,T,H,W] -> [T,C], averaging over H and W.
Tape::Id spatial_mean(Tape& tape, Tape::Id x);

// [C, ...] -> [M, C] where M is the product of the remaining dimensions.
Tape::Id channels_last(Tape& tape, Tape::Id x);

// [N,D] -> [N / window, D] by non-overlapping means; a trailing partial
// window is dropped.
Tape::Id avg_pool_rows(Tape& tape, Tape::Id x, int window);

// [T,A], [T,B] -> [T,A+B]
Tape::Id concat_cols(Tape& tape, Tape::Id a, Tape::Id b);

// x [T,D], weight [O,D], bias [O] -> [T,O]
Tape::Id linear(Tape& tape, Tape::Id x, Tape::Id weight, Tape::Id bias);

// Row-wise log-softmax of [T,K].
Tape::Id log_softmax(Tape& tape, Tape::Id x);

struct GruWeights {
  Tape::Id w_ih, w_hh, b_ih, b_hh;  // [3H,D], [3H,H], [3H], [3H]; gate order r,z,n
};

// One direction of a gated recurrent layer over x [T,D] -> [T,H], from a
// zero initial state. reverse=true runs from the last frame to the first.
Tape::Id gru(Tape& tape, Tape::Id x, const GruWeights& w, bool reverse);

// Scalar sum(x * weights); weights are constant.
Tape::Id weighted_sum(Tape& tape, Tape::Id x, const Tensor& weights);

// CTC negative log-likelihood of [T,K] log-probabilities as a scalar node.
// The result's `reachable` flag reports an impossible target, in which
// case the node's value is +inf and carries no gradient.
Tape::Id ctc_loss(Tape& tape, Tape::Id logprobs, const ctc::LabelSequence& target,
                  ctc::LossResult* result = nullptr);

}  // namespace avsr::nn
