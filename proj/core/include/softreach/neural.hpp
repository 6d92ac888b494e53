#ifndef SOFTREACH_NEURAL_HPP_
#define SOFTREACH_NEURAL_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "softreach/rng.hpp"

// Small dense networks with hand-written reverse mode.
//
// Batched activations are stored feature-major with the batch index
// innermost: value (row, b) lives at data[row * batch + b]. Every kernel
// accumulates each output column in the same order regardless of batch
// size, so a batch of B columns is bit-identical to B single-column calls.
namespace softreach::nn {

// A named parameter tensor, rows x cols row-major (cols == 1 for vectors).
struct TensorRef {
  std::string name;
  std::vector<double>& data;
  std::size_t rows;
  std::size_t cols;
};

struct ConstTensorRef {
  std::string name;
  const std::vector<double>& data;
  std::size_t rows;
  std::size_t cols;
};

template <class P>
concept ParamContainer = requires(P& p, const P& cp) {
  p.for_each_tensor([](TensorRef) {});
  cp.for_each_tensor([](ConstTensorRef) {});
};

struct Batch {
  std::size_t rows = 0;
  std::size_t batch = 0;
  std::vector<double> data;

  Batch() = default;
  Batch(std::size_t rows_, std::size_t batch_)
      : rows(rows_), batch(batch_), data(rows_ * batch_, 0.0) {}

  double& operator()(std::size_t r, std::size_t b) { return data[r * batch + b]; }
  double operator()(std::size_t r, std::size_t b) const { return data[r * batch + b]; }
  double* row(std::size_t r) { return data.data() + r * batch; }
  const double* row(std::size_t r) const { return data.data() + r * batch; }
};

// T consecutive Batch blocks of rows x batch.
struct Sequence {
  std::size_t steps = 0;
  std::size_t rows = 0;
  std::size_t batch = 0;
  std::vector<double> data;

  Sequence() = default;
  Sequence(std::size_t steps_, std::size_t rows_, std::size_t batch_)
      : steps(steps_), rows(rows_), batch(batch_), data(steps_ * rows_ * batch_, 0.0) {}

  std::size_t block() const { return rows * batch; }
  double* at(std::size_t t) { return data.data() + t * block(); }
  const double* at(std::size_t t) const { return data.data() + t * block(); }
  double& operator()(std::size_t t, std::size_t r, std::size_t b) {
    return data[(t * rows + r) * batch + b];
  }
  double operator()(std::size_t t, std::size_t r, std::size_t b) const {
    return data[(t * rows + r) * batch + b];
  }
};

namespace kernels {

// out(R x B) += W(R x K) * x(K x B)
void matmul_acc(const double* w, std::size_t rows, std::size_t cols, const double* x,
                std::size_t batch, double* out);
// dx(K x B) += W^T(K x R) * dout(R x B)
void matmul_t_acc(const double* w, std::size_t rows, std::size_t cols, const double* dout,
                  std::size_t batch, double* dx);
// dw(R x K) += dout(R x B) * x^T(B x K); scratch is resized as needed
void outer_acc(const double* dout, std::size_t rows, const double* x, std::size_t cols,
               std::size_t batch, double* dw, std::vector<double>& scratch);

}  // namespace kernels

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// ---------------------------------------------------------------- MLP

enum class Activation { identity, tanh };

std::string to_string(Activation a);
Activation parse_activation(const std::string& text);

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> w;  // out x in
  std::vector<double> b;  // out
  Activation activation = Activation::identity;
};

struct MlpParams {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in; }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out; }
  void validate() const;

  template <class F>
  void for_each_tensor(F&& f) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      f(TensorRef{"w" + std::to_string(l), layers[l].w, layers[l].out, layers[l].in});
      f(TensorRef{"b" + std::to_string(l), layers[l].b, layers[l].out, 1});
    }
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      f(ConstTensorRef{"w" + std::to_string(l), layers[l].w, layers[l].out, layers[l].in});
      f(ConstTensorRef{"b" + std::to_string(l), layers[l].b, layers[l].out, 1});
    }
  }
};

// dims = {in, h1, ..., out}; hidden layers use `hidden`, the last uses
// `output`. Weights uniform in +-1/sqrt(fan_in), the last layer scaled by
// output_scale; biases zero.
MlpParams make_mlp(std::span<const std::size_t> dims, Activation hidden,
                   Activation output, Rng& rng, double output_scale = 1.0);

// activations[0] is the input, activations[l + 1] the output of layer l
struct MlpTape {
  std::vector<Batch> activations;
};

Batch mlp_forward(const MlpParams& params, const Batch& x, MlpTape* tape = nullptr);
// Accumulates into grads; writes d_input when non-null.
void mlp_backward(const MlpParams& params, const MlpTape& tape, const Batch& d_out,
                  MlpParams& grads, Batch* d_input = nullptr);

// ---------------------------------------------------------------- LSTM

// Gate rows are stacked input, forget, candidate, output.
struct LstmParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t output_dim = 0;    // 0 disables the readout
  std::vector<double> w_input;      // 4H x I
  std::vector<double> w_recurrent;  // 4H x H
  std::vector<double> bias;         // 4H
  std::vector<double> w_out;        // O x H
  std::vector<double> b_out;        // O

  void validate() const;

  template <class F>
  void for_each_tensor(F&& f) {
    f(TensorRef{"w_input", w_input, 4 * hidden_dim, input_dim});
    f(TensorRef{"w_recurrent", w_recurrent, 4 * hidden_dim, hidden_dim});
    f(TensorRef{"bias", bias, 4 * hidden_dim, 1});
    f(TensorRef{"w_out", w_out, output_dim, hidden_dim});
    f(TensorRef{"b_out", b_out, output_dim, 1});
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    f(ConstTensorRef{"w_input", w_input, 4 * hidden_dim, input_dim});
    f(ConstTensorRef{"w_recurrent", w_recurrent, 4 * hidden_dim, hidden_dim});
    f(ConstTensorRef{"bias", bias, 4 * hidden_dim, 1});
    f(ConstTensorRef{"w_out", w_out, output_dim, hidden_dim});
    f(ConstTensorRef{"b_out", b_out, output_dim, 1});
  }
};

// Uniform +-1/sqrt(fan_in) weights, forget-gate bias 1, other biases 0.
LstmParams make_lstm(std::size_t input_dim, std::size_t hidden_dim, std::size_t output_dim,
                     Rng& rng);

struct LstmStepResult {
  std::vector<double> h;
  std::vector<double> c;
  std::vector<double> y;
};

LstmStepResult lstm_step(const LstmParams& params, std::span<const double> x,
                         std::span<const double> h, std::span<const double> c);

// Batched single step; every pointer is a rows x batch block.
// gates (4H x B) receives post-activation gate values and may be null.
void lstm_step_batch(const LstmParams& params, std::size_t batch, const double* x,
                     const double* h, const double* c, double* h_out, double* c_out,
                     double* y_out, double* gates);

struct LstmState {
  Batch h;
  Batch c;
};

LstmState zero_state(const LstmParams& params, std::size_t batch);

struct LstmTape {
  Sequence inputs;  // T x I x B
  Sequence gates;   // T x 4H x B, post-activation
  Sequence h;       // (T + 1) x H x B; h.at(0) is the initial state
  Sequence c;       // (T + 1) x H x B
  std::vector<std::uint8_t> starts;  // T x B, empty when no resets
};

struct LstmForward {
  Sequence outputs;   // T x O x B (empty when O == 0)
  LstmState final_state;
};

// Runs T steps. starts (T x B, optional) zeroes the incoming state of a
// column before step t. Throws NumericError naming the step on non-finite
// cell state. Records the tape when non-null.
LstmForward lstm_forward(const LstmParams& params, const Sequence& inputs,
                         const LstmState& init,
                         std::span<const std::uint8_t> starts = {},
                         LstmTape* tape = nullptr);

// Reverse sweep. d_outputs is T x O x B (may be empty when O == 0);
// d_hidden (T x H x B, optional) adds gradient directly on h_t.
// Accumulates into grads; writes d_inputs when non-null.
void lstm_backward(const LstmParams& params, const LstmTape& tape,
                   const Sequence& d_outputs, const Sequence* d_hidden,
                   LstmParams& grads, Sequence* d_inputs = nullptr);

struct LossAndGrad {
  double loss = 0.0;
  LstmParams grads;
};

// Mean squared error over all steps, outputs and batch columns, from a zero
// initial state, with exact gradients.
LossAndGrad lstm_mse_loss(const LstmParams& params, const Sequence& inputs,
                          const Sequence& targets);

// Single-sequence convenience: inputs T x I, targets T x O, row-major.
LossAndGrad backprop_through_time(const LstmParams& params,
                                  std::span<const double> inputs,
                                  std::span<const double> targets, std::size_t steps);

// -------------------------------------------------- parameter utilities

template <ParamContainer P>
P zeros_like(const P& params) {
  P out = params;
  out.for_each_tensor([](TensorRef t) { std::fill(t.data.begin(), t.data.end(), 0.0); });
  return out;
}

template <ParamContainer P>
std::vector<std::span<double>> tensor_spans(P& params) {
  std::vector<std::span<double>> spans;
  params.for_each_tensor([&](TensorRef t) { spans.emplace_back(t.data); });
  return spans;
}

template <ParamContainer P>
std::vector<std::span<const double>> tensor_spans(const P& params) {
  std::vector<std::span<const double>> spans;
  params.for_each_tensor([&](ConstTensorRef t) { spans.emplace_back(t.data); });
  return spans;
}

template <ParamContainer P>
std::size_t parameter_count(const P& params) {
  std::size_t n = 0;
  params.for_each_tensor([&](ConstTensorRef t) { n += t.data.size(); });
  return n;
}

double global_norm(std::span<const std::span<const double>> tensors);
// Scales tensors in place so their joint l2 norm is at most max_norm;
// returns the norm before clipping.
double clip_global_norm(std::span<const std::span<double>> tensors, double max_norm);
bool all_finite(std::span<const std::span<const double>> tensors);

// ---------------------------------------------------------------- Adam

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

AdamState make_adam(std::span<const std::span<const double>> params, const AdamConfig& cfg);
// Bias-corrected Adam step over matching tensor lists.
void adam_update(std::span<const std::span<double>> params,
                 std::span<const std::span<const double>> grads, AdamState& state);

template <ParamContainer P>
AdamState make_adam(const P& params, const AdamConfig& cfg) {
  auto spans = tensor_spans(params);
  return make_adam(spans, cfg);
}

template <ParamContainer P>
void adam_update(P& params, const P& grads, AdamState& state) {
  auto p = tensor_spans(params);
  auto g = tensor_spans(grads);
  adam_update(p, g, state);
}

// ------------------------------------------------------- serialization

// Named arrays; matrices as nested row lists.
template <ParamContainer P>
nlohmann::json tensors_to_json(const P& params) {
  nlohmann::json j = nlohmann::json::object();
  params.for_each_tensor([&](ConstTensorRef t) {
    if (t.cols == 1) {
      j[t.name] = t.data;
    } else {
      nlohmann::json rows = nlohmann::json::array();
      for (std::size_t r = 0; r < t.rows; ++r) {
        rows.push_back(std::vector<double>(t.data.begin() + static_cast<std::ptrdiff_t>(r * t.cols),
                                           t.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * t.cols)));
      }
      j[t.name] = std::move(rows);
    }
  });
  return j;
}

// Fills tensors whose shapes are already set on params.
void tensors_from_json(const nlohmann::json& j, std::string_view name,
                       std::vector<double>& data, std::size_t rows, std::size_t cols);

template <ParamContainer P>
void fill_tensors_from_json(const nlohmann::json& j, P& params) {
  params.for_each_tensor(
      [&](TensorRef t) { tensors_from_json(j, t.name, t.data, t.rows, t.cols); });
}

nlohmann::json to_json(const LstmParams& params);
LstmParams lstm_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MlpParams& params);
MlpParams mlp_from_json(const nlohmann::json& j);

}  // namespace softreach::nn

#endif  // SOFTREACH_NEURAL_HPP_
