#include "softreach/neural.hpp"

#include <numeric>

#include "softreach/errors.hpp"

namespace softreach::nn {

namespace kernels {

void matmul_acc(const double* w, std::size_t rows, std::size_t cols, const double* x,
                std::size_t batch, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = out + r * batch;
    const double* wr = w + r * cols;
    for (std::size_t k = 0; k < cols; ++k) {
      const double wk = wr[k];
      const double* xk = x + k * batch;
      for (std::size_t b = 0; b < batch; ++b) o[b] += wk * xk[b];
    }
  }
}

void matmul_t_acc(const double* w, std::size_t rows, std::size_t cols, const double* dout,
                  std::size_t batch, double* dx) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* d = dout + r * batch;
    const double* wr = w + r * cols;
    for (std::size_t k = 0; k < cols; ++k) {
      const double wk = wr[k];
      double* dk = dx + k * batch;
      for (std::size_t b = 0; b < batch; ++b) dk[b] += wk * d[b];
    }
  }
}

void outer_acc(const double* dout, std::size_t rows, const double* x, std::size_t cols,
               std::size_t batch, double* dw, std::vector<double>& scratch) {
  scratch.resize(batch * cols);
  for (std::size_t k = 0; k < cols; ++k) {
    for (std::size_t b = 0; b < batch; ++b) scratch[b * cols + k] = x[k * batch + b];
  }
  for (std::size_t r = 0; r < rows; ++r) {
    double* dwr = dw + r * cols;
    const double* d = dout + r * batch;
    for (std::size_t b = 0; b < batch; ++b) {
      const double a = d[b];
      if (a == 0.0) continue;
      const double* xb = scratch.data() + b * cols;
      for (std::size_t k = 0; k < cols; ++k) dwr[k] += a * xb[k];
    }
  }
}

}  // namespace kernels

namespace {

void row_sum_acc(const double* d, std::size_t rows, std::size_t batch, double* out) {
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t b = 0; b < batch; ++b) s += d[r * batch + b];
    out[r] += s;
  }
}

void fill_uniform(std::vector<double>& v, double scale, Rng& rng) {
  for (double& x : v) x = scale * (2.0 * rng.uniform() - 1.0);
}

// copy of an H x B block with the columns flagged in starts zeroed
const double* masked_block(const double* src, std::size_t rows, std::size_t batch,
                           const std::uint8_t* starts, std::vector<double>& buf) {
  bool any = false;
  for (std::size_t b = 0; b < batch; ++b) any = any || starts[b];
  if (!any) return src;
  buf.assign(src, src + rows * batch);
  for (std::size_t b = 0; b < batch; ++b) {
    if (!starts[b]) continue;
    for (std::size_t r = 0; r < rows; ++r) buf[r * batch + b] = 0.0;
  }
  return buf.data();
}

}  // namespace

// ---------------------------------------------------------------- MLP

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "identity"; }

Activation parse_activation(const std::string& text) {
  if (text == "tanh") return Activation::tanh;
  if (text == "identity") return Activation::identity;
  throw FormatError("unknown activation '" + text + "'", 0);
}

void MlpParams::validate() const {
  if (layers.empty()) throw ConfigError("mlp: no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    if (L.w.size() != L.in * L.out || L.b.size() != L.out) {
      throw ConfigError("mlp: layer " + std::to_string(l) + " has inconsistent shapes");
    }
    if (l > 0 && layers[l - 1].out != L.in) {
      throw ConfigError("mlp: layer " + std::to_string(l) + " does not chain");
    }
  }
}

MlpParams make_mlp(std::span<const std::size_t> dims, Activation hidden, Activation output,
                   Rng& rng, double output_scale) {
  if (dims.size() < 2) throw ConfigError("make_mlp: need at least input and output dims");
  MlpParams p;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    DenseLayer layer;
    layer.in = dims[l];
    layer.out = dims[l + 1];
    layer.w.resize(layer.in * layer.out);
    layer.b.assign(layer.out, 0.0);
    const bool last = l + 2 == dims.size();
    double scale = 1.0 / std::sqrt(static_cast<double>(layer.in));
    if (last) scale *= output_scale;
    fill_uniform(layer.w, scale, rng);
    layer.activation = last ? output : hidden;
    p.layers.push_back(std::move(layer));
  }
  return p;
}

Batch mlp_forward(const MlpParams& params, const Batch& x, MlpTape* tape) {
  if (x.rows != params.input_dim()) {
    throw ConfigError("mlp_forward: input has " + std::to_string(x.rows) + " rows, expected " +
                      std::to_string(params.input_dim()));
  }
  if (tape) {
    tape->activations.clear();
    tape->activations.push_back(x);
  }
  Batch cur = x;
  for (const auto& L : params.layers) {
    Batch next(L.out, x.batch);
    for (std::size_t r = 0; r < L.out; ++r) {
      std::fill(next.row(r), next.row(r) + x.batch, L.b[r]);
    }
    kernels::matmul_acc(L.w.data(), L.out, L.in, cur.data.data(), x.batch, next.data.data());
    if (L.activation == Activation::tanh) {
      for (double& v : next.data) v = std::tanh(v);
    }
    if (tape) tape->activations.push_back(next);
    cur = std::move(next);
  }
  return cur;
}

void mlp_backward(const MlpParams& params, const MlpTape& tape, const Batch& d_out,
                  MlpParams& grads, Batch* d_input) {
  const std::size_t n_layers = params.layers.size();
  if (tape.activations.size() != n_layers + 1) throw ConfigError("mlp_backward: stale tape");
  const std::size_t batch = d_out.batch;
  Batch d = d_out;
  std::vector<double> scratch;
  for (std::size_t l = n_layers; l-- > 0;) {
    const auto& L = params.layers[l];
    auto& G = grads.layers[l];
    if (L.activation == Activation::tanh) {
      const auto& a = tape.activations[l + 1].data;
      for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] *= 1.0 - a[i] * a[i];
    }
    row_sum_acc(d.data.data(), L.out, batch, G.b.data());
    kernels::outer_acc(d.data.data(), L.out, tape.activations[l].data.data(), L.in, batch,
                       G.w.data(), scratch);
    if (l > 0 || d_input) {
      Batch dx(L.in, batch);
      kernels::matmul_t_acc(L.w.data(), L.out, L.in, d.data.data(), batch, dx.data.data());
      d = std::move(dx);
    }
  }
  if (d_input) *d_input = std::move(d);
}

// ---------------------------------------------------------------- LSTM

void LstmParams::validate() const {
  const std::size_t g = 4 * hidden_dim;
  if (hidden_dim == 0 || input_dim == 0) throw ConfigError("lstm: zero dimension");
  if (w_input.size() != g * input_dim || w_recurrent.size() != g * hidden_dim ||
      bias.size() != g || w_out.size() != output_dim * hidden_dim ||
      b_out.size() != output_dim) {
    throw ConfigError("lstm: inconsistent parameter shapes");
  }
}

LstmParams make_lstm(std::size_t input_dim, std::size_t hidden_dim, std::size_t output_dim,
                     Rng& rng) {
  LstmParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.output_dim = output_dim;
  p.w_input.resize(4 * hidden_dim * input_dim);
  p.w_recurrent.resize(4 * hidden_dim * hidden_dim);
  p.bias.assign(4 * hidden_dim, 0.0);
  p.w_out.resize(output_dim * hidden_dim);
  p.b_out.assign(output_dim, 0.0);
  const double gate_scale = 1.0 / std::sqrt(static_cast<double>(input_dim + hidden_dim));
  fill_uniform(p.w_input, gate_scale, rng);
  fill_uniform(p.w_recurrent, gate_scale, rng);
  fill_uniform(p.w_out, 1.0 / std::sqrt(static_cast<double>(hidden_dim)), rng);
  std::fill(p.bias.begin() + static_cast<std::ptrdiff_t>(hidden_dim),
            p.bias.begin() + static_cast<std::ptrdiff_t>(2 * hidden_dim), 1.0);
  p.validate();
  return p;
}

void lstm_step_batch(const LstmParams& params, std::size_t batch, const double* x,
                     const double* h, const double* c, double* h_out, double* c_out,
                     double* y_out, double* gates) {
  const std::size_t H = params.hidden_dim;
  std::vector<double> local;
  if (!gates) {
    local.resize(4 * H * batch);
    gates = local.data();
  }
  for (std::size_t r = 0; r < 4 * H; ++r) {
    std::fill(gates + r * batch, gates + (r + 1) * batch, params.bias[r]);
  }
  kernels::matmul_acc(params.w_input.data(), 4 * H, params.input_dim, x, batch, gates);
  kernels::matmul_acc(params.w_recurrent.data(), 4 * H, H, h, batch, gates);

  double* gi = gates;
  double* gf = gates + H * batch;
  double* gg = gates + 2 * H * batch;
  double* go = gates + 3 * H * batch;
  for (std::size_t k = 0; k < H * batch; ++k) {
    gi[k] = sigmoid(gi[k]);
    gf[k] = sigmoid(gf[k]);
    gg[k] = std::tanh(gg[k]);
    go[k] = sigmoid(go[k]);
    const double cn = gf[k] * c[k] + gi[k] * gg[k];
    c_out[k] = cn;
    h_out[k] = go[k] * std::tanh(cn);
  }
  if (params.output_dim > 0 && y_out) {
    for (std::size_t r = 0; r < params.output_dim; ++r) {
      std::fill(y_out + r * batch, y_out + (r + 1) * batch, params.b_out[r]);
    }
    kernels::matmul_acc(params.w_out.data(), params.output_dim, H, h_out, batch, y_out);
  }
}

LstmStepResult lstm_step(const LstmParams& params, std::span<const double> x,
                         std::span<const double> h, std::span<const double> c) {
  params.validate();
  if (x.size() != params.input_dim || h.size() != params.hidden_dim ||
      c.size() != params.hidden_dim) {
    throw ConfigError("lstm_step: shape mismatch");
  }
  LstmStepResult out;
  out.h.resize(params.hidden_dim);
  out.c.resize(params.hidden_dim);
  out.y.resize(params.output_dim);
  lstm_step_batch(params, 1, x.data(), h.data(), c.data(), out.h.data(), out.c.data(),
                  out.y.data(), nullptr);
  return out;
}

LstmState zero_state(const LstmParams& params, std::size_t batch) {
  return {Batch(params.hidden_dim, batch), Batch(params.hidden_dim, batch)};
}

LstmForward lstm_forward(const LstmParams& params, const Sequence& inputs,
                         const LstmState& init, std::span<const std::uint8_t> starts,
                         LstmTape* tape) {
  const std::size_t T = inputs.steps;
  const std::size_t B = inputs.batch;
  const std::size_t H = params.hidden_dim;
  const std::size_t O = params.output_dim;
  if (inputs.rows != params.input_dim) throw ConfigError("lstm_forward: input width mismatch");
  if (init.h.rows != H || init.h.batch != B || init.c.rows != H || init.c.batch != B) {
    throw ConfigError("lstm_forward: initial state shape mismatch");
  }
  if (!starts.empty() && starts.size() != T * B) {
    throw ConfigError("lstm_forward: starts must be T x B");
  }

  LstmForward out;
  if (O > 0) out.outputs = Sequence(T, O, B);
  Sequence h_seq(T + 1, H, B);
  Sequence c_seq(T + 1, H, B);
  Sequence gates(T, 4 * H, B);
  std::copy(init.h.data.begin(), init.h.data.end(), h_seq.at(0));
  std::copy(init.c.data.begin(), init.c.data.end(), c_seq.at(0));

  std::vector<double> hbuf, cbuf;
  for (std::size_t t = 0; t < T; ++t) {
    const double* hp = h_seq.at(t);
    const double* cp = c_seq.at(t);
    if (!starts.empty()) {
      hp = masked_block(hp, H, B, starts.data() + t * B, hbuf);
      cp = masked_block(cp, H, B, starts.data() + t * B, cbuf);
    }
    lstm_step_batch(params, B, inputs.at(t), hp, cp, h_seq.at(t + 1), c_seq.at(t + 1),
                    O > 0 ? out.outputs.at(t) : nullptr, gates.at(t));
    const double* cn = c_seq.at(t + 1);
    for (std::size_t k = 0; k < H * B; ++k) {
      if (!std::isfinite(cn[k])) throw NumericError("lstm_forward: non-finite cell state", t);
    }
  }

  out.final_state.h = Batch(H, B);
  out.final_state.c = Batch(H, B);
  std::copy(h_seq.at(T), h_seq.at(T) + H * B, out.final_state.h.data.begin());
  std::copy(c_seq.at(T), c_seq.at(T) + H * B, out.final_state.c.data.begin());

  if (tape) {
    tape->inputs = inputs;
    tape->gates = std::move(gates);
    tape->h = std::move(h_seq);
    tape->c = std::move(c_seq);
    tape->starts.assign(starts.begin(), starts.end());
  }
  return out;
}

void lstm_backward(const LstmParams& params, const LstmTape& tape, const Sequence& d_outputs,
                   const Sequence* d_hidden, LstmParams& grads, Sequence* d_inputs) {
  const std::size_t T = tape.inputs.steps;
  const std::size_t B = tape.inputs.batch;
  const std::size_t H = params.hidden_dim;
  const std::size_t I = params.input_dim;
  const std::size_t O = params.output_dim;
  if (O > 0 && (d_outputs.steps != T || d_outputs.rows != O || d_outputs.batch != B)) {
    throw ConfigError("lstm_backward: d_outputs shape mismatch");
  }
  if (d_hidden && (d_hidden->steps != T || d_hidden->rows != H || d_hidden->batch != B)) {
    throw ConfigError("lstm_backward: d_hidden shape mismatch");
  }
  if (d_inputs) *d_inputs = Sequence(T, I, B);

  std::vector<double> dh_next(H * B, 0.0), dc_next(H * B, 0.0);
  std::vector<double> dh(H * B), dpre(4 * H * B);
  std::vector<double> scratch, hbuf, cbuf;
  const bool has_starts = !tape.starts.empty();

  for (std::size_t t = T; t-- > 0;) {
    const double* h_t = tape.h.at(t + 1);
    const double* c_t = tape.c.at(t + 1);
    const double* hp = tape.h.at(t);
    const double* cp = tape.c.at(t);
    const std::uint8_t* st = has_starts ? tape.starts.data() + t * B : nullptr;
    if (st) {
      hp = masked_block(hp, H, B, st, hbuf);
      cp = masked_block(cp, H, B, st, cbuf);
    }

    dh = dh_next;
    if (O > 0) {
      const double* dy = d_outputs.at(t);
      row_sum_acc(dy, O, B, grads.b_out.data());
      kernels::outer_acc(dy, O, h_t, H, B, grads.w_out.data(), scratch);
      kernels::matmul_t_acc(params.w_out.data(), O, H, dy, B, dh.data());
    }
    if (d_hidden) {
      const double* extra = d_hidden->at(t);
      for (std::size_t k = 0; k < H * B; ++k) dh[k] += extra[k];
    }

    const double* g = tape.gates.at(t);
    const double* gi = g;
    const double* gf = g + H * B;
    const double* gg = g + 2 * H * B;
    const double* go = g + 3 * H * B;
    double* di = dpre.data();
    double* df = dpre.data() + H * B;
    double* dg = dpre.data() + 2 * H * B;
    double* dout = dpre.data() + 3 * H * B;
    for (std::size_t k = 0; k < H * B; ++k) {
      const double tc = std::tanh(c_t[k]);
      const double dc = dc_next[k] + dh[k] * go[k] * (1.0 - tc * tc);
      dout[k] = dh[k] * tc * go[k] * (1.0 - go[k]);
      di[k] = dc * gg[k] * gi[k] * (1.0 - gi[k]);
      df[k] = dc * cp[k] * gf[k] * (1.0 - gf[k]);
      dg[k] = dc * gi[k] * (1.0 - gg[k] * gg[k]);
      dc_next[k] = dc * gf[k];
    }

    row_sum_acc(dpre.data(), 4 * H, B, grads.bias.data());
    kernels::outer_acc(dpre.data(), 4 * H, tape.inputs.at(t), I, B, grads.w_input.data(),
                       scratch);
    kernels::outer_acc(dpre.data(), 4 * H, hp, H, B, grads.w_recurrent.data(), scratch);
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    kernels::matmul_t_acc(params.w_recurrent.data(), 4 * H, H, dpre.data(), B, dh_next.data());
    if (d_inputs) {
      kernels::matmul_t_acc(params.w_input.data(), 4 * H, I, dpre.data(), B, d_inputs->at(t));
    }
    if (st) {
      for (std::size_t b = 0; b < B; ++b) {
        if (!st[b]) continue;
        for (std::size_t k = 0; k < H; ++k) {
          dh_next[k * B + b] = 0.0;
          dc_next[k * B + b] = 0.0;
        }
      }
    }
  }
}

LossAndGrad lstm_mse_loss(const LstmParams& params, const Sequence& inputs,
                          const Sequence& targets) {
  params.validate();
  if (params.output_dim == 0) throw ConfigError("lstm_mse_loss: model has no readout");
  if (inputs.steps == 0) throw ConfigError("lstm_mse_loss: need at least one step");
  if (targets.steps != inputs.steps || targets.rows != params.output_dim ||
      targets.batch != inputs.batch) {
    throw ConfigError("lstm_mse_loss: target shape mismatch");
  }
  LstmTape tape;
  auto fwd = lstm_forward(params, inputs, zero_state(params, inputs.batch), {}, &tape);

  const double n = static_cast<double>(targets.data.size());
  Sequence d_out(targets.steps, targets.rows, targets.batch);
  double loss = 0.0;
  for (std::size_t i = 0; i < targets.data.size(); ++i) {
    const double r = fwd.outputs.data[i] - targets.data[i];
    loss += r * r;
    d_out.data[i] = 2.0 * r / n;
  }
  loss /= n;
  if (!std::isfinite(loss)) throw NumericError("lstm_mse_loss: non-finite loss");

  LossAndGrad result{loss, zeros_like(params)};
  lstm_backward(params, tape, d_out, nullptr, result.grads);
  return result;
}

LossAndGrad backprop_through_time(const LstmParams& params, std::span<const double> inputs,
                                  std::span<const double> targets, std::size_t steps) {
  if (steps < 1) throw ConfigError("backprop_through_time: need T >= 1");
  if (inputs.size() != steps * params.input_dim ||
      targets.size() != steps * params.output_dim) {
    throw ConfigError("backprop_through_time: shape mismatch");
  }
  Sequence x(steps, params.input_dim, 1);
  Sequence y(steps, params.output_dim, 1);
  std::copy(inputs.begin(), inputs.end(), x.data.begin());
  std::copy(targets.begin(), targets.end(), y.data.begin());
  return lstm_mse_loss(params, x, y);
}

// -------------------------------------------------- parameter utilities

double global_norm(std::span<const std::span<const double>> tensors) {
  double s = 0.0;
  for (auto t : tensors) {
    for (double v : t) s += v * v;
  }
  return std::sqrt(s);
}

double clip_global_norm(std::span<const std::span<double>> tensors, double max_norm) {
  double s = 0.0;
  for (auto t : tensors) {
    for (double v : t) s += v * v;
  }
  const double norm = std::sqrt(s);
  if (norm > max_norm && norm > 0.0) {
    const double k = max_norm / norm;
    for (auto t : tensors) {
      for (double& v : t) v *= k;
    }
  }
  return norm;
}

bool all_finite(std::span<const std::span<const double>> tensors) {
  for (auto t : tensors) {
    for (double v : t) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------- Adam

AdamState make_adam(std::span<const std::span<const double>> params, const AdamConfig& cfg) {
  AdamState s;
  s.config = cfg;
  for (auto p : params) {
    s.m.emplace_back(p.size(), 0.0);
    s.v.emplace_back(p.size(), 0.0);
  }
  return s;
}

void adam_update(std::span<const std::span<double>> params,
                 std::span<const std::span<const double>> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ConfigError("adam_update: tensor count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size() != grads[i].size() || params[i].size() != state.m[i].size()) {
      throw ConfigError("adam_update: tensor " + std::to_string(i) + " shape mismatch");
    }
  }
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i];
    auto g = grads[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double mh = m[k] / bc1;
      const double vh = v[k] / bc2;
      p[k] -= c.lr * mh / (std::sqrt(vh) + c.eps);
    }
  }
}

// ------------------------------------------------------- serialization

void tensors_from_json(const nlohmann::json& j, std::string_view name, std::vector<double>& data,
                       std::size_t rows, std::size_t cols) {
  const std::string key(name);
  if (!j.contains(key)) throw FormatError("missing tensor '" + key + "'", 0);
  const auto& v = j.at(key);
  data.clear();
  if (cols == 1) {
    data = v.get<std::vector<double>>();
  } else {
    if (v.size() != rows) throw FormatError("tensor '" + key + "' has wrong row count", 0);
    for (const auto& row : v) {
      auto r = row.get<std::vector<double>>();
      if (r.size() != cols) throw FormatError("tensor '" + key + "' has wrong column count", 0);
      data.insert(data.end(), r.begin(), r.end());
    }
  }
  if (data.size() != rows * cols) throw FormatError("tensor '" + key + "' has wrong size", 0);
}

nlohmann::json to_json(const LstmParams& p) {
  return {{"kind", "lstm"},
          {"input_dim", p.input_dim},
          {"hidden_dim", p.hidden_dim},
          {"output_dim", p.output_dim},
          {"tensors", tensors_to_json(p)}};
}

LstmParams lstm_from_json(const nlohmann::json& j) {
  LstmParams p;
  p.input_dim = j.at("input_dim").get<std::size_t>();
  p.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  p.output_dim = j.at("output_dim").get<std::size_t>();
  fill_tensors_from_json(j.at("tensors"), p);
  p.validate();
  return p;
}

nlohmann::json to_json(const MlpParams& p) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& L : p.layers) {
    layers.push_back({{"in", L.in}, {"out", L.out}, {"activation", to_string(L.activation)}});
  }
  return {{"kind", "mlp"}, {"layers", layers}, {"tensors", tensors_to_json(p)}};
}

MlpParams mlp_from_json(const nlohmann::json& j) {
  MlpParams p;
  for (const auto& l : j.at("layers")) {
    DenseLayer L;
    L.in = l.at("in").get<std::size_t>();
    L.out = l.at("out").get<std::size_t>();
    L.activation = parse_activation(l.at("activation").get<std::string>());
    p.layers.push_back(std::move(L));
  }
  fill_tensors_from_json(j.at("tensors"), p);
  p.validate();
  return p;
}

}  // namespace softreach::nn
