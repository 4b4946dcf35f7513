#include "aidflow/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <sstream>

namespace aidflow::classifier {

namespace {

constexpr std::size_t kChunk = 8;
constexpr double kClip = 1e-7;

struct LstmBlock {
  std::size_t in = 0;
  std::size_t w = 0;
  std::size_t b = 0;
};

struct DenseBlock {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t w = 0;
  std::size_t b = 0;
};

struct Layout {
  std::vector<LstmBlock> lstm;  // layer * directions + direction
  std::vector<DenseBlock> dense;
  std::size_t out_in = 0;
  std::size_t out_w = 0;
  std::size_t out_b = 0;
  std::size_t total = 0;
};

Layout make_layout(const ModelConfig& c) {
  Layout L;
  const std::size_t U = c.units;
  const std::size_t D = c.directions();
  std::size_t off = 0;
  for (std::size_t l = 0; l < c.lstm_layers; ++l) {
    const std::size_t in = l == 0 ? c.input_channels : D * U;
    for (std::size_t d = 0; d < D; ++d) {
      LstmBlock blk{in, off, off + (in + U) * 4 * U};
      off = blk.b + 4 * U;
      L.lstm.push_back(blk);
    }
  }
  std::size_t in = D * U;
  for (std::size_t k = 0; k < c.dense_layers; ++k) {
    DenseBlock blk{in, c.dense_units, off, off + in * c.dense_units};
    off = blk.b + c.dense_units;
    L.dense.push_back(blk);
    in = c.dense_units;
  }
  L.out_in = in;
  L.out_w = off;
  L.out_b = off + in;
  L.total = L.out_b + 1;
  return L;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double clip_probability(double p) { return std::clamp(p, kClip, 1.0 - kClip); }

struct DirCache {
  std::vector<double> v;      // H x (in + U), input then previous hidden state
  std::vector<double> gates;  // H x 4U after activation
  std::vector<double> c;      // H x U
  std::vector<double> tc;     // H x U, tanh(c)
};

struct Workspace {
  std::vector<std::vector<double>> seq;  // per LSTM layer: H x (D * U)
  std::vector<DirCache> dirs;
  std::vector<double> feat;
  std::vector<std::vector<double>> dense;  // post-ReLU activations
  double logit = 0.0;

  std::vector<double> d_seq;
  std::vector<double> d_x;
  std::vector<double> d_a;
  std::vector<double> d_prev;
  std::vector<double> dz;
  std::vector<double> dh;
  std::vector<double> dc_next;
  std::vector<double> dh_next;
};

Workspace& workspace() {
  thread_local Workspace ws;
  return ws;
}

void check_input(const ModelConfig& c, std::span<const double> input) {
  if (input.size() != c.seq_len * c.input_channels) {
    std::ostringstream msg;
    msg << "input has " << input.size() << " values, model expects " << c.seq_len << " x " << c.input_channels;
    throw ShapeError(msg.str());
  }
}

void check_params(const ModelConfig& c, std::span<const double> params) {
  if (params.size() != parameter_count(c)) throw ShapeError("parameter vector does not match model config");
}

void check_slice(const ModelConfig& c, const TimeSlice& s) {
  if (s.steps != c.seq_len || s.channels.size() != c.seq_len * c.input_channels) {
    std::ostringstream msg;
    msg << "slice " << s.pair_id << "@" << s.t_end << " has shape " << s.steps << " x "
        << (s.steps ? s.channels.size() / s.steps : 0) << ", model expects " << c.seq_len << " x "
        << c.input_channels;
    throw ShapeError(msg.str());
  }
}

void run_forward(const ModelConfig& c, const Layout& L, std::span<const double> P, std::span<const double> input,
                 Workspace& ws) {
  const std::size_t H = c.seq_len;
  const std::size_t U = c.units;
  const std::size_t D = c.directions();
  const std::size_t G = 4 * U;
  const double* p = P.data();

  ws.seq.resize(c.lstm_layers);
  ws.dirs.resize(L.lstm.size());
  std::vector<double> z(G);

  for (std::size_t l = 0; l < c.lstm_layers; ++l) {
    const double* x = l == 0 ? input.data() : ws.seq[l - 1].data();
    std::vector<double>& out = ws.seq[l];
    out.assign(H * D * U, 0.0);
    for (std::size_t d = 0; d < D; ++d) {
      const LstmBlock& blk = L.lstm[l * D + d];
      const std::size_t in = blk.in;
      const std::size_t V = in + U;
      DirCache& cache = ws.dirs[l * D + d];
      cache.v.resize(H * V);
      cache.gates.resize(H * G);
      cache.c.resize(H * U);
      cache.tc.resize(H * U);
      const double* W = p + blk.w;
      const double* b = p + blk.b;
      for (std::size_t s = 0; s < H; ++s) {
        const std::size_t t = d == 0 ? s : H - 1 - s;
        double* v = cache.v.data() + s * V;
        std::copy_n(x + t * in, in, v);
        if (s == 0) {
          std::fill_n(v + in, U, 0.0);
        } else {
          const std::size_t tp = d == 0 ? t - 1 : t + 1;
          std::copy_n(out.data() + tp * D * U + d * U, U, v + in);
        }
        std::copy_n(b, G, z.data());
        for (std::size_t j = 0; j < V; ++j) {
          const double vj = v[j];
          const double* row = W + j * G;
          for (std::size_t r = 0; r < G; ++r) z[r] += vj * row[r];
        }
        double* g = cache.gates.data() + s * G;
        for (std::size_t u = 0; u < U; ++u) {
          g[u] = sigmoid(z[u]);
          g[U + u] = sigmoid(z[U + u]);
          g[2 * U + u] = std::tanh(z[2 * U + u]);
          g[3 * U + u] = sigmoid(z[3 * U + u]);
        }
        double* cs = cache.c.data() + s * U;
        double* tc = cache.tc.data() + s * U;
        const double* cprev = s == 0 ? nullptr : cache.c.data() + (s - 1) * U;
        double* h = out.data() + t * D * U + d * U;
        for (std::size_t u = 0; u < U; ++u) {
          const double prev = cprev ? cprev[u] : 0.0;
          cs[u] = g[U + u] * prev + g[u] * g[2 * U + u];
          tc[u] = std::tanh(cs[u]);
          h[u] = g[3 * U + u] * tc[u];
        }
      }
    }
  }

  const std::vector<double>& last = ws.seq.back();
  ws.feat.assign(D * U, 0.0);
  std::copy_n(last.data() + (H - 1) * D * U, U, ws.feat.data());
  if (D == 2) std::copy_n(last.data() + U, U, ws.feat.data() + U);

  ws.dense.resize(L.dense.size());
  const std::vector<double>* cur = &ws.feat;
  for (std::size_t k = 0; k < L.dense.size(); ++k) {
    const DenseBlock& blk = L.dense[k];
    std::vector<double>& a = ws.dense[k];
    a.assign(p + blk.b, p + blk.b + blk.out);
    const double* W = p + blk.w;
    for (std::size_t j = 0; j < blk.in; ++j) {
      const double xj = (*cur)[j];
      const double* row = W + j * blk.out;
      for (std::size_t o = 0; o < blk.out; ++o) a[o] += xj * row[o];
    }
    for (double& v : a) v = v > 0.0 ? v : 0.0;
    cur = &a;
  }

  double logit = p[L.out_b];
  for (std::size_t j = 0; j < L.out_in; ++j) logit += (*cur)[j] * p[L.out_w + j];
  ws.logit = logit;
}

// Accumulates into grad (assumed zeroed) the gradient of the loss whose
// derivative with respect to the logit is dlogit.
void run_backward(const ModelConfig& c, const Layout& L, std::span<const double> P, std::span<const double> input,
                  double dlogit, Workspace& ws, double* grad) {
  const std::size_t H = c.seq_len;
  const std::size_t U = c.units;
  const std::size_t D = c.directions();
  const std::size_t G = 4 * U;
  const double* p = P.data();

  const std::vector<double>& top = L.dense.empty() ? ws.feat : ws.dense.back();
  ws.d_a.assign(L.out_in, 0.0);
  for (std::size_t j = 0; j < L.out_in; ++j) {
    grad[L.out_w + j] += dlogit * top[j];
    ws.d_a[j] = dlogit * p[L.out_w + j];
  }
  grad[L.out_b] += dlogit;

  for (std::size_t k = L.dense.size(); k-- > 0;) {
    const DenseBlock& blk = L.dense[k];
    const std::vector<double>& a = ws.dense[k];
    const std::vector<double>& x = k == 0 ? ws.feat : ws.dense[k - 1];
    for (std::size_t o = 0; o < blk.out; ++o) {
      if (a[o] <= 0.0) ws.d_a[o] = 0.0;
    }
    ws.d_prev.assign(blk.in, 0.0);
    const double* W = p + blk.w;
    double* gW = grad + blk.w;
    for (std::size_t o = 0; o < blk.out; ++o) grad[blk.b + o] += ws.d_a[o];
    for (std::size_t j = 0; j < blk.in; ++j) {
      const double xj = x[j];
      const double* row = W + j * blk.out;
      double* grow = gW + j * blk.out;
      double acc = 0.0;
      for (std::size_t o = 0; o < blk.out; ++o) {
        grow[o] += xj * ws.d_a[o];
        acc += row[o] * ws.d_a[o];
      }
      ws.d_prev[j] = acc;
    }
    std::swap(ws.d_a, ws.d_prev);
  }

  // ws.d_a now holds the gradient of the LSTM feature vector.
  ws.d_seq.assign(H * D * U, 0.0);
  for (std::size_t u = 0; u < U; ++u) ws.d_seq[(H - 1) * D * U + u] += ws.d_a[u];
  if (D == 2) {
    for (std::size_t u = 0; u < U; ++u) ws.d_seq[U + u] += ws.d_a[U + u];
  }

  ws.dz.resize(G);
  ws.dh.resize(U);
  ws.dh_next.resize(U);
  ws.dc_next.resize(U);
  for (std::size_t l = c.lstm_layers; l-- > 0;) {
    const std::size_t in = L.lstm[l * D].in;
    const bool need_dx = l > 0;
    if (need_dx) ws.d_x.assign(H * in, 0.0);
    for (std::size_t d = 0; d < D; ++d) {
      const LstmBlock& blk = L.lstm[l * D + d];
      const std::size_t V = in + U;
      const DirCache& cache = ws.dirs[l * D + d];
      const double* W = p + blk.w;
      double* gW = grad + blk.w;
      double* gb = grad + blk.b;
      std::fill(ws.dh_next.begin(), ws.dh_next.end(), 0.0);
      std::fill(ws.dc_next.begin(), ws.dc_next.end(), 0.0);
      for (std::size_t s = H; s-- > 0;) {
        const std::size_t t = d == 0 ? s : H - 1 - s;
        const double* g = cache.gates.data() + s * G;
        const double* tc = cache.tc.data() + s * U;
        const double* cprev = s == 0 ? nullptr : cache.c.data() + (s - 1) * U;
        const double* dout = ws.d_seq.data() + t * D * U + d * U;
        for (std::size_t u = 0; u < U; ++u) {
          const double dh = dout[u] + ws.dh_next[u];
          const double i = g[u];
          const double f = g[U + u];
          const double gg = g[2 * U + u];
          const double o = g[3 * U + u];
          const double dc = dh * o * (1.0 - tc[u] * tc[u]) + ws.dc_next[u];
          const double prev = cprev ? cprev[u] : 0.0;
          ws.dz[u] = dc * gg * i * (1.0 - i);
          ws.dz[U + u] = dc * prev * f * (1.0 - f);
          ws.dz[2 * U + u] = dc * i * (1.0 - gg * gg);
          ws.dz[3 * U + u] = dh * tc[u] * o * (1.0 - o);
          ws.dc_next[u] = dc * f;
        }
        for (std::size_t r = 0; r < G; ++r) gb[r] += ws.dz[r];
        const double* v = cache.v.data() + s * V;
        for (std::size_t j = 0; j < V; ++j) {
          const double vj = v[j];
          const double* row = W + j * G;
          double* grow = gW + j * G;
          double acc = 0.0;
          for (std::size_t r = 0; r < G; ++r) {
            grow[r] += vj * ws.dz[r];
            acc += row[r] * ws.dz[r];
          }
          if (j < in) {
            if (need_dx) ws.d_x[t * in + j] += acc;
          } else {
            ws.dh_next[j - in] = acc;
          }
        }
      }
    }
    if (need_dx) std::swap(ws.d_seq, ws.d_x);
  }
  (void)input;
}

double sample_loss(const ModelConfig& c, std::span<const double> params, std::span<const double> input,
                   double target, double gamma) {
  return focal_loss(sigmoid(forward_logit(c, params, input)), target, gamma);
}

void check_view(const ModelConfig& c, const LabeledView& v, const char* name) {
  if (v.targets.size() != v.slices.size()) throw ShapeError(std::string(name) + ": targets and slices differ in size");
  for (const TimeSlice& s : v.slices) check_slice(c, s);
}

double chunked_batch(const ModelConfig& config, std::span<const double> params, const LabeledView& data,
                     std::span<const std::size_t> indices, double gamma, std::vector<double>& grad, bool parallel) {
  const std::size_t n = indices.size();
  if (n == 0) throw TrainingError("empty batch");
  check_params(config, params);
  const std::size_t P = params.size();
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  std::vector<double> partial(chunks * P, 0.0);
  std::vector<double> losses(n, 0.0);
  const auto ichunks = static_cast<std::ptrdiff_t>(chunks);

  auto run_chunk = [&](std::size_t ci, std::vector<double>& g) {
    double* acc = partial.data() + ci * P;
    const std::size_t end = std::min(n, (ci + 1) * kChunk);
    for (std::size_t s = ci * kChunk; s < end; ++s) {
      const std::size_t idx = indices[s];
      losses[s] = sample_loss_and_gradient(config, params, data.slices[idx].channels, data.targets[idx], gamma, g);
      for (std::size_t k = 0; k < P; ++k) acc[k] += g[k];
    }
  };

  if (parallel) {
#pragma omp parallel
    {
      std::vector<double> g(P);
#pragma omp for schedule(static)
      for (std::ptrdiff_t ci = 0; ci < ichunks; ++ci) run_chunk(static_cast<std::size_t>(ci), g);
    }
  } else {
    std::vector<double> g(P);
    for (std::size_t ci = 0; ci < chunks; ++ci) run_chunk(ci, g);
  }

  grad.assign(P, 0.0);
  for (std::size_t ci = 0; ci < chunks; ++ci) {
    const double* acc = partial.data() + ci * P;
    for (std::size_t k = 0; k < P; ++k) grad[k] += acc[k];
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (double& g : grad) g *= inv;
  double loss = 0.0;
  for (double l : losses) loss += l;
  return loss * inv;
}

std::size_t knn_count(std::span<const TimeSlice> train, std::span<const double> labels, const TimeSlice& query,
                      std::size_t k, std::vector<std::pair<double, std::size_t>>& dist) {
  const std::size_t n = train.size();
  dist.resize(n);
  const std::size_t m = query.channels.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double>& a = train[i].channels;
    if (a.size() != m) throw ShapeError("k-NN: slice sizes differ");
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double diff = a[j] - query.channels[j];
      s += diff * diff;
    }
    dist[i] = {std::sqrt(s), i};
  }
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  std::size_t count = 0;
  for (std::size_t i = 0; i < k; ++i) count += labels[dist[i].second] > 0.5 ? 1 : 0;
  return count;
}

void check_knn(std::span<const TimeSlice> train, std::span<const double> labels, std::size_t k) {
  if (train.empty()) throw Error("k-NN: empty training set");
  if (labels.size() != train.size()) throw ShapeError("k-NN: labels and slices differ in size");
  if (k < 1 || k > train.size()) throw ConfigError("k-NN: k must be in [1, training size]");
}

}  // namespace

// ---- configs ----------------------------------------------------------------

void ModelConfig::validate() const {
  if (lstm_layers < 1) throw ConfigError("lstm_layers must be >= 1");
  if (units < 1) throw ConfigError("units must be >= 1");
  if (dense_layers > 0 && dense_units < 1) throw ConfigError("dense_units must be >= 1");
  if (seq_len < 1) throw ConfigError("seq_len must be >= 1");
  if (input_channels != kChannels) throw ConfigError("input_channels must be 5");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be >= 0");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must be in (0, 1)");
}

std::size_t parameter_count(const ModelConfig& config) { return make_layout(config).total; }

TrainedModel init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const Layout L = make_layout(config);
  TrainedModel m;
  m.config = config;
  m.params.assign(L.total, 0.0);
  Rng rng(seed);
  const std::size_t U = config.units;
  const std::size_t G = 4 * U;
  for (const LstmBlock& blk : L.lstm) {
    const std::size_t V = blk.in + U;
    const double limit = std::sqrt(6.0 / static_cast<double>(V + G));
    for (std::size_t k = 0; k < V * G; ++k) m.params[blk.w + k] = rng.uniform(-limit, limit);
    for (std::size_t u = 0; u < U; ++u) m.params[blk.b + U + u] = 1.0;
  }
  for (const DenseBlock& blk : L.dense) {
    const double limit = std::sqrt(6.0 / static_cast<double>(blk.in + blk.out));
    for (std::size_t k = 0; k < blk.in * blk.out; ++k) m.params[blk.w + k] = rng.uniform(-limit, limit);
  }
  const double limit = std::sqrt(6.0 / static_cast<double>(L.out_in + 1));
  for (std::size_t j = 0; j < L.out_in; ++j) m.params[L.out_w + j] = rng.uniform(-limit, limit);
  return m;
}

// ---- inference --------------------------------------------------------------

double forward_logit(const ModelConfig& config, std::span<const double> params, std::span<const double> input) {
  check_input(config, input);
  check_params(config, params);
  const Layout L = make_layout(config);
  Workspace& ws = workspace();
  run_forward(config, L, params, input, ws);
  return ws.logit;
}

double forward(const TrainedModel& model, const TimeSlice& slice) {
  check_slice(model.config, slice);
  const double p = sigmoid(forward_logit(model.config, model.params, slice.channels));
  return std::clamp(p, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
}

std::vector<double> forward_batch(const TrainedModel& model, std::span<const TimeSlice> slices) {
  for (const TimeSlice& s : slices) check_slice(model.config, s);
  std::vector<double> out(slices.size());
  const auto n = static_cast<std::ptrdiff_t>(slices.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = forward(model, slices[static_cast<std::size_t>(i)]);
  return out;
}

// ---- loss -------------------------------------------------------------------

double focal_loss(double p, double target, double gamma) {
  p = clip_probability(p);
  const double q = target;
  return -q * std::pow(1.0 - p, gamma) * std::log(p) - (1.0 - q) * std::pow(p, gamma) * std::log(1.0 - p);
}

double focal_loss_grad_logit(double logit, double target, double gamma) {
  const double p = clip_probability(sigmoid(logit));
  const double q = target;
  const double a = q * std::pow(1.0 - p, gamma) * (gamma * p * std::log(p) - (1.0 - p));
  const double b = (1.0 - q) * std::pow(p, gamma) * (p - gamma * (1.0 - p) * std::log(1.0 - p));
  return a + b;
}

double binary_cross_entropy(double p, double target) {
  p = clip_probability(p);
  return -target * std::log(p) - (1.0 - target) * std::log(1.0 - p);
}

// ---- training ---------------------------------------------------------------

double sample_loss_and_gradient(const ModelConfig& config, std::span<const double> params,
                                std::span<const double> input, double target, double gamma,
                                std::span<double> grad) {
  check_input(config, input);
  check_params(config, params);
  if (grad.size() != params.size()) throw ShapeError("gradient buffer does not match parameter count");
  const Layout L = make_layout(config);
  Workspace& ws = workspace();
  run_forward(config, L, params, input, ws);
  std::fill(grad.begin(), grad.end(), 0.0);
  const double dlogit = focal_loss_grad_logit(ws.logit, target, gamma);
  run_backward(config, L, params, input, dlogit, ws, grad.data());
  return focal_loss(sigmoid(ws.logit), target, gamma);
}

double batch_loss_and_gradient(const ModelConfig& config, std::span<const double> params, const LabeledView& data,
                               std::span<const std::size_t> indices, double gamma, std::vector<double>& grad) {
  return chunked_batch(config, params, data, indices, gamma, grad, true);
}

double mean_focal_loss(const ModelConfig& config, std::span<const double> params, const LabeledView& data,
                       double gamma) {
  if (data.size() == 0) throw Error("mean_focal_loss: empty data");
  double sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    sum += sample_loss(config, params, data.slices[i].channels, data.targets[i], gamma);
  }
  return sum / static_cast<double>(data.size());
}

TrainedModel train(const ModelConfig& config, const TrainConfig& tc, const LabeledView& train_set,
                   const LabeledView& val_set) {
  config.validate();
  tc.validate();
  if (train_set.size() == 0) throw TrainingError("empty training set");
  if (val_set.size() == 0) throw TrainingError("empty validation set");
  check_view(config, train_set, "training set");
  check_view(config, val_set, "validation set");

  std::vector<double> targets(train_set.targets.begin(), train_set.targets.end());
  if (tc.hard_targets) targets = hard(targets);
  const LabeledView data{train_set.slices, targets};

  TrainedModel model = init_model(config, derive_seed(tc.seed, 1));
  model.train_config = tc;
  Rng shuffle_rng(derive_seed(tc.seed, 2));

  const std::size_t n = data.size();
  const std::size_t P = model.params.size();
  std::vector<double> m(P, 0.0), v(P, 0.0), grad;
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double b1t = 1.0, b2t = 1.0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> best_params = model.params;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t wait = 0;

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double sum = 0.0;
    for (std::size_t start = 0, batch = 0; start < n; start += tc.batch_size, ++batch) {
      const std::size_t len = std::min(tc.batch_size, n - start);
      const std::span<const std::size_t> idx(order.data() + start, len);
      const double loss = batch_loss_and_gradient(config, model.params, data, idx, tc.gamma, grad);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite training loss at epoch " << epoch << ", batch " << batch << " (lr "
            << tc.learning_rate << ", seed " << tc.seed << ")";
        throw TrainingError(msg.str());
      }
      sum += loss * static_cast<double>(len);
      b1t *= b1;
      b2t *= b2;
      const double lr = tc.learning_rate;
      for (std::size_t k = 0; k < P; ++k) {
        m[k] = b1 * m[k] + (1.0 - b1) * grad[k];
        v[k] = b2 * v[k] + (1.0 - b2) * grad[k] * grad[k];
        const double mhat = m[k] / (1.0 - b1t);
        const double vhat = v[k] / (1.0 - b2t);
        model.params[k] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }

    const std::vector<double> probs = forward_batch(model, val_set.slices);
    double val_loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      val_loss += focal_loss(probs[i], val_set.targets[i], tc.gamma);
      const bool pred = probs[i] > tc.threshold;
      const bool truth = val_set.targets[i] > 0.5;
      correct += pred == truth ? 1 : 0;
    }
    val_loss /= static_cast<double>(probs.size());
    if (!std::isfinite(val_loss)) {
      throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
    }
    model.history.push_back(EpochRecord{epoch, sum / static_cast<double>(n), val_loss,
                                        static_cast<double>(correct) / static_cast<double>(probs.size())});
    if (val_loss < best_loss) {
      best_loss = val_loss;
      best_params = model.params;
      model.best_epoch = epoch;
      wait = 0;
    } else if (++wait >= tc.patience) {
      break;
    }
  }
  model.params = std::move(best_params);
  return model;
}

// ---- gradient check ---------------------------------------------------------

std::vector<double> numerical_gradient(const ModelConfig& config, std::span<const double> params,
                                       const LabeledView& batch, double gamma, double epsilon) {
  std::vector<double> theta(params.begin(), params.end());
  std::vector<double> g(theta.size());
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double orig = theta[k];
    theta[k] = orig + epsilon;
    const double up = mean_focal_loss(config, theta, batch, gamma);
    theta[k] = orig - epsilon;
    const double down = mean_focal_loss(config, theta, batch, gamma);
    theta[k] = orig;
    g[k] = (up - down) / (2.0 * epsilon);
  }
  return g;
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw ShapeError("gradient sizes differ");
  double worst = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    const double a = analytic[k];
    const double n = numeric[k];
    const double denom = std::max({std::abs(a), std::abs(n), 1e-8});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

double gradient_check(const TrainedModel& model, const LabeledView& batch, double epsilon, double gamma) {
  if (model.params.size() > 500) throw ConfigError("gradient_check expects a model with at most 500 parameters");
  check_view(model.config, batch, "gradient-check batch");
  std::vector<std::size_t> idx(batch.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<double> analytic;
  batch_loss_and_gradient(model.config, model.params, batch, idx, gamma, analytic);
  const std::vector<double> numeric = numerical_gradient(model.config, model.params, batch, gamma, epsilon);
  return max_relative_error(analytic, numeric);
}

// ---- k-NN -------------------------------------------------------------------

double knn_baseline(std::span<const TimeSlice> train, std::span<const double> labels, const TimeSlice& query,
                    std::size_t k) {
  check_knn(train, labels, k);
  std::vector<std::pair<double, std::size_t>> dist;
  return static_cast<double>(knn_count(train, labels, query, k, dist)) / static_cast<double>(k);
}

double knn_baseline(std::span<const TimeSlice> train, const TimeSlice& query, std::size_t k) {
  const std::vector<double> labels = weak_targets(train);
  return knn_baseline(train, labels, query, k);
}

std::vector<double> knn_predict(std::span<const TimeSlice> train, std::span<const double> labels,
                                std::span<const TimeSlice> queries, std::size_t k) {
  check_knn(train, labels, k);
  std::vector<double> out(queries.size());
  const auto n = static_cast<std::ptrdiff_t>(queries.size());
#pragma omp parallel
  {
    std::vector<std::pair<double, std::size_t>> dist;
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const auto q = static_cast<std::size_t>(i);
      out[q] = static_cast<double>(knn_count(train, labels, queries[q], k, dist)) / static_cast<double>(k);
    }
  }
  return out;
}

namespace reference {

double batch_loss_and_gradient(const ModelConfig& config, std::span<const double> params, const LabeledView& data,
                               std::span<const std::size_t> indices, double gamma, std::vector<double>& grad) {
  return chunked_batch(config, params, data, indices, gamma, grad, false);
}

std::vector<double> forward_batch(const TrainedModel& model, std::span<const TimeSlice> slices) {
  std::vector<double> out;
  out.reserve(slices.size());
  for (const TimeSlice& s : slices) out.push_back(forward(model, s));
  return out;
}

std::vector<double> knn_predict(std::span<const TimeSlice> train, std::span<const double> labels,
                                std::span<const TimeSlice> queries, std::size_t k) {
  check_knn(train, labels, k);
  std::vector<double> out;
  out.reserve(queries.size());
  std::vector<std::pair<double, std::size_t>> dist;
  for (const TimeSlice& q : queries) {
    out.push_back(static_cast<double>(knn_count(train, labels, q, k, dist)) / static_cast<double>(k));
  }
  return out;
}

}  // namespace reference

// ---- random search ----------------------------------------------------------

SearchResult random_search(const SearchSpace& space, std::size_t budget, const LabeledView& train_set,
                           const LabeledView& val_set, const ModelConfig& base_model, const TrainConfig& base_train,
                           std::uint64_t seed) {
  if (budget < 1) throw ConfigError("random_search budget must be >= 1");
  if (space.units.empty() || space.bidirectional.empty() || space.batch_sizes.empty() ||
      space.min_lstm_layers < 1 || space.max_lstm_layers < space.min_lstm_layers ||
      space.max_dense_layers < space.min_dense_layers || !(space.min_learning_rate > 0.0) ||
      space.max_learning_rate < space.min_learning_rate) {
    throw ConfigError("invalid search space");
  }

  SearchResult result;
  result.trials.resize(budget);
  Rng rng(seed);
  const double log_lo = std::log(space.min_learning_rate);
  const double log_hi = std::log(space.max_learning_rate);
  for (std::size_t i = 0; i < budget; ++i) {
    Trial& t = result.trials[i];
    t.model = base_model;
    t.model.lstm_layers = space.min_lstm_layers + rng.below(space.max_lstm_layers - space.min_lstm_layers + 1);
    t.model.units = space.units[rng.below(space.units.size())];
    t.model.bidirectional = space.bidirectional[rng.below(space.bidirectional.size())];
    t.model.dense_layers = space.min_dense_layers + rng.below(space.max_dense_layers - space.min_dense_layers + 1);
    t.train = base_train;
    t.train.learning_rate = std::exp(rng.uniform(log_lo, log_hi));
    t.train.batch_size = space.batch_sizes[rng.below(space.batch_sizes.size())];
    t.train.seed = derive_seed(seed, 0x5ea7c4, i);
  }

  std::vector<std::string> errors(budget);
  const auto n = static_cast<std::ptrdiff_t>(budget);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    Trial& t = result.trials[i];
    try {
      const TrainedModel m = train(t.model, t.train, train_set, val_set);
      t.epochs_run = m.history.size();
      const std::vector<double> probs = forward_batch(m, val_set.slices);
      double bce = 0.0;
      for (std::size_t k = 0; k < probs.size(); ++k) bce += binary_cross_entropy(probs[k], val_set.targets[k]);
      t.val_bce = bce / static_cast<double>(probs.size());
    } catch (const TrainingError& e) {
      t.val_bce = std::numeric_limits<double>::infinity();
      errors[i] = e.what();
    }
  }
  for (std::size_t i = 0; i < budget; ++i) {
    if (!errors[i].empty()) warn("search trial " + std::to_string(i) + " failed: " + errors[i]);
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < budget; ++i) {
    if (result.trials[i].val_bce < result.trials[best].val_bce) best = i;
  }
  result.best = result.trials[best];
  return result;
}

// ---- persistence ------------------------------------------------------------

nlohmann::json to_json(const ModelConfig& c) {
  return {{"lstm_layers", c.lstm_layers}, {"units", c.units},           {"bidirectional", c.bidirectional},
          {"dense_layers", c.dense_layers}, {"dense_units", c.dense_units}, {"seq_len", c.seq_len},
          {"input_channels", c.input_channels}};
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size}, {"epochs", c.epochs}, {"learning_rate", c.learning_rate},
          {"patience", c.patience},     {"gamma", c.gamma},   {"seed", c.seed},
          {"threshold", c.threshold},   {"hard_targets", c.hard_targets}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.lstm_layers = j.at("lstm_layers").get<std::size_t>();
  c.units = j.at("units").get<std::size_t>();
  c.bidirectional = j.at("bidirectional").get<bool>();
  c.dense_layers = j.at("dense_layers").get<std::size_t>();
  c.dense_units = j.at("dense_units").get<std::size_t>();
  c.seq_len = j.at("seq_len").get<std::size_t>();
  c.input_channels = j.at("input_channels").get<std::size_t>();
  c.validate();
  return c;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.patience = j.at("patience").get<std::size_t>();
  c.gamma = j.at("gamma").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.threshold = j.at("threshold").get<double>();
  c.hard_targets = j.value("hard_targets", false);
  c.validate();
  return c;
}

nlohmann::json to_json(const TrainedModel& model) {
  nlohmann::json history = nlohmann::json::array();
  for (const EpochRecord& r : model.history) {
    history.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}, {"val_acc", r.val_acc}});
  }
  return {{"format", "aidflow-lstm"},
          {"version", 1},
          {"parameter_order",
           "per LSTM layer and direction (forward, backward): kernel [(in+units) x 4*units] row-major, gate blocks "
           "input, forget, cell, output; bias [4*units]; per dense layer: kernel [in x out] row-major, bias [out]; "
           "output kernel [in], output bias [1]"},
          {"config", to_json(model.config)},
          {"train_config", to_json(model.train_config)},
          {"best_epoch", model.best_epoch},
          {"history", history},
          {"params", model.params}};
}

TrainedModel model_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string{}) != "aidflow-lstm") throw Error("not a model file");
  if (j.at("version").get<int>() != 1) throw Error("unsupported model file version");
  TrainedModel m;
  m.config = model_config_from_json(j.at("config"));
  m.train_config = train_config_from_json(j.at("train_config"));
  m.best_epoch = j.at("best_epoch").get<std::size_t>();
  for (const auto& r : j.at("history")) {
    m.history.push_back(EpochRecord{r.at("epoch").get<std::size_t>(), r.at("train_loss").get<double>(),
                                    r.at("val_loss").get<double>(), r.at("val_acc").get<double>()});
  }
  m.params = j.at("params").get<std::vector<double>>();
  check_params(m.config, m.params);
  return m;
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, to_json(model).dump());
}

TrainedModel load_model(const std::filesystem::path& path) {
  try {
    return model_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed model file " + path.string() + ": " + e.what());
  }
}

std::string history_csv(const TrainedModel& model) {
  std::string out = "epoch,train_loss,val_loss,val_acc\n";
  for (const EpochRecord& r : model.history) {
    out += std::to_string(r.epoch) + "," + format_double(r.train_loss) + "," + format_double(r.val_loss) + "," +
           format_double(r.val_acc) + "\n";
  }
  return out;
}

// ---- targets ----------------------------------------------------------------

std::vector<double> weak_targets(std::span<const TimeSlice> slices) {
  std::vector<double> out;
  out.reserve(slices.size());
  for (const TimeSlice& s : slices) {
    if (!s.prob_label) throw Error("slice " + s.pair_id + "@" + format_iso8601(s.t_end) + " has no prob_label");
    out.push_back(*s.prob_label);
  }
  return out;
}

std::vector<double> reported_targets(std::span<const TimeSlice> slices) {
  std::vector<double> out;
  out.reserve(slices.size());
  for (const TimeSlice& s : slices) {
    if (s.reported_label < 0) throw Error("slice " + s.pair_id + "@" + format_iso8601(s.t_end) + " has no reported label");
    out.push_back(static_cast<double>(s.reported_label));
  }
  return out;
}

std::vector<double> true_targets(std::span<const TimeSlice> slices) {
  std::vector<double> out;
  out.reserve(slices.size());
  for (const TimeSlice& s : slices) {
    if (!s.true_label) throw Error("slice " + s.pair_id + "@" + format_iso8601(s.t_end) + " has no true label");
    out.push_back(static_cast<double>(*s.true_label));
  }
  return out;
}

std::vector<double> hard(std::span<const double> targets) {
  std::vector<double> out;
  out.reserve(targets.size());
  for (double t : targets) out.push_back(t > 0.5 ? 1.0 : 0.0);
  return out;
}

}  // namespace aidflow::classifier
