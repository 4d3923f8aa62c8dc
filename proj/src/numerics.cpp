#include "fedsim/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "fedsim/errors.hpp"

namespace fedsim {

std::vector<std::size_t> ModelSpec::layer_widths() const {
  std::vector<std::size_t> widths;
  widths.reserve(hidden_dims.size() + 2);
  widths.push_back(input_dim());
  widths.insert(widths.end(), hidden_dims.begin(), hidden_dims.end());
  widths.push_back(kOutputDim);
  return widths;
}

std::size_t ModelSpec::param_count() const {
  const auto widths = layer_widths();
  std::size_t count = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    count += widths[l] * widths[l + 1] + widths[l + 1];
  }
  return count;
}

void ModelSpec::validate() const {
  if (embed_dim == 0 && symptom_dim == 0) {
    throw ShapeError("model spec: input width is zero");
  }
  for (std::size_t i = 0; i < hidden_dims.size(); ++i) {
    if (hidden_dims[i] == 0) {
      throw ShapeError("model spec: hidden_dims[" + std::to_string(i) + "] is zero");
    }
  }
}

std::vector<LayerView> layer_views(const ModelSpec& spec) {
  const auto widths = spec.layer_widths();
  std::vector<LayerView> views;
  views.reserve(widths.size() - 1);
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    LayerView v;
    v.in = widths[l];
    v.out = widths[l + 1];
    v.weight_offset = offset;
    v.bias_offset = offset + v.in * v.out;
    offset = v.bias_offset + v.out;
    views.push_back(v);
  }
  return views;
}

// ---------------------------------------------------------------------------
// ParamVector

ParamVector::ParamVector(ModelSpec spec)
    : spec_(std::move(spec)), values_(spec_.param_count(), 0.0) {}

ParamVector::ParamVector(ModelSpec spec, std::vector<double> values)
    : spec_(std::move(spec)), values_(std::move(values)) {
  if (values_.size() != spec_.param_count()) {
    throw ShapeError("param vector has " + std::to_string(values_.size()) +
                     " entries, spec requires " + std::to_string(spec_.param_count()));
  }
}

bool ParamVector::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void ParamVector::require_same_shape(const ParamVector& other) const {
  if (!(spec_ == other.spec_) || values_.size() != other.values_.size()) {
    throw ShapeError("param vector shape mismatch (" + std::to_string(values_.size()) + " vs " +
                     std::to_string(other.values_.size()) + ")");
  }
}

ParamVector& ParamVector::operator+=(const ParamVector& rhs) {
  require_same_shape(rhs);
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += rhs.values_[i];
  return *this;
}

ParamVector& ParamVector::operator-=(const ParamVector& rhs) {
  require_same_shape(rhs);
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= rhs.values_[i];
  return *this;
}

ParamVector& ParamVector::operator*=(double s) {
  for (auto& v : values_) v *= s;
  return *this;
}

void ParamVector::axpy(double s, const ParamVector& rhs) {
  require_same_shape(rhs);
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += s * rhs.values_[i];
}

ParamVector operator+(ParamVector lhs, const ParamVector& rhs) { return lhs += rhs; }
ParamVector operator-(ParamVector lhs, const ParamVector& rhs) { return lhs -= rhs; }
ParamVector operator*(double s, ParamVector v) { return v *= s; }

// ---------------------------------------------------------------------------
// Model

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ParamVector params(spec);
  std::mt19937_64 rng(seed);
  for (const auto& layer : layer_views(spec)) {
    // Same bound as torch.nn.Linear's default weight init; biases stay zero.
    const double limit = 1.0 / std::sqrt(static_cast<double>(layer.in));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t k = 0; k < layer.in * layer.out; ++k) {
      params[layer.weight_offset + k] = dist(rng);
    }
  }
  return params;
}

namespace {

void check_sample(const ModelSpec& spec, const Sample& s) {
  if (s.embedding.size() != spec.embed_dim || s.symptoms.size() != spec.symptom_dim) {
    throw ShapeError("sample has embedding " + std::to_string(s.embedding.size()) +
                     " / symptoms " + std::to_string(s.symptoms.size()) + ", model expects " +
                     std::to_string(spec.embed_dim) + " / " + std::to_string(spec.symptom_dim));
  }
  if (s.label != 0 && s.label != 1) {
    throw ShapeError("sample label must be 0 or 1, got " + std::to_string(s.label));
  }
}

// Post-activation values of every layer for one sample; the last entry holds
// the raw logits (no ReLU on the output layer).
struct Activations {
  std::vector<std::vector<double>> layers;
};

Activations run_forward(const ParamVector& params, const std::vector<LayerView>& views,
                        const Sample& s) {
  Activations act;
  act.layers.reserve(views.size() + 1);
  std::vector<double> input;
  input.reserve(s.embedding.size() + s.symptoms.size());
  input.insert(input.end(), s.embedding.begin(), s.embedding.end());
  for (auto bit : s.symptoms) input.push_back(static_cast<double>(bit));
  act.layers.push_back(std::move(input));

  const auto w = params.values();
  for (std::size_t l = 0; l < views.size(); ++l) {
    const auto& v = views[l];
    const auto& x = act.layers.back();
    std::vector<double> z(v.out);
    for (std::size_t o = 0; o < v.out; ++o) {
      double acc = w[v.bias_offset + o];
      const double* row = w.data() + v.weight_offset + o * v.in;
      for (std::size_t i = 0; i < v.in; ++i) acc += row[i] * x[i];
      z[o] = acc;
    }
    if (l + 1 < views.size()) {
      for (auto& zi : z) zi = std::max(0.0, zi);
    }
    act.layers.push_back(std::move(z));
  }
  return act;
}

Prediction softmax2(double z_neg, double z_pos) {
  // p_pos = sigmoid(z_pos - z_neg), evaluated on the stable side.
  const double d = z_pos - z_neg;
  Prediction p;
  if (d >= 0.0) {
    const double e = std::exp(-d);
    p.p_pos = 1.0 / (1.0 + e);
    p.p_neg = e / (1.0 + e);
  } else {
    const double e = std::exp(d);
    p.p_neg = 1.0 / (1.0 + e);
    p.p_pos = e / (1.0 + e);
  }
  return p;
}

// -ln softmax(z)[label]
double cross_entropy(double z_neg, double z_pos, int label) {
  const double hi = std::max(z_neg, z_pos);
  const double lse = hi + std::log1p(std::exp(-std::abs(z_pos - z_neg)));
  return lse - (label == 1 ? z_pos : z_neg);
}

}  // namespace

Prediction forward(const ParamVector& params, const Sample& sample) {
  check_sample(params.spec(), sample);
  const auto views = layer_views(params.spec());
  const auto act = run_forward(params, views, sample);
  const auto& logits = act.layers.back();
  return softmax2(logits[0], logits[1]);
}

double total_loss(const ParamVector& params, std::span<const Sample> data) {
  const auto views = layer_views(params.spec());
  double loss = 0.0;
  for (const auto& s : data) {
    check_sample(params.spec(), s);
    const auto act = run_forward(params, views, s);
    loss += cross_entropy(act.layers.back()[0], act.layers.back()[1], s.label);
  }
  return loss;
}

std::pair<double, ParamVector> loss_and_gradient(const ParamVector& params,
                                                 std::span<const Sample> data) {
  const auto views = layer_views(params.spec());
  ParamVector grad(params.spec());
  auto g = grad.values();
  const auto w = params.values();
  double loss = 0.0;

  for (const auto& s : data) {
    check_sample(params.spec(), s);
    const auto act = run_forward(params, views, s);
    const auto& logits = act.layers.back();
    loss += cross_entropy(logits[0], logits[1], s.label);

    const auto p = softmax2(logits[0], logits[1]);
    std::vector<double> delta{p.p_neg - (s.label == 0 ? 1.0 : 0.0),
                              p.p_pos - (s.label == 1 ? 1.0 : 0.0)};

    for (std::size_t l = views.size(); l-- > 0;) {
      const auto& v = views[l];
      const auto& x = act.layers[l];
      for (std::size_t o = 0; o < v.out; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        g[v.bias_offset + o] += d;
        double* grow = g.data() + v.weight_offset + o * v.in;
        for (std::size_t i = 0; i < v.in; ++i) grow[i] += d * x[i];
      }
      if (l == 0) break;
      // Back through W_l and the ReLU of layer l-1's output.
      std::vector<double> prev(v.in, 0.0);
      for (std::size_t o = 0; o < v.out; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        const double* row = w.data() + v.weight_offset + o * v.in;
        for (std::size_t i = 0; i < v.in; ++i) prev[i] += row[i] * d;
      }
      for (std::size_t i = 0; i < v.in; ++i) {
        if (x[i] <= 0.0) prev[i] = 0.0;
      }
      delta = std::move(prev);
    }
  }
  return {loss, std::move(grad)};
}

ParamVector gradient(const ParamVector& params, std::span<const Sample> data) {
  return loss_and_gradient(params, data).second;
}

ParamVector sgd_epochs(ParamVector params, std::span<const Sample> data, double lr, int epochs,
                       std::optional<ProxTerm> prox) {
  if (epochs < 1) throw ConfigError("sgd_epochs: epochs must be >= 1");
  if (prox && prox->anchor == nullptr) throw ConfigError("sgd_epochs: prox term without anchor");
  if (prox) params.require_same_shape(*prox->anchor);

  for (int e = 0; e < epochs; ++e) {
    auto [loss, grad] = loss_and_gradient(params, data);
    if (prox && prox->mu != 0.0) {
      const auto theta = params.values();
      const auto anchor = prox->anchor->values();
      double sq = 0.0;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double diff = theta[i] - anchor[i];
        sq += diff * diff;
        grad[i] += prox->mu * diff;
      }
      loss += 0.5 * prox->mu * sq;
    }
    if (!std::isfinite(loss) || !grad.all_finite()) {
      throw TrainingDivergence("local training diverged at epoch " + std::to_string(e + 1) +
                               " (loss " + std::to_string(loss) + ")");
    }
    if (lr != 0.0) params.axpy(-lr, grad);
  }
  return params;
}

}  // namespace fedsim
