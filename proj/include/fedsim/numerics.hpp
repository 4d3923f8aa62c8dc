#pragma once

// Two-branch MLP classifier (dense embedding + multi-hot symptoms) with a
// binary softmax head, summed cross-entropy and plain backprop. Everything
// is double precision and free of hidden state.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace fedsim {

struct ModelSpec {
  std::size_t embed_dim = 32;
  std::size_t symptom_dim = 10;
  std::vector<std::size_t> hidden_dims{32};

  static constexpr std::size_t kOutputDim = 2;

  std::size_t input_dim() const { return embed_dim + symptom_dim; }

  /// Widths of every layer, input first and the 2-wide output last.
  std::vector<std::size_t> layer_widths() const;

  std::size_t param_count() const;

  /// Throws ShapeError if any width is zero.
  void validate() const;

  bool operator==(const ModelSpec&) const = default;
};

/// Flat parameter vector. Layer l occupies [W_l (out x in, row-major), b_l].
class ParamVector {
 public:
  ParamVector() = default;
  /// Zero-filled vector conforming to `spec`.
  explicit ParamVector(ModelSpec spec);
  ParamVector(ModelSpec spec, std::vector<double> values);

  const ModelSpec& spec() const { return spec_; }
  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  bool all_finite() const;

  /// Throws ShapeError unless `other` has the same spec.
  void require_same_shape(const ParamVector& other) const;

  ParamVector& operator+=(const ParamVector& rhs);
  ParamVector& operator-=(const ParamVector& rhs);
  ParamVector& operator*=(double s);

  /// this += s * rhs
  void axpy(double s, const ParamVector& rhs);

  bool operator==(const ParamVector&) const = default;

 private:
  ModelSpec spec_;
  std::vector<double> values_;
};

ParamVector operator+(ParamVector lhs, const ParamVector& rhs);
ParamVector operator-(ParamVector lhs, const ParamVector& rhs);
ParamVector operator*(double s, ParamVector v);

/// Offsets of one layer's weight block and bias block inside a ParamVector.
struct LayerView {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
};

std::vector<LayerView> layer_views(const ModelSpec& spec);

struct Sample {
  std::vector<double> embedding;
  std::vector<std::uint8_t> symptoms;  // multi-hot, entries in {0,1}
  int label = 0;                       // 1 = positive

  bool operator==(const Sample&) const = default;
};

/// Class probabilities; neg + pos == 1.
struct Prediction {
  double p_neg = 0.5;
  double p_pos = 0.5;
};

struct ProxTerm {
  double mu = 0.0;
  const ParamVector* anchor = nullptr;
};

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

Prediction forward(const ParamVector& params, const Sample& sample);

/// Sum over samples of -ln p(label). Empty data yields 0.
double total_loss(const ParamVector& params, std::span<const Sample> data);

/// Analytic gradient of total_loss.
ParamVector gradient(const ParamVector& params, std::span<const Sample> data);

/// total_loss and its gradient from one pass.
std::pair<double, ParamVector> loss_and_gradient(const ParamVector& params,
                                                 std::span<const Sample> data);

/// `epochs` full-batch gradient steps with rate `lr`. With a prox term the
/// objective becomes total_loss + mu/2 * ||theta - anchor||^2.
/// Throws TrainingDivergence on non-finite loss or gradient.
ParamVector sgd_epochs(ParamVector params, std::span<const Sample> data, double lr,
                       int epochs, std::optional<ProxTerm> prox = std::nullopt);

}  // namespace fedsim
