#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pwcf/numerics.hpp"

namespace pwcf::model {

enum class Activation { kRelu, kTanh, kIdentity };

const char* ToString(Activation a);
Activation ActivationFromString(const std::string& name);

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;
};

// Intermediate values of one forward pass. post[0] is the input, post[k] the
// output of layer k (activated for hidden layers); post.back() are the logits.
struct Trace {
  std::vector<Vector> pre;
  std::vector<Vector> post;

  const Vector& logits() const { return post.back(); }
};

struct ParameterGradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
};

// Dense MLP. The hidden activation is applied after every layer but the last.
class Classifier {
 public:
  Classifier(std::vector<DenseLayer> layers, Activation hidden);

  // Glorot-uniform weights, zero biases. sizes = {in, hidden..., classes}.
  static Classifier Random(const std::vector<int>& sizes, Activation hidden, std::uint64_t seed);
  static Classifier Zeros(const std::vector<int>& sizes, Activation hidden);

  Eigen::Index input_dim() const { return layers_.front().weight.cols(); }
  int num_classes() const { return static_cast<int>(layers_.back().weight.rows()); }
  Activation activation() const { return activation_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& mutable_layers() { return layers_; }
  std::vector<int> sizes() const;

  Vector Forward(const Vector& x) const;
  Trace ForwardTrace(const Vector& x) const;
  int Predict(const Vector& x) const;

  // Post-activation hidden layers, concatenated.
  Vector Embedding(const Trace& trace) const;
  Vector Embedding(const Vector& x) const { return Embedding(ForwardTrace(x)); }
  Eigen::Index embedding_dim() const;

  // Reverse pass to the input. d_embedding (optional, embedding_dim long)
  // injects gradients at the hidden activations. Relu'(0) = 0.
  Vector InputGradient(const Trace& trace, const Vector& d_logits,
                       const Vector* d_embedding = nullptr) const;
  Vector LogitGradient(const Vector& x, int index) const;

  ParameterGradients ParameterGradient(const Trace& trace, const Vector& d_logits) const;
  void ApplyStep(const ParameterGradients& grad, double lr);

  // Flat parameter view (layer by layer: weight row-major, then bias).
  Vector Parameters() const;
  void SetParameters(const Vector& theta);
  Vector Flatten(const ParameterGradients& grad) const;

 private:
  std::vector<DenseLayer> layers_;
  Activation activation_;
};

// log-sum-exp(logits) - logits[y]; gradient w.r.t. the logits.
double SoftmaxCrossEntropy(const Vector& logits, int y, Vector* grad = nullptr);

struct Sample {
  Vector x;
  int y = 0;
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> val;
  int num_classes = 0;
  Eigen::Index dim = 0;
};

struct BlobsConfig {
  int num_classes = 3;
  int train_size = 500;
  int val_size = 200;
  double stddev = 0.08;
  std::uint64_t seed = 0;
};

// Isotropic Gaussian clusters with centers on a circle around (0.5, 0.5),
// clipped to [0,1]^2.
Dataset MakeBlobs(const BlobsConfig& cfg);

struct MoonsConfig {
  int train_size = 500;
  int val_size = 200;
  double noise = 0.05;
  std::uint64_t seed = 0;
};

// Two interleaved half circles rescaled into [0,1]^2.
Dataset MakeMoons(const MoonsConfig& cfg);

double Accuracy(const Classifier& model, const std::vector<Sample>& samples);

struct TrainConfig {
  int epochs = 200;
  double lr = 0.1;
  int batch_size = 32;
  std::uint64_t seed = 0;
};

struct TrainReport {
  int epochs_run = 0;
  double final_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  bool diverged = false;
};

// Mini-batch SGD on the mean cross-entropy. Shuffling uses cfg.seed.
TrainReport Train(Classifier& model, const Dataset& data, const TrainConfig& cfg);

// Returns an (approximate) inner maximizer x* near x for the current model.
using InnerMaximizer = std::function<Vector(const Classifier&, const Vector& x, int y,
                                            std::uint64_t seed)>;

// Each SGD step first replaces every batch sample by inner(model, x, y), then
// descends the cross-entropy at those points.
TrainReport AdversarialTrain(Classifier& model, const Dataset& data, const InnerMaximizer& inner,
                             const TrainConfig& cfg);

// g(theta) = max_{-1 <= x' <= 1} max(theta x', 0)^2 = theta^2.
enum class DanskinInner { kStationaryZero, kUpperEndpoint };

double DanskinInnerValue(double theta, double x_prime);
double DanskinObjective(double theta);
double DanskinGlobalMaximizer(double theta);
double DanskinInnerPoint(DanskinInner inner);
// d/dtheta max(theta x', 0)^2 at the chosen inner point.
double DanskinSubgradient(double theta, DanskinInner inner);

// Checkpoint: {"format": "pwcf-mlp", "version": 1, "activation", "layers":
// [{"in", "out", "weight": row-major, "bias"}]}.
std::string ToJson(const Classifier& model);
Classifier FromJson(const std::string& text);
void Save(const Classifier& model, const std::string& path);
Classifier Load(const std::string& path);

}  // namespace pwcf::model
