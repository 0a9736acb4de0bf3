#include "pwcf/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"

namespace pwcf::model {

const char* ToString(Activation a) {
  switch (a) {
    case Activation::kRelu:
      return "relu";
    case Activation::kTanh:
      return "tanh";
    case Activation::kIdentity:
      return "identity";
  }
  return "unknown";
}

Activation ActivationFromString(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "identity") return Activation::kIdentity;
  throw Error(ErrorCode::kInvalidArgument, fmt::format("unknown activation '{}'", name));
}

namespace {

Vector Activate(Activation a, const Vector& z) {
  switch (a) {
    case Activation::kRelu:
      return z.cwiseMax(0.0);
    case Activation::kTanh:
      return z.array().tanh().matrix();
    case Activation::kIdentity:
      return z;
  }
  return z;
}

// Derivative from the pre-activation z and the activated value a.
Vector ActivationSlope(Activation act, const Vector& z, const Vector& a) {
  switch (act) {
    case Activation::kRelu:
      return (z.array() > 0.0).cast<double>().matrix();
    case Activation::kTanh:
      return (1.0 - a.array().square()).matrix();
    case Activation::kIdentity:
      return Vector::Ones(z.size());
  }
  return Vector::Ones(z.size());
}

void CheckSizes(const std::vector<int>& sizes) {
  if (sizes.size() < 2) throw Error(ErrorCode::kInvalidArgument, "need at least one layer");
  for (int s : sizes) {
    if (s <= 0) throw Error(ErrorCode::kInvalidArgument, "layer sizes must be positive");
  }
}

}  // namespace

Classifier::Classifier(std::vector<DenseLayer> layers, Activation hidden)
    : layers_(std::move(layers)), activation_(hidden) {
  if (layers_.empty()) throw Error(ErrorCode::kInvalidArgument, "classifier has no layers");
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& l = layers_[k];
    RequireSameSize(l.bias.size(), l.weight.rows(), "layer bias");
    if (k > 0) RequireSameSize(l.weight.cols(), layers_[k - 1].weight.rows(), "layer input");
    if (!l.weight.allFinite() || !l.bias.allFinite()) {
      throw Error(ErrorCode::kNonFinite, "non-finite layer parameters");
    }
  }
}

Classifier Classifier::Random(const std::vector<int>& sizes, Activation hidden,
                              std::uint64_t seed) {
  CheckSizes(sizes);
  std::mt19937_64 rng(seed);
  std::vector<DenseLayer> layers;
  for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
    const int in = sizes[k];
    const int out = sizes[k + 1];
    const double limit = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> u(-limit, limit);
    DenseLayer l{Matrix(out, in), Vector::Zero(out)};
    for (int i = 0; i < out; ++i)
      for (int j = 0; j < in; ++j) l.weight(i, j) = u(rng);
    layers.push_back(std::move(l));
  }
  return Classifier(std::move(layers), hidden);
}

Classifier Classifier::Zeros(const std::vector<int>& sizes, Activation hidden) {
  CheckSizes(sizes);
  std::vector<DenseLayer> layers;
  for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
    layers.push_back({Matrix::Zero(sizes[k + 1], sizes[k]), Vector::Zero(sizes[k + 1])});
  }
  return Classifier(std::move(layers), hidden);
}

std::vector<int> Classifier::sizes() const {
  std::vector<int> out{static_cast<int>(input_dim())};
  for (const auto& l : layers_) out.push_back(static_cast<int>(l.weight.rows()));
  return out;
}

Trace Classifier::ForwardTrace(const Vector& x) const {
  RequireSameSize(x.size(), input_dim(), "classifier input");
  Trace t;
  t.post.reserve(layers_.size() + 1);
  t.pre.reserve(layers_.size());
  t.post.push_back(x);
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    t.pre.push_back(layers_[k].weight * t.post.back() + layers_[k].bias);
    const bool last = k + 1 == layers_.size();
    t.post.push_back(last ? t.pre.back() : Activate(activation_, t.pre.back()));
  }
  return t;
}

Vector Classifier::Forward(const Vector& x) const { return ForwardTrace(x).logits(); }

int Classifier::Predict(const Vector& x) const {
  Eigen::Index k = 0;
  Forward(x).maxCoeff(&k);
  return static_cast<int>(k);
}

Eigen::Index Classifier::embedding_dim() const {
  Eigen::Index n = 0;
  for (std::size_t k = 0; k + 1 < layers_.size(); ++k) n += layers_[k].weight.rows();
  return n;
}

Vector Classifier::Embedding(const Trace& trace) const {
  Vector e(embedding_dim());
  Eigen::Index offset = 0;
  for (std::size_t k = 1; k + 1 < trace.post.size(); ++k) {
    e.segment(offset, trace.post[k].size()) = trace.post[k];
    offset += trace.post[k].size();
  }
  return e;
}

Vector Classifier::InputGradient(const Trace& trace, const Vector& d_logits,
                                 const Vector* d_embedding) const {
  RequireSameSize(d_logits.size(), num_classes(), "logit gradient");
  if (d_embedding != nullptr) RequireSameSize(d_embedding->size(), embedding_dim(), "embedding gradient");
  // Hidden layer k (0-based) starts at offsets[k] inside the embedding.
  std::vector<Eigen::Index> offsets(layers_.size(), 0);
  for (std::size_t k = 1; k < layers_.size(); ++k) {
    offsets[k] = offsets[k - 1] + layers_[k - 1].weight.rows();
  }
  Vector g = d_logits;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    Vector g_in = layers_[k].weight.transpose() * g;
    if (k == 0) return g_in;
    const std::size_t h = k - 1;
    if (d_embedding != nullptr) g_in += d_embedding->segment(offsets[h], g_in.size());
    g = g_in.cwiseProduct(ActivationSlope(activation_, trace.pre[h], trace.post[k]));
  }
  return g;
}

Vector Classifier::LogitGradient(const Vector& x, int index) const {
  if (index < 0 || index >= num_classes()) {
    throw Error(ErrorCode::kInvalidArgument, "logit index out of range");
  }
  Vector e = Vector::Zero(num_classes());
  e[index] = 1.0;
  return InputGradient(ForwardTrace(x), e);
}

ParameterGradients Classifier::ParameterGradient(const Trace& trace, const Vector& d_logits) const {
  RequireSameSize(d_logits.size(), num_classes(), "logit gradient");
  ParameterGradients out;
  out.weight.resize(layers_.size());
  out.bias.resize(layers_.size());
  Vector g = d_logits;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    out.weight[k] = g * trace.post[k].transpose();
    out.bias[k] = g;
    if (k == 0) break;
    g = (layers_[k].weight.transpose() * g)
            .cwiseProduct(ActivationSlope(activation_, trace.pre[k - 1], trace.post[k]));
  }
  return out;
}

void Classifier::ApplyStep(const ParameterGradients& grad, double lr) {
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    layers_[k].weight -= lr * grad.weight[k];
    layers_[k].bias -= lr * grad.bias[k];
  }
}

Vector Classifier::Parameters() const {
  ParameterGradients view;
  for (const auto& l : layers_) {
    view.weight.push_back(l.weight);
    view.bias.push_back(l.bias);
  }
  return Flatten(view);
}

Vector Classifier::Flatten(const ParameterGradients& grad) const {
  Eigen::Index total = 0;
  for (const auto& l : layers_) total += l.weight.size() + l.bias.size();
  Vector out(total);
  Eigen::Index o = 0;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const Matrix& w = grad.weight[k];
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) out[o++] = w(i, j);
    out.segment(o, grad.bias[k].size()) = grad.bias[k];
    o += grad.bias[k].size();
  }
  return out;
}

void Classifier::SetParameters(const Vector& theta) {
  RequireSameSize(theta.size(), Parameters().size(), "parameter vector");
  RequireFinite(theta, "parameter vector");
  Eigen::Index o = 0;
  for (auto& l : layers_) {
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) l.weight(i, j) = theta[o++];
    l.bias = theta.segment(o, l.bias.size());
    o += l.bias.size();
  }
}

double SoftmaxCrossEntropy(const Vector& logits, int y, Vector* grad) {
  if (y < 0 || y >= logits.size()) throw Error(ErrorCode::kInvalidArgument, "label out of range");
  const double m = logits.maxCoeff();
  const Vector e = (logits.array() - m).exp().matrix();
  const double s = e.sum();
  if (grad != nullptr) {
    *grad = e / s;
    (*grad)[y] -= 1.0;
  }
  return m + std::log(s) - logits[y];
}

// ---------------------------------------------------------------------------

namespace {

Vector Clip01(Vector v) { return v.cwiseMax(0.0).cwiseMin(1.0); }

}  // namespace

Dataset MakeBlobs(const BlobsConfig& cfg) {
  if (cfg.num_classes < 2 || cfg.train_size <= 0 || cfg.val_size < 0 || !(cfg.stddev > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "invalid blobs configuration");
  }
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, cfg.stddev);
  auto draw = [&](int count) {
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      const int y = i % cfg.num_classes;
      const double angle = 2.0 * M_PI * y / cfg.num_classes;
      Vector x(2);
      x << 0.5 + 0.25 * std::cos(angle) + noise(rng), 0.5 + 0.25 * std::sin(angle) + noise(rng);
      out.push_back({Clip01(std::move(x)), y});
    }
    return out;
  };
  Dataset d;
  d.train = draw(cfg.train_size);
  d.val = draw(cfg.val_size);
  d.num_classes = cfg.num_classes;
  d.dim = 2;
  return d;
}

Dataset MakeMoons(const MoonsConfig& cfg) {
  if (cfg.train_size <= 0 || cfg.val_size < 0 || cfg.noise < 0.0) {
    throw Error(ErrorCode::kInvalidArgument, "invalid moons configuration");
  }
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> angle(0.0, M_PI);
  std::normal_distribution<double> noise(0.0, cfg.noise);
  auto draw = [&](int count) {
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      const int y = i % 2;
      const double t = angle(rng);
      double px = y == 0 ? std::cos(t) : 1.0 - std::cos(t);
      double py = y == 0 ? std::sin(t) : 0.5 - std::sin(t);
      px += noise(rng);
      py += noise(rng);
      // [-1, 2] x [-0.5, 1] into the unit square, aspect preserved.
      Vector x(2);
      x << (px + 1.0) / 3.0, (py - 0.25) / 3.0 + 0.5;
      out.push_back({Clip01(std::move(x)), y});
    }
    return out;
  };
  Dataset d;
  d.train = draw(cfg.train_size);
  d.val = draw(cfg.val_size);
  d.num_classes = 2;
  d.dim = 2;
  return d;
}

double Accuracy(const Classifier& model, const std::vector<Sample>& samples) {
  if (samples.empty()) return 0.0;
  int correct = 0;
  for (const auto& s : samples) correct += model.Predict(s.x) == s.y ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

namespace {

double MeanLoss(const Classifier& model, const std::vector<Sample>& samples) {
  double total = 0.0;
  for (const auto& s : samples) total += SoftmaxCrossEntropy(model.Forward(s.x), s.y);
  return total / static_cast<double>(samples.size());
}

TrainReport RunSgd(Classifier& model, const Dataset& data, const TrainConfig& cfg,
                   const InnerMaximizer* inner) {
  if (data.train.empty()) throw Error(ErrorCode::kInvalidArgument, "empty training set");
  if (cfg.epochs < 0 || cfg.batch_size <= 0 || !(cfg.lr > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "invalid training configuration");
  }
  RequireSameSize(data.dim, model.input_dim(), "dataset dimension");
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.train.size());
  TrainReport report;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      ParameterGradients sum;
      for (std::size_t b = start; b < stop; ++b) {
        const Sample& s = data.train[order[b]];
        Vector x = s.x;
        if (inner != nullptr) {
          const std::uint64_t stream =
              static_cast<std::uint64_t>(epoch) * data.train.size() + order[b];
          x = (*inner)(model, s.x, s.y, DeriveSeed(cfg.seed, stream));
        }
        const Trace t = model.ForwardTrace(x);
        Vector d_logits;
        SoftmaxCrossEntropy(t.logits(), s.y, &d_logits);
        ParameterGradients g = model.ParameterGradient(t, d_logits);
        if (sum.weight.empty()) {
          sum = std::move(g);
        } else {
          for (std::size_t k = 0; k < g.weight.size(); ++k) {
            sum.weight[k] += g.weight[k];
            sum.bias[k] += g.bias[k];
          }
        }
      }
      model.ApplyStep(sum, cfg.lr / static_cast<double>(stop - start));
    }
    report.epochs_run = epoch + 1;
    const Vector theta = model.Parameters();
    if (!theta.allFinite()) {
      report.diverged = true;
      break;
    }
  }
  report.final_loss = report.diverged ? std::nan("") : MeanLoss(model, data.train);
  if (!std::isfinite(report.final_loss)) report.diverged = true;
  if (!report.diverged) {
    report.train_accuracy = Accuracy(model, data.train);
    report.val_accuracy = Accuracy(model, data.val);
  }
  return report;
}

}  // namespace

TrainReport Train(Classifier& model, const Dataset& data, const TrainConfig& cfg) {
  return RunSgd(model, data, cfg, nullptr);
}

TrainReport AdversarialTrain(Classifier& model, const Dataset& data, const InnerMaximizer& inner,
                             const TrainConfig& cfg) {
  if (!inner) throw Error(ErrorCode::kInvalidArgument, "missing inner maximizer");
  return RunSgd(model, data, cfg, &inner);
}

// ---------------------------------------------------------------------------

double DanskinInnerValue(double theta, double x_prime) {
  const double r = std::max(theta * x_prime, 0.0);
  return r * r;
}

double DanskinObjective(double theta) { return theta * theta; }

double DanskinGlobalMaximizer(double theta) {
  return theta > 0.0 ? 1.0 : (theta < 0.0 ? -1.0 : 0.0);
}

double DanskinInnerPoint(DanskinInner inner) {
  return inner == DanskinInner::kStationaryZero ? 0.0 : 1.0;
}

double DanskinSubgradient(double theta, DanskinInner inner) {
  const double xp = DanskinInnerPoint(inner);
  return 2.0 * std::max(theta * xp, 0.0) * xp;
}

// ---------------------------------------------------------------------------

std::string ToJson(const Classifier& model) {
  nlohmann::json j;
  j["format"] = "pwcf-mlp";
  j["version"] = 1;
  j["activation"] = ToString(model.activation());
  j["layers"] = nlohmann::json::array();
  for (const auto& l : model.layers()) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(l.weight.size()));
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
      for (Eigen::Index k = 0; k < l.weight.cols(); ++k) w.push_back(l.weight(i, k));
    j["layers"].push_back({{"in", l.weight.cols()},
                           {"out", l.weight.rows()},
                           {"weight", w},
                           {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
  return j.dump(1);
}

Classifier FromJson(const std::string& text) {
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    if (j.at("format") != "pwcf-mlp" || j.at("version") != 1) {
      throw Error(ErrorCode::kInvalidArgument, "unsupported checkpoint format or version");
    }
    std::vector<DenseLayer> layers;
    for (const auto& jl : j.at("layers")) {
      const auto in = jl.at("in").get<Eigen::Index>();
      const auto out = jl.at("out").get<Eigen::Index>();
      const auto w = jl.at("weight").get<std::vector<double>>();
      const auto b = jl.at("bias").get<std::vector<double>>();
      if (in <= 0 || out <= 0 || static_cast<Eigen::Index>(w.size()) != in * out ||
          static_cast<Eigen::Index>(b.size()) != out) {
        throw Error(ErrorCode::kDimensionMismatch, "checkpoint layer shape mismatch");
      }
      DenseLayer l{Matrix(out, in), Vector(out)};
      for (Eigen::Index i = 0; i < out; ++i)
        for (Eigen::Index k = 0; k < in; ++k) l.weight(i, k) = w[static_cast<std::size_t>(i * in + k)];
      for (Eigen::Index i = 0; i < out; ++i) l.bias[i] = b[static_cast<std::size_t>(i)];
      layers.push_back(std::move(l));
    }
    return Classifier(std::move(layers), ActivationFromString(j.at("activation").get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("bad checkpoint: {}", e.what()));
  }
}

void Save(const Classifier& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot write '{}'", path));
  out << ToJson(model) << '\n';
  if (!out) throw Error(ErrorCode::kIo, fmt::format("write to '{}' failed", path));
}

Classifier Load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot read '{}'", path));
  std::stringstream ss;
  ss << in.rdbuf();
  return FromJson(ss.str());
}

}  // namespace pwcf::model
