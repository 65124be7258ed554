#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsxil/tensor.hpp"

namespace tsxil {

enum class TaskKind { Classification, Forecasting };

enum class Activation { Softplus, Tanh, Relu };

std::string to_string(TaskKind k);
std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);
ad::Tensor activate(const ad::Tensor& x, Activation a);

// A model maps a batch of univariate series [N, T] to [N, out].
class Model {
 public:
  virtual ~Model() = default;

  virtual ad::Tensor forward(const ad::Tensor& x) const = 0;
  virtual TaskKind task() const = 0;
  virtual std::size_t output_size() const = 0;
  // Input length the model accepts; 0 when any length >= min_input_length() works.
  virtual std::size_t input_length() const = 0;
  virtual std::size_t min_input_length() const = 0;
  virtual nlohmann::json descriptor() const = 0;
  virtual std::unique_ptr<Model> clone() const = 0;

  const std::vector<ad::Tensor>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> flat);

 protected:
  std::vector<ad::Tensor> params_;
};

struct FcnConfig {
  std::vector<std::size_t> channels{32, 64, 32};
  std::vector<std::size_t> kernels{7, 5, 3};
  std::size_t num_classes = 2;
  Activation activation = Activation::Softplus;
};

// Fully-convolutional classifier: conv blocks with same padding, global
// average pooling, linear head to K logits.
class FcnClassifier final : public Model {
 public:
  FcnClassifier(FcnConfig cfg, std::uint64_t seed);

  ad::Tensor forward(const ad::Tensor& x) const override;
  TaskKind task() const override { return TaskKind::Classification; }
  std::size_t output_size() const override { return cfg_.num_classes; }
  std::size_t input_length() const override { return 0; }
  std::size_t min_input_length() const override;
  nlohmann::json descriptor() const override;
  std::unique_ptr<Model> clone() const override;

  const FcnConfig& config() const { return cfg_; }

  static std::size_t count_parameters(const FcnConfig& cfg);

 private:
  FcnConfig cfg_;
};

struct MlpConfig {
  std::size_t lookback = 32;
  std::size_t horizon = 8;
  std::vector<std::size_t> hidden{128, 128};
  Activation activation = Activation::Softplus;
};

class MlpForecaster final : public Model {
 public:
  MlpForecaster(MlpConfig cfg, std::uint64_t seed);

  ad::Tensor forward(const ad::Tensor& x) const override;
  TaskKind task() const override { return TaskKind::Forecasting; }
  std::size_t output_size() const override { return cfg_.horizon; }
  std::size_t input_length() const override { return cfg_.lookback; }
  std::size_t min_input_length() const override { return cfg_.lookback; }
  nlohmann::json descriptor() const override;
  std::unique_ptr<Model> clone() const override;

  const MlpConfig& config() const { return cfg_; }

  static std::size_t count_parameters(const MlpConfig& cfg);

 private:
  MlpConfig cfg_;
};

// Single-series conveniences. Both validate the length and run without
// recording a graph.
std::vector<double> classify(const Model& model, std::span<const double> x);
std::vector<double> forecast(const Model& model, std::span<const double> x);
std::vector<double> softmax(std::span<const double> logits);

// Batch inference without recording; rows of `xs` must share one length.
std::vector<std::vector<double>> predict(const Model& model, const std::vector<std::vector<double>>& xs);

ad::Tensor batch_tensor(const std::vector<std::vector<double>>& xs);
ad::Tensor batch_tensor(const std::vector<std::vector<double>>& xs, std::span<const std::size_t> rows);

std::unique_ptr<Model> model_from_descriptor(const nlohmann::json& desc, std::uint64_t seed = 0);

// Checkpoint: one line of JSON (architecture descriptor + parameter count),
// then the flat parameter vector as little-endian float64.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_bytes(const Model& model);
std::unique_ptr<Model> checkpoint_from_bytes(const std::string& bytes);

}  // namespace tsxil
