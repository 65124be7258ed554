#include "tsxil/models.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tsxil/error.hpp"
#include "tsxil/random.hpp"

namespace tsxil {

namespace {

// PyTorch-style default init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
ad::Tensor init_param(ad::Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return ad::Tensor::from(std::move(v), std::move(shape), true);
}

std::vector<ad::Tensor> deep_copy(const std::vector<ad::Tensor>& params) {
  std::vector<ad::Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    out.push_back(ad::Tensor::from({p.values().begin(), p.values().end()}, p.shape(), true));
  }
  return out;
}

ad::Tensor add_bias(const ad::Tensor& y, const ad::Tensor& bias) {
  // bias [C] onto [N, C] or [N, C, T]
  ad::Shape bshape(y.rank(), 1);
  bshape[1] = bias.dim(0);
  return ad::add(y, ad::expand(ad::reshape(bias, bshape), y.shape()));
}

void check_input(const Model& m, const ad::Tensor& x) {
  if (x.rank() != 2) throw ShapeError("model input must be [N, T], got " + ad::shape_str(x.shape()));
  const std::size_t t = x.dim(1);
  if (m.input_length() != 0 && t != m.input_length()) {
    throw ShapeError("model expects series of length " + std::to_string(m.input_length()) + ", got " +
                     std::to_string(t));
  }
  if (t < m.min_input_length()) {
    throw ShapeError("series length " + std::to_string(t) + " is below the minimum " +
                     std::to_string(m.min_input_length()));
  }
}

}  // namespace

std::string to_string(TaskKind k) { return k == TaskKind::Classification ? "classification" : "forecasting"; }

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Softplus:
      return "softplus";
    case Activation::Tanh:
      return "tanh";
    case Activation::Relu:
      return "relu";
  }
  return "softplus";
}

Activation activation_from_string(const std::string& s) {
  if (s == "softplus") return Activation::Softplus;
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw ConfigError("unknown activation '" + s + "'");
}

ad::Tensor activate(const ad::Tensor& x, Activation a) {
  switch (a) {
    case Activation::Softplus:
      return ad::softplus(x);
    case Activation::Tanh:
      return ad::tanh(x);
    case Activation::Relu:
      return ad::relu(x);
  }
  return x;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

std::vector<double> Model::flat_parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& p : params_) flat.insert(flat.end(), p.values().begin(), p.values().end());
  return flat;
}

void Model::set_flat_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_count()) {
    throw ShapeError("expected " + std::to_string(parameter_count()) + " parameters, got " +
                     std::to_string(flat.size()));
  }
  std::size_t off = 0;
  for (auto& p : params_) {
    auto& v = p.mutable_values();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), v.size(), v.begin());
    off += v.size();
  }
}

// ---- FCN -------------------------------------------------------------------

FcnClassifier::FcnClassifier(FcnConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  if (cfg_.channels.empty() || cfg_.channels.size() != cfg_.kernels.size()) {
    throw ConfigError("fcn: channels and kernels must be non-empty and of equal length");
  }
  if (cfg_.num_classes < 2) throw ConfigError("fcn: need at least 2 classes");
  for (auto k : cfg_.kernels)
    if (k == 0) throw ConfigError("fcn: kernel size must be positive");
  for (auto c : cfg_.channels)
    if (c == 0) throw ConfigError("fcn: channel count must be positive");
  Rng rng(seed);
  std::size_t cin = 1;
  for (std::size_t b = 0; b < cfg_.channels.size(); ++b) {
    const std::size_t cout = cfg_.channels[b], k = cfg_.kernels[b];
    params_.push_back(init_param({cout, cin, k}, cin * k, rng));
    params_.push_back(init_param({cout}, cin * k, rng));
    cin = cout;
  }
  params_.push_back(init_param({cin, cfg_.num_classes}, cin, rng));
  params_.push_back(init_param({cfg_.num_classes}, cin, rng));
}

std::size_t FcnClassifier::min_input_length() const {
  return *std::max_element(cfg_.kernels.begin(), cfg_.kernels.end());
}

ad::Tensor FcnClassifier::forward(const ad::Tensor& x) const {
  check_input(*this, x);
  const std::size_t n = x.dim(0), t = x.dim(1);
  ad::Tensor h = ad::reshape(x, {n, 1, t});
  for (std::size_t b = 0; b < cfg_.channels.size(); ++b) {
    h = activate(add_bias(ad::conv1d(h, params_[2 * b]), params_[2 * b + 1]), cfg_.activation);
  }
  const std::size_t c = cfg_.channels.back();
  ad::Tensor pooled = ad::scale(ad::reshape(ad::sum_to(h, {n, c, 1}), {n, c}), 1.0 / static_cast<double>(t));
  const std::size_t head = 2 * cfg_.channels.size();
  return add_bias(ad::matmul(pooled, params_[head]), params_[head + 1]);
}

nlohmann::json FcnClassifier::descriptor() const {
  return {{"family", "fcn"},
          {"channels", cfg_.channels},
          {"kernels", cfg_.kernels},
          {"num_classes", cfg_.num_classes},
          {"activation", to_string(cfg_.activation)}};
}

std::unique_ptr<Model> FcnClassifier::clone() const {
  auto m = std::make_unique<FcnClassifier>(*this);
  m->params_ = deep_copy(params_);
  return m;
}

std::size_t FcnClassifier::count_parameters(const FcnConfig& cfg) {
  std::size_t n = 0, cin = 1;
  for (std::size_t b = 0; b < cfg.channels.size(); ++b) {
    n += cfg.channels[b] * cin * cfg.kernels[b] + cfg.channels[b];
    cin = cfg.channels[b];
  }
  return n + cin * cfg.num_classes + cfg.num_classes;
}

// ---- MLP -------------------------------------------------------------------

MlpForecaster::MlpForecaster(MlpConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  if (cfg_.lookback == 0 || cfg_.horizon == 0) throw ConfigError("mlp: lookback and horizon must be positive");
  Rng rng(seed);
  std::size_t in = cfg_.lookback;
  for (auto width : cfg_.hidden) {
    if (width == 0) throw ConfigError("mlp: hidden width must be positive");
    params_.push_back(init_param({in, width}, in, rng));
    params_.push_back(init_param({width}, in, rng));
    in = width;
  }
  params_.push_back(init_param({in, cfg_.horizon}, in, rng));
  params_.push_back(init_param({cfg_.horizon}, in, rng));
}

ad::Tensor MlpForecaster::forward(const ad::Tensor& x) const {
  check_input(*this, x);
  ad::Tensor h = x;
  const std::size_t layers = params_.size() / 2;
  for (std::size_t l = 0; l < layers; ++l) {
    h = add_bias(ad::matmul(h, params_[2 * l]), params_[2 * l + 1]);
    if (l + 1 < layers) h = activate(h, cfg_.activation);
  }
  return h;
}

nlohmann::json MlpForecaster::descriptor() const {
  return {{"family", "mlp"},
          {"lookback", cfg_.lookback},
          {"horizon", cfg_.horizon},
          {"hidden", cfg_.hidden},
          {"activation", to_string(cfg_.activation)}};
}

std::unique_ptr<Model> MlpForecaster::clone() const {
  auto m = std::make_unique<MlpForecaster>(*this);
  m->params_ = deep_copy(params_);
  return m;
}

std::size_t MlpForecaster::count_parameters(const MlpConfig& cfg) {
  std::size_t n = 0, in = cfg.lookback;
  for (auto w : cfg.hidden) {
    n += in * w + w;
    in = w;
  }
  return n + in * cfg.horizon + cfg.horizon;
}

// ---- inference helpers -----------------------------------------------------

ad::Tensor batch_tensor(const std::vector<std::vector<double>>& xs) {
  std::vector<std::size_t> rows(xs.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return batch_tensor(xs, rows);
}

ad::Tensor batch_tensor(const std::vector<std::vector<double>>& xs, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ShapeError("empty batch");
  const std::size_t t = xs.at(rows[0]).size();
  std::vector<double> flat;
  flat.reserve(rows.size() * t);
  for (auto r : rows) {
    const auto& x = xs.at(r);
    if (x.size() != t) throw ShapeError("batch rows differ in length");
    flat.insert(flat.end(), x.begin(), x.end());
  }
  return ad::Tensor::from(std::move(flat), {rows.size(), t});
}

std::vector<std::vector<double>> predict(const Model& model, const std::vector<std::vector<double>>& xs) {
  std::vector<std::vector<double>> out;
  if (xs.empty()) return out;
  ad::NoGradGuard guard;
  constexpr std::size_t kChunk = 256;
  out.reserve(xs.size());
  for (std::size_t start = 0; start < xs.size(); start += kChunk) {
    const std::size_t end = std::min(xs.size(), start + kChunk);
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < end; ++i) rows.push_back(i);
    const auto y = model.forward(batch_tensor(xs, rows));
    const std::size_t k = y.dim(1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.emplace_back(y.values().begin() + static_cast<std::ptrdiff_t>(i * k),
                       y.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
    }
  }
  return out;
}

std::vector<double> classify(const Model& model, std::span<const double> x) {
  if (model.task() != TaskKind::Classification) throw ContractViolation("classify on a forecasting model");
  return predict(model, {{x.begin(), x.end()}}).front();
}

std::vector<double> forecast(const Model& model, std::span<const double> x) {
  if (model.task() != TaskKind::Forecasting) throw ContractViolation("forecast on a classification model");
  return predict(model, {{x.begin(), x.end()}}).front();
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double m = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (auto& v : p) z += (v = std::exp(v - m));
  for (auto& v : p) v /= z;
  return p;
}

std::unique_ptr<Model> model_from_descriptor(const nlohmann::json& desc, std::uint64_t seed) {
  const std::string family = desc.at("family").get<std::string>();
  if (family == "fcn") {
    FcnConfig cfg;
    cfg.channels = desc.at("channels").get<std::vector<std::size_t>>();
    cfg.kernels = desc.at("kernels").get<std::vector<std::size_t>>();
    cfg.num_classes = desc.at("num_classes").get<std::size_t>();
    cfg.activation = activation_from_string(desc.value("activation", "softplus"));
    return std::make_unique<FcnClassifier>(cfg, seed);
  }
  if (family == "mlp") {
    MlpConfig cfg;
    cfg.lookback = desc.at("lookback").get<std::size_t>();
    cfg.horizon = desc.at("horizon").get<std::size_t>();
    cfg.hidden = desc.at("hidden").get<std::vector<std::size_t>>();
    cfg.activation = activation_from_string(desc.value("activation", "softplus"));
    return std::make_unique<MlpForecaster>(cfg, seed);
  }
  throw ConfigError("unknown model family '" + family + "'");
}

// ---- checkpoints -----------------------------------------------------------

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

std::string checkpoint_bytes(const Model& model) {
  nlohmann::json header = {{"format", "tsxil-checkpoint"},
                           {"version", 1},
                           {"architecture", model.descriptor()},
                           {"param_count", model.parameter_count()}};
  std::string out = header.dump();
  out.push_back('\n');
  const auto flat = model.flat_parameters();
  const std::size_t off = out.size();
  out.resize(off + flat.size() * sizeof(double));
  std::memcpy(out.data() + off, flat.data(), flat.size() * sizeof(double));
  return out;
}

std::unique_ptr<Model> checkpoint_from_bytes(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw DataError("checkpoint: missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad header: ") + e.what());
  }
  auto model = model_from_descriptor(header.at("architecture"));
  const std::size_t count = header.at("param_count").get<std::size_t>();
  if (count != model->parameter_count() || bytes.size() - nl - 1 != count * sizeof(double)) {
    throw DataError("checkpoint: payload size does not match the architecture");
  }
  std::vector<double> flat(count);
  std::memcpy(flat.data(), bytes.data() + nl + 1, count * sizeof(double));
  model->set_flat_parameters(flat);
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint " + path.string());
  const auto bytes = checkpoint_bytes(model);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw NotFoundError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return checkpoint_from_bytes(ss.str());
}

}  // namespace tsxil
