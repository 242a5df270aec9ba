#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "mmtpp/templating.hpp"

namespace mmtpp {

// Small pre-LN decoder-only transformer over the event-template vocabulary.
struct ToyLMConfig {
  int vocab_size = 0;
  int embed_dim = 64;
  int n_layers = 2;
  int n_heads = 4;
  int context_len = 1024;
  int feature_dim = 64;          // image feature vector length
  TokenId image_pad_token = -1;  // positions that receive the vision adapter output

  double stage1_lr = 1e-4;
  int stage1_epochs = 5;
  double stage2_lr = 1e-4;
  int stage2_epochs = 3;
  double weight_decay = 0.0;
  double grad_clip = 1.0;
  double temperature = 0.05;
  double init_scale = 0.02;
  std::uint64_t seed = 0;

  void validate() const;  // throws InvalidArgument
  int mlp_dim() const { return 4 * embed_dim; }
  bool operator==(const ToyLMConfig&) const = default;
};

nlohmann::json config_to_json(const ToyLMConfig& c);
ToyLMConfig config_from_json(const nlohmann::json& j);  // missing keys keep defaults

struct TensorInfo {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;  // in elements
  std::size_t size() const;
};

// Named slices of the flat parameter vector.
std::vector<TensorInfo> parameter_layout(const ToyLMConfig& c);
std::size_t parameter_count(const ToyLMConfig& c);

// Parameter storage is over-aligned so that vectorised reductions see the
// same alignment on every run, which keeps training bit-reproducible.
template <class T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

struct ModelParams {
  ToyLMConfig config;
  AlignedVector<float> values;

  static ModelParams init(const ToyLMConfig& config);  // seeded from config.seed
  bool operator==(const ModelParams&) const = default;
};

// One feature vector per image_pad token of the stream, in stream order.
using ImageFeatures = std::vector<std::vector<float>>;

struct NllResult {
  double mean = 0.0;
  std::vector<double> per_token;  // per_token[i] = -log p(x_{i+1} | x_<=i)
};

// Forward pass with optional per-target weights (weights[i] scales the
// prediction of token i + 1; empty = all ones). The mean is the weighted
// mean. Image features are fused additively at image_pad positions; when
// features is null those positions use the plain token embedding.
NllResult forward_nll(const ModelParams& params, std::span<const TokenId> ids,
                      const ImageFeatures* features = nullptr,
                      std::span<const float> weights = {}, bool double_precision = false);

struct NllGradient {
  double loss = 0.0;
  std::vector<double> gradient;  // d loss / d params, flat layout
};

// 64-bit loss and gradient, for verification.
NllGradient nll_gradient64(const ToyLMConfig& config, std::span<const double> params,
                           std::span<const TokenId> ids, const ImageFeatures* features = nullptr,
                           std::span<const float> weights = {});
double nll64(const ToyLMConfig& config, std::span<const double> params,
             std::span<const TokenId> ids, const ImageFeatures* features = nullptr,
             std::span<const float> weights = {});

// Full logit matrix, row i predicting token i + 1 (row-major, n x vocab).
std::vector<float> logits(const ModelParams& params, std::span<const TokenId> ids,
                          const ImageFeatures* features = nullptr);

// Stage-2 loss weights: 1 on positions that predict response tokens.
std::vector<float> response_weights(std::size_t prompt_len, std::size_t response_len);

struct TrainExample {
  TokenStream stream;
  std::vector<float> weights;      // empty = full next-token loss
  std::optional<ImageFeatures> features;
};

struct TrainResult {
  ModelParams params;
  std::vector<double> epoch_loss;  // mean loss per epoch
  std::size_t steps = 0;
};

using TrainCallback = std::function<void(int epoch, std::size_t step, double loss)>;

// Adam (batch size 1) with global-norm clipping. Deterministic given the seed.
TrainResult train(ModelParams params, std::span<const TrainExample> data, double lr, int epochs,
                  const TrainCallback& on_step = {});

TrainResult train_stage1(const ToyLMConfig& config, std::span<const TokenStream> corpus,
                         const ModelParams* init = nullptr, const TrainCallback& on_step = {});
TrainResult train_stage2(const ModelParams& params, std::span<const PromptResponsePair> pairs,
                         const TrainCallback& on_step = {});

struct GenerateOptions {
  double temperature = 0.05;  // 0 = argmax
  std::size_t max_new = 64;
  std::uint64_t seed = 0;
};

// Autoregressive sampling. Time responses stop after 4 tokens, type
// responses after 1, text responses at text_end or max_new.
TokenStream generate(const ModelParams& params, const TokenStream& prompt, TaskKind task,
                     const Vocabulary& vocab, const GenerateOptions& options = {},
                     const ImageFeatures* features = nullptr);

// Index of the sampled token from one logit row.
TokenId sample_token(std::span<const float> logit_row, double temperature, std::mt19937_64& rng);

// Writes `<stem>.bin` (little-endian float32, flat) and `<stem>.json`.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& stem);
ModelParams load_checkpoint(const std::filesystem::path& stem);

// Stand-in vision encoder: 8x8 mean-pooled grayscale patch in [0, 1].
std::vector<float> image_feature(const std::vector<std::uint8_t>& gray, int width, int height);

}  // namespace mmtpp
