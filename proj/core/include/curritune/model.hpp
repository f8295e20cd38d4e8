#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "curritune/common.hpp"

namespace curritune {

enum class Precision { f64, f32 };

std::string_view precision_name(Precision p);
Precision parse_precision(std::string_view name);

/// Shape of the decoder-only transformer: pre-layer-norm blocks, learned
/// positional embeddings, exact-GELU feed-forward, untied output projection,
/// no dropout.
struct ModelConfig {
  int n_layers = 2;
  int n_heads = 2;
  int d_model = 16;
  int d_ff = 32;
  int max_seq = 64;
  int vocab_size = 256;
  Precision precision = Precision::f64;

  void validate() const;

  /// Closed-form parameter count:
  ///   d*(2*vocab + max_seq) + n_layers*(4*d^2 + 2*d*d_ff + d_ff + 9*d) + 2*d
  /// (embeddings and untied head, per-layer attention + MLP + two layer
  /// norms, final layer norm). Verified against enumeration in the tests.
  std::int64_t param_count() const;

  bool same_shape(const ModelConfig& other) const;
};

/// Post-softmax attention probabilities from one forward pass. Rows are
/// query positions, columns key positions; entries above the diagonal are
/// exactly zero and each row sums to one over its causal support.
struct AttentionCapture {
  int n_layers = 0;
  int n_heads = 0;
  int seq_len = 0;
  // layers[l] is head-major: index h*seq_len*seq_len + q*seq_len + k.
  std::vector<std::vector<double>> layers;

  double at(int layer, int head, int query, int key) const {
    return layers[static_cast<std::size_t>(layer)]
                 [(static_cast<std::size_t>(head) * seq_len + query) * seq_len + key];
  }
};

struct ForwardResult {
  int seq_len = 0;
  int vocab = 0;
  std::vector<double> logits;         // seq_len x vocab, row-major
  std::vector<double> per_token_nll;  // entry t scores the prediction of token t+1
  std::optional<AttentionCapture> capture;

  double logit(int pos, int token) const {
    return logits[static_cast<std::size_t>(pos) * vocab + token];
  }
};

enum class Reduction { sum, mean };

std::string_view reduction_name(Reduction r);
Reduction parse_reduction(std::string_view name);

/// Cross-entropy over the answer span only: positions t with t+1 >=
/// answer_start contribute per_token_nll[t]; everything earlier contributes
/// nothing. mean divides by the span length.
double masked_loss(const ForwardResult& result, std::int32_t answer_start,
                   Reduction reduction);

enum class ParamKind { embedding, weight, bias, ln_gain, ln_bias };

struct TensorInfo {
  std::string name;
  std::vector<int> shape;
  ParamKind kind;
  std::int64_t offset = 0;  // into the flat parameter store
  std::int64_t size = 0;
};

struct AdamWHyper {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled; applied to embedding/weight tensors only
};

struct AdamWState {
  std::vector<double> m, v;  // sized to the model's flat parameter count
  std::int64_t t = 0;
};

class ModelBackend;

/// Transformer state plus its gradient buffers. The compute precision is
/// fixed at construction (config.precision); the parameter surface and all
/// returned values are double either way.
///
/// const methods are safe to call concurrently on a shared instance;
/// mutating methods (gradient accumulation, optimizer steps) are not.
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);
  Model(const Model& other);
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;
  ~Model();

  const ModelConfig& config() const;
  std::int64_t step() const;
  void set_step(std::int64_t step);

  ForwardResult forward(std::span<const std::int32_t> tokens,
                        bool capture_attention) const;

  /// Sum-reduced answer cross-entropy without touching gradients.
  double masked_sum_loss(std::span<const std::int32_t> tokens,
                         std::int32_t answer_start) const;

  void zero_grad();

  /// Backpropagates the sum-reduced answer loss, adding into the gradient
  /// buffers; parameters are untouched. Returns the loss.
  double accumulate_grad(std::span<const std::int32_t> tokens,
                         std::int32_t answer_start);

  /// Same, but scoring exactly the targets at positions [begin, end).
  double accumulate_grad_range(std::span<const std::int32_t> tokens,
                               std::int32_t target_begin, std::int32_t target_end);

  double grad_l2norm() const;
  void scale_grad(double factor);
  void adamw_update(AdamWState& state, const AdamWHyper& hyper);

  // Flat parameter surface, used by the optimizer sanity tests, the
  // finite-difference oracle and the checkpoint code.
  std::size_t n_tensors() const;
  const TensorInfo& tensor_info(std::size_t tensor) const;
  std::int64_t n_params() const;
  double param(std::size_t tensor, std::int64_t index) const;
  void set_param(std::size_t tensor, std::int64_t index, double value);
  double grad(std::size_t tensor, std::int64_t index) const;

  /// Versioned binary checkpoint: config, step counter, raw IEEE parameter
  /// bytes, trailing integrity digest. Reloading reproduces forward outputs
  /// bitwise.
  std::string serialize() const;
  static Model deserialize(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);

  /// Digest of the serialized state; ties score caches to the checkpoint
  /// that produced them.
  std::string fingerprint() const;

 private:
  explicit Model(std::unique_ptr<ModelBackend> impl);
  std::unique_ptr<ModelBackend> impl_;
};

/// Deterministic initialization for a fixed (config, seed): Glorot-uniform
/// projections, uniform(-0.08, 0.08) embeddings, ones/zeros layer norms.
inline Model init_model(const ModelConfig& config, std::uint64_t seed) {
  return Model(config, seed);
}

}  // namespace curritune
