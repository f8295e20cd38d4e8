#include "curritune/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>

namespace curritune {

std::string_view precision_name(Precision p) {
  return p == Precision::f64 ? "double" : "single";
}

Precision parse_precision(std::string_view name) {
  if (name == "double" || name == "f64") return Precision::f64;
  if (name == "single" || name == "f32") return Precision::f32;
  throw DataError("unknown precision: " + std::string(name));
}

std::string_view reduction_name(Reduction r) {
  return r == Reduction::sum ? "sum" : "mean";
}

Reduction parse_reduction(std::string_view name) {
  if (name == "sum") return Reduction::sum;
  if (name == "mean") return Reduction::mean;
  throw DataError("unknown reduction: " + std::string(name));
}

void ModelConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1 || vocab_size < 1) {
    throw DataError("model config: all counts must be >= 1");
  }
  if (max_seq < 2) {
    throw DataError("model config: max_seq must be >= 2");
  }
  if (d_model % n_heads != 0) {
    throw DataError("model config: d_model " + std::to_string(d_model) +
                    " not divisible by n_heads " + std::to_string(n_heads));
  }
}

std::int64_t ModelConfig::param_count() const {
  const std::int64_t d = d_model, ff = d_ff, v = vocab_size, s = max_seq, l = n_layers;
  return d * (2 * v + s) + l * (4 * d * d + 2 * d * ff + ff + 9 * d) + 2 * d;
}

bool ModelConfig::same_shape(const ModelConfig& o) const {
  return n_layers == o.n_layers && n_heads == o.n_heads && d_model == o.d_model &&
         d_ff == o.d_ff && max_seq == o.max_seq && vocab_size == o.vocab_size &&
         precision == o.precision;
}

double masked_loss(const ForwardResult& result, std::int32_t answer_start,
                   Reduction reduction) {
  if (answer_start < 1) {
    throw DataError("masked_loss: answer_start must be >= 1");
  }
  const int span = result.seq_len - answer_start;
  if (span < 1) {
    throw DataError("no answer tokens to score");
  }
  double sum = 0.0;
  for (int t = answer_start - 1; t <= result.seq_len - 2; ++t) {
    sum += result.per_token_nll[static_cast<std::size_t>(t)];
  }
  return reduction == Reduction::sum ? sum : sum / span;
}

// ---------------------------------------------------------------------------
// Backend

class ModelBackend {
 public:
  virtual ~ModelBackend() = default;
  virtual std::unique_ptr<ModelBackend> clone() const = 0;

  virtual const ModelConfig& config() const = 0;
  virtual std::int64_t step() const = 0;
  virtual void set_step(std::int64_t s) = 0;

  virtual ForwardResult forward(std::span<const std::int32_t> tokens,
                                bool capture) const = 0;
  virtual double masked_sum_loss(std::span<const std::int32_t> tokens,
                                 std::int32_t answer_start) const = 0;
  virtual void zero_grad() = 0;
  virtual double accumulate_grad_range(std::span<const std::int32_t> tokens,
                                       std::int32_t target_begin,
                                       std::int32_t target_end) = 0;
  virtual double grad_l2norm() const = 0;
  virtual void scale_grad(double factor) = 0;
  virtual void adamw_update(AdamWState& state, const AdamWHyper& hyper) = 0;

  virtual const std::vector<TensorInfo>& tensors() const = 0;
  virtual std::int64_t n_params() const = 0;
  virtual double param_at(std::int64_t flat) const = 0;
  virtual void set_param_at(std::int64_t flat, double value) = 0;
  virtual double grad_at(std::int64_t flat) const = 0;
  virtual void load_raw(std::size_t tensor, const void* bytes, std::size_t size) = 0;
  virtual void append_raw(std::size_t tensor, std::string& out) const = 0;
};

namespace {

constexpr double kLnEps = 1e-5;
constexpr std::array<const char*, 16> kLayerTensorNames = {
    "ln1.g", "ln1.b", "attn.wq", "attn.bq", "attn.wk", "attn.bk",
    "attn.wv", "attn.bv", "attn.wo", "attn.bo", "ln2.g", "ln2.b",
    "mlp.wfc", "mlp.bfc", "mlp.wproj", "mlp.bproj"};

template <typename S>
class BackendImpl final : public ModelBackend {
 public:
  BackendImpl(const ModelConfig& cfg, std::uint64_t seed, bool init_params)
      : cfg_(cfg) {
    cfg_.validate();
    build_layout();
    params_.assign(static_cast<std::size_t>(total_), S(0));
    grads_.assign(static_cast<std::size_t>(total_), S(0));
    if (init_params) {
      initialize(seed);
    }
  }

  std::unique_ptr<ModelBackend> clone() const override {
    return std::make_unique<BackendImpl<S>>(*this);
  }

  const ModelConfig& config() const override { return cfg_; }
  std::int64_t step() const override { return step_; }
  void set_step(std::int64_t s) override { step_ = s; }

  ForwardResult forward(std::span<const std::int32_t> tokens, bool capture) const override;
  double masked_sum_loss(std::span<const std::int32_t> tokens,
                         std::int32_t answer_start) const override;
  void zero_grad() override { std::fill(grads_.begin(), grads_.end(), S(0)); }
  double accumulate_grad_range(std::span<const std::int32_t> tokens,
                               std::int32_t target_begin,
                               std::int32_t target_end) override;

  double grad_l2norm() const override {
    double sum = 0.0;
    for (S g : grads_) {
      const double gd = static_cast<double>(g);
      sum += gd * gd;
    }
    return std::sqrt(sum);
  }

  void scale_grad(double factor) override {
    for (S& g : grads_) {
      g = static_cast<S>(static_cast<double>(g) * factor);
    }
  }

  void adamw_update(AdamWState& st, const AdamWHyper& h) override {
    const auto n = static_cast<std::size_t>(total_);
    if (st.m.size() != n) {
      st.m.assign(n, 0.0);
      st.v.assign(n, 0.0);
      st.t = 0;
    }
    ++st.t;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(st.t));
    for (const TensorInfo& info : tensors_) {
      const bool decay =
          info.kind == ParamKind::weight || info.kind == ParamKind::embedding;
      const auto off = static_cast<std::size_t>(info.offset);
      for (std::size_t i = off; i < off + static_cast<std::size_t>(info.size); ++i) {
        const double g = static_cast<double>(grads_[i]);
        double p = static_cast<double>(params_[i]);
        st.m[i] = h.beta1 * st.m[i] + (1.0 - h.beta1) * g;
        st.v[i] = h.beta2 * st.v[i] + (1.0 - h.beta2) * g * g;
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        p -= h.lr * (mhat / (std::sqrt(vhat) + h.eps));
        if (decay) {
          p -= h.lr * h.weight_decay * p;
        }
        params_[i] = static_cast<S>(p);
      }
    }
  }

  const std::vector<TensorInfo>& tensors() const override { return tensors_; }
  std::int64_t n_params() const override { return total_; }

  double param_at(std::int64_t flat) const override {
    return static_cast<double>(params_[static_cast<std::size_t>(flat)]);
  }
  void set_param_at(std::int64_t flat, double value) override {
    params_[static_cast<std::size_t>(flat)] = static_cast<S>(value);
  }
  double grad_at(std::int64_t flat) const override {
    return static_cast<double>(grads_[static_cast<std::size_t>(flat)]);
  }

  void load_raw(std::size_t tensor, const void* bytes, std::size_t size) override {
    const TensorInfo& info = tensors_[tensor];
    if (size != static_cast<std::size_t>(info.size) * sizeof(S)) {
      throw DataError("checkpoint: tensor byte size mismatch for " + info.name);
    }
    std::memcpy(params_.data() + info.offset, bytes, size);
  }

  void append_raw(std::size_t tensor, std::string& out) const override {
    const TensorInfo& info = tensors_[tensor];
    const auto* p = reinterpret_cast<const char*>(params_.data() + info.offset);
    out.append(p, static_cast<std::size_t>(info.size) * sizeof(S));
  }

 private:
  void build_layout();
  void initialize(std::uint64_t seed);
  void check_tokens(std::span<const std::int32_t> tokens) const;

  // Everything the backward pass needs from the forward pass.
  struct Acts {
    int T = 0;
    std::vector<S> x0;  // T x d
    struct LayerActs {
      std::vector<S> ln1_out, ln1_mean, ln1_rstd;
      std::vector<S> q, k, v;    // T x d
      std::vector<S> att;        // H x T x T
      std::vector<S> att_out;    // T x d
      std::vector<S> res1;       // T x d
      std::vector<S> ln2_out, ln2_mean, ln2_rstd;
      std::vector<S> fc_out;     // T x ff
      std::vector<S> gelu_out;   // T x ff
      std::vector<S> res2;       // T x d
    };
    std::vector<LayerActs> layers;
    std::vector<S> lnf_out, lnf_mean, lnf_rstd;
    std::vector<S> logits;  // T x V
    std::vector<S> probs;   // T x V, rows 0..T-2 populated
  };

  void run_forward(std::span<const std::int32_t> tokens, Acts& acts) const;

  const S* p(std::size_t tensor) const { return params_.data() + tensors_[tensor].offset; }
  S* g(std::size_t tensor) { return grads_.data() + tensors_[tensor].offset; }

  // Tensor table indices.
  static constexpr std::size_t kTokEmb = 0;
  static constexpr std::size_t kPosEmb = 1;
  std::size_t layer_base(int l) const { return 2 + 16 * static_cast<std::size_t>(l); }
  std::size_t lnf_g_idx() const { return 2 + 16 * static_cast<std::size_t>(cfg_.n_layers); }
  std::size_t head_idx() const { return lnf_g_idx() + 2; }

  ModelConfig cfg_;
  std::int64_t step_ = 0;
  std::vector<TensorInfo> tensors_;
  std::int64_t total_ = 0;
  std::vector<S> params_;
  std::vector<S> grads_;
};

template <typename S>
void BackendImpl<S>::build_layout() {
  const int d = cfg_.d_model, ff = cfg_.d_ff, v = cfg_.vocab_size, s = cfg_.max_seq;
  auto add = [&](std::string name, std::vector<int> shape, ParamKind kind) {
    TensorInfo info;
    info.name = std::move(name);
    info.shape = std::move(shape);
    info.kind = kind;
    info.offset = total_;
    info.size = 1;
    for (int dim : info.shape) {
      info.size *= dim;
    }
    total_ += info.size;
    tensors_.push_back(std::move(info));
  };

  add("tok_emb", {v, d}, ParamKind::embedding);
  add("pos_emb", {s, d}, ParamKind::embedding);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".";
    add(prefix + kLayerTensorNames[0], {d}, ParamKind::ln_gain);
    add(prefix + kLayerTensorNames[1], {d}, ParamKind::ln_bias);
    add(prefix + kLayerTensorNames[2], {d, d}, ParamKind::weight);
    add(prefix + kLayerTensorNames[3], {d}, ParamKind::bias);
    add(prefix + kLayerTensorNames[4], {d, d}, ParamKind::weight);
    add(prefix + kLayerTensorNames[5], {d}, ParamKind::bias);
    add(prefix + kLayerTensorNames[6], {d, d}, ParamKind::weight);
    add(prefix + kLayerTensorNames[7], {d}, ParamKind::bias);
    add(prefix + kLayerTensorNames[8], {d, d}, ParamKind::weight);
    add(prefix + kLayerTensorNames[9], {d}, ParamKind::bias);
    add(prefix + kLayerTensorNames[10], {d}, ParamKind::ln_gain);
    add(prefix + kLayerTensorNames[11], {d}, ParamKind::ln_bias);
    add(prefix + kLayerTensorNames[12], {ff, d}, ParamKind::weight);
    add(prefix + kLayerTensorNames[13], {ff}, ParamKind::bias);
    add(prefix + kLayerTensorNames[14], {d, ff}, ParamKind::weight);
    add(prefix + kLayerTensorNames[15], {d}, ParamKind::bias);
  }
  add("lnf.g", {d}, ParamKind::ln_gain);
  add("lnf.b", {d}, ParamKind::ln_bias);
  add("head.w", {v, d}, ParamKind::weight);
}

template <typename S>
void BackendImpl<S>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed));
  for (const TensorInfo& info : tensors_) {
    S* out = params_.data() + info.offset;
    switch (info.kind) {
      case ParamKind::embedding: {
        for (std::int64_t i = 0; i < info.size; ++i) {
          out[i] = static_cast<S>(-0.08 + 0.16 * unit_uniform(rng));
        }
        break;
      }
      case ParamKind::weight: {
        const double fan_out = info.shape[0];
        const double fan_in = info.shape[1];
        const double a = std::sqrt(6.0 / (fan_in + fan_out));
        for (std::int64_t i = 0; i < info.size; ++i) {
          out[i] = static_cast<S>(-a + 2.0 * a * unit_uniform(rng));
        }
        break;
      }
      case ParamKind::ln_gain:
        std::fill_n(out, info.size, S(1));
        break;
      case ParamKind::bias:
      case ParamKind::ln_bias:
        std::fill_n(out, info.size, S(0));
        break;
    }
  }
}

template <typename S>
void BackendImpl<S>::check_tokens(std::span<const std::int32_t> tokens) const {
  if (tokens.empty()) {
    throw DataError("forward: empty token sequence");
  }
  if (static_cast<int>(tokens.size()) > cfg_.max_seq) {
    throw DataError("forward: sequence length " + std::to_string(tokens.size()) +
                    " exceeds max_seq " + std::to_string(cfg_.max_seq));
  }
  for (std::int32_t id : tokens) {
    if (id < 0 || id >= cfg_.vocab_size) {
      throw DataError("forward: token id " + std::to_string(id) +
                      " outside vocabulary of size " + std::to_string(cfg_.vocab_size));
    }
  }
}

template <typename S>
inline void matvec(const S* w, const S* x, const S* b, S* y, int out, int in) {
  for (int o = 0; o < out; ++o) {
    S acc = b ? b[o] : S(0);
    const S* row = w + static_cast<std::size_t>(o) * in;
    for (int i = 0; i < in; ++i) {
      acc += row[i] * x[i];
    }
    y[o] = acc;
  }
}

template <typename S>
inline void layer_norm(const S* x, const S* gain, const S* bias, S* y, S* mean_out,
                       S* rstd_out, int d) {
  S mean = 0;
  for (int j = 0; j < d; ++j) {
    mean += x[j];
  }
  mean /= static_cast<S>(d);
  S var = 0;
  for (int j = 0; j < d; ++j) {
    const S c = x[j] - mean;
    var += c * c;
  }
  var /= static_cast<S>(d);
  const S rstd = S(1) / std::sqrt(var + static_cast<S>(kLnEps));
  for (int j = 0; j < d; ++j) {
    y[j] = gain[j] * ((x[j] - mean) * rstd) + bias[j];
  }
  *mean_out = mean;
  *rstd_out = rstd;
}

// dx for one position given dy, using the cached mean/rstd.
template <typename S>
inline void layer_norm_backward(const S* x, const S* gain, S mean, S rstd, const S* dy,
                                S* dgain, S* dbias, S* dx_accum, int d) {
  S sum_dxhat = 0, sum_dxhat_xhat = 0;
  for (int j = 0; j < d; ++j) {
    const S xhat = (x[j] - mean) * rstd;
    const S dxhat = dy[j] * gain[j];
    dgain[j] += dy[j] * xhat;
    dbias[j] += dy[j];
    sum_dxhat += dxhat;
    sum_dxhat_xhat += dxhat * xhat;
  }
  const S inv_d = S(1) / static_cast<S>(d);
  for (int j = 0; j < d; ++j) {
    const S xhat = (x[j] - mean) * rstd;
    const S dxhat = dy[j] * gain[j];
    dx_accum[j] += rstd * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
  }
}

constexpr double kInvSqrt2 = 0.70710678118654752440;   // 1/sqrt(2)
constexpr double kInvSqrt2Pi = 0.39894228040143267794;  // 1/sqrt(2*pi)

inline double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
}

inline double gelu_grad_scalar(double x) {
  const double phi_cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  const double phi_pdf = std::exp(-0.5 * x * x) * kInvSqrt2Pi;
  return phi_cdf + x * phi_pdf;
}

template <typename S>
void BackendImpl<S>::run_forward(std::span<const std::int32_t> tokens, Acts& acts) const {
  check_tokens(tokens);
  const int T = static_cast<int>(tokens.size());
  const int d = cfg_.d_model, ff = cfg_.d_ff, V = cfg_.vocab_size, H = cfg_.n_heads;
  const int dh = d / H;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  acts.T = T;
  acts.x0.assign(static_cast<std::size_t>(T) * d, S(0));
  const S* tok_emb = p(kTokEmb);
  const S* pos_emb = p(kPosEmb);
  for (int t = 0; t < T; ++t) {
    const S* te = tok_emb + static_cast<std::size_t>(tokens[t]) * d;
    const S* pe = pos_emb + static_cast<std::size_t>(t) * d;
    S* x = acts.x0.data() + static_cast<std::size_t>(t) * d;
    for (int j = 0; j < d; ++j) {
      x[j] = te[j] + pe[j];
    }
  }

  acts.layers.resize(static_cast<std::size_t>(cfg_.n_layers));
  const std::vector<S>* x_in = &acts.x0;
  for (int l = 0; l < cfg_.n_layers; ++l) {
    auto& la = acts.layers[static_cast<std::size_t>(l)];
    const std::size_t base = layer_base(l);
    la.ln1_out.resize(static_cast<std::size_t>(T) * d);
    la.ln1_mean.resize(static_cast<std::size_t>(T));
    la.ln1_rstd.resize(static_cast<std::size_t>(T));
    la.q.resize(static_cast<std::size_t>(T) * d);
    la.k.resize(static_cast<std::size_t>(T) * d);
    la.v.resize(static_cast<std::size_t>(T) * d);
    la.att.assign(static_cast<std::size_t>(H) * T * T, S(0));
    la.att_out.assign(static_cast<std::size_t>(T) * d, S(0));
    la.res1.resize(static_cast<std::size_t>(T) * d);
    la.ln2_out.resize(static_cast<std::size_t>(T) * d);
    la.ln2_mean.resize(static_cast<std::size_t>(T));
    la.ln2_rstd.resize(static_cast<std::size_t>(T));
    la.fc_out.resize(static_cast<std::size_t>(T) * ff);
    la.gelu_out.resize(static_cast<std::size_t>(T) * ff);
    la.res2.resize(static_cast<std::size_t>(T) * d);

    for (int t = 0; t < T; ++t) {
      layer_norm(x_in->data() + static_cast<std::size_t>(t) * d, p(base + 0), p(base + 1),
                 la.ln1_out.data() + static_cast<std::size_t>(t) * d, &la.ln1_mean[t],
                 &la.ln1_rstd[t], d);
    }
    for (int t = 0; t < T; ++t) {
      const S* h1 = la.ln1_out.data() + static_cast<std::size_t>(t) * d;
      matvec(p(base + 2), h1, p(base + 3), la.q.data() + static_cast<std::size_t>(t) * d, d, d);
      matvec(p(base + 4), h1, p(base + 5), la.k.data() + static_cast<std::size_t>(t) * d, d, d);
      matvec(p(base + 6), h1, p(base + 7), la.v.data() + static_cast<std::size_t>(t) * d, d, d);
    }

    std::vector<S> scores(static_cast<std::size_t>(T));
    for (int h = 0; h < H; ++h) {
      const int hoff = h * dh;
      S* att_h = la.att.data() + static_cast<std::size_t>(h) * T * T;
      for (int t = 0; t < T; ++t) {
        const S* qt = la.q.data() + static_cast<std::size_t>(t) * d + hoff;
        S max_s = std::numeric_limits<S>::lowest();
        for (int u = 0; u <= t; ++u) {
          const S* ku = la.k.data() + static_cast<std::size_t>(u) * d + hoff;
          S s = 0;
          for (int j = 0; j < dh; ++j) {
            s += qt[j] * ku[j];
          }
          s *= scale;
          scores[u] = s;
          max_s = std::max(max_s, s);
        }
        S sum = 0;
        S* row = att_h + static_cast<std::size_t>(t) * T;
        for (int u = 0; u <= t; ++u) {
          const S e = std::exp(scores[u] - max_s);
          row[u] = e;
          sum += e;
        }
        const S inv = S(1) / sum;
        for (int u = 0; u <= t; ++u) {
          row[u] *= inv;
        }
        S* ot = la.att_out.data() + static_cast<std::size_t>(t) * d + hoff;
        for (int u = 0; u <= t; ++u) {
          const S a = row[u];
          const S* vu = la.v.data() + static_cast<std::size_t>(u) * d + hoff;
          for (int j = 0; j < dh; ++j) {
            ot[j] += a * vu[j];
          }
        }
      }
    }

    std::vector<S> proj(static_cast<std::size_t>(d));
    for (int t = 0; t < T; ++t) {
      matvec(p(base + 8), la.att_out.data() + static_cast<std::size_t>(t) * d, p(base + 9),
             proj.data(), d, d);
      const S* xi = x_in->data() + static_cast<std::size_t>(t) * d;
      S* r1 = la.res1.data() + static_cast<std::size_t>(t) * d;
      for (int j = 0; j < d; ++j) {
        r1[j] = xi[j] + proj[j];
      }
    }

    for (int t = 0; t < T; ++t) {
      layer_norm(la.res1.data() + static_cast<std::size_t>(t) * d, p(base + 10),
                 p(base + 11), la.ln2_out.data() + static_cast<std::size_t>(t) * d,
                 &la.ln2_mean[t], &la.ln2_rstd[t], d);
    }
    std::vector<S> mlp(static_cast<std::size_t>(d));
    for (int t = 0; t < T; ++t) {
      S* fc = la.fc_out.data() + static_cast<std::size_t>(t) * ff;
      matvec(p(base + 12), la.ln2_out.data() + static_cast<std::size_t>(t) * d, p(base + 13),
             fc, ff, d);
      S* ge = la.gelu_out.data() + static_cast<std::size_t>(t) * ff;
      for (int i = 0; i < ff; ++i) {
        ge[i] = static_cast<S>(gelu_scalar(static_cast<double>(fc[i])));
      }
      matvec(p(base + 14), ge, p(base + 15), mlp.data(), d, ff);
      const S* r1 = la.res1.data() + static_cast<std::size_t>(t) * d;
      S* r2 = la.res2.data() + static_cast<std::size_t>(t) * d;
      for (int j = 0; j < d; ++j) {
        r2[j] = r1[j] + mlp[j];
      }
    }
    x_in = &la.res2;
  }

  acts.lnf_out.resize(static_cast<std::size_t>(T) * d);
  acts.lnf_mean.resize(static_cast<std::size_t>(T));
  acts.lnf_rstd.resize(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    layer_norm(x_in->data() + static_cast<std::size_t>(t) * d, p(lnf_g_idx()),
               p(lnf_g_idx() + 1), acts.lnf_out.data() + static_cast<std::size_t>(t) * d,
               &acts.lnf_mean[t], &acts.lnf_rstd[t], d);
  }

  acts.logits.resize(static_cast<std::size_t>(T) * V);
  const S* head = p(head_idx());
  for (int t = 0; t < T; ++t) {
    matvec(head, acts.lnf_out.data() + static_cast<std::size_t>(t) * d,
           static_cast<const S*>(nullptr),
           acts.logits.data() + static_cast<std::size_t>(t) * V, V, d);
  }

  // Softmax rows are needed wherever a next token exists.
  acts.probs.assign(static_cast<std::size_t>(T) * V, S(0));
  for (int t = 0; t + 1 < T; ++t) {
    const S* row = acts.logits.data() + static_cast<std::size_t>(t) * V;
    S* prow = acts.probs.data() + static_cast<std::size_t>(t) * V;
    S max_l = row[0];
    for (int o = 1; o < V; ++o) {
      max_l = std::max(max_l, row[o]);
    }
    S sum = 0;
    for (int o = 0; o < V; ++o) {
      const S e = std::exp(row[o] - max_l);
      prow[o] = e;
      sum += e;
    }
    const S inv = S(1) / sum;
    for (int o = 0; o < V; ++o) {
      prow[o] *= inv;
    }
  }
}

template <typename S>
ForwardResult BackendImpl<S>::forward(std::span<const std::int32_t> tokens,
                                      bool capture) const {
  Acts acts;
  run_forward(tokens, acts);
  const int T = acts.T, V = cfg_.vocab_size, H = cfg_.n_heads;

  ForwardResult out;
  out.seq_len = T;
  out.vocab = V;
  out.logits.resize(static_cast<std::size_t>(T) * V);
  for (std::size_t i = 0; i < out.logits.size(); ++i) {
    out.logits[i] = static_cast<double>(acts.logits[i]);
  }
  out.per_token_nll.resize(static_cast<std::size_t>(std::max(0, T - 1)));
  for (int t = 0; t + 1 < T; ++t) {
    const S* prow = acts.probs.data() + static_cast<std::size_t>(t) * V;
    const double pt = static_cast<double>(prow[tokens[static_cast<std::size_t>(t) + 1]]);
    out.per_token_nll[static_cast<std::size_t>(t)] = -std::log(pt);
  }

  if (capture) {
    AttentionCapture cap;
    cap.n_layers = cfg_.n_layers;
    cap.n_heads = H;
    cap.seq_len = T;
    cap.layers.resize(static_cast<std::size_t>(cfg_.n_layers));
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const auto& att = acts.layers[static_cast<std::size_t>(l)].att;
      auto& dst = cap.layers[static_cast<std::size_t>(l)];
      dst.resize(att.size());
      for (std::size_t i = 0; i < att.size(); ++i) {
        dst[i] = static_cast<double>(att[i]);
      }
    }
    out.capture = std::move(cap);
  }
  return out;
}

template <typename S>
double BackendImpl<S>::masked_sum_loss(std::span<const std::int32_t> tokens,
                                       std::int32_t answer_start) const {
  Acts acts;
  run_forward(tokens, acts);
  const int T = acts.T, V = cfg_.vocab_size;
  if (answer_start < 1) {
    throw DataError("masked_loss: answer_start must be >= 1");
  }
  if (answer_start >= T) {
    throw DataError("no answer tokens to score");
  }
  double sum = 0.0;
  for (int t = answer_start - 1; t + 1 < T; ++t) {
    const S* prow = acts.probs.data() + static_cast<std::size_t>(t) * V;
    sum += -std::log(static_cast<double>(prow[tokens[static_cast<std::size_t>(t) + 1]]));
  }
  return sum;
}

template <typename S>
double BackendImpl<S>::accumulate_grad_range(std::span<const std::int32_t> tokens,
                                             std::int32_t target_begin,
                                             std::int32_t target_end) {
  Acts acts;
  run_forward(tokens, acts);
  const int T = acts.T;
  const int d = cfg_.d_model, ff = cfg_.d_ff, V = cfg_.vocab_size, H = cfg_.n_heads;
  const int dh = d / H;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  if (target_begin < 1 || target_end > T) {
    throw DataError("grad: target range outside [1, seq_len]");
  }
  if (target_begin >= target_end) {
    throw DataError("no answer tokens to score");
  }

  // dL/dlogits for the sum-reduced loss over targets [begin, end).
  std::vector<S> dlogits(static_cast<std::size_t>(T) * V, S(0));
  double loss = 0.0;
  for (int tgt = target_begin; tgt < target_end; ++tgt) {
    const int t = tgt - 1;
    const S* prow = acts.probs.data() + static_cast<std::size_t>(t) * V;
    S* drow = dlogits.data() + static_cast<std::size_t>(t) * V;
    for (int o = 0; o < V; ++o) {
      drow[o] = prow[o];
    }
    drow[tokens[static_cast<std::size_t>(tgt)]] -= S(1);
    loss += -std::log(static_cast<double>(prow[tokens[static_cast<std::size_t>(tgt)]]));
  }

  // Head projection (no bias): logits = head * lnf_out.
  std::vector<S> dlnf(static_cast<std::size_t>(T) * d, S(0));
  {
    const S* head = p(head_idx());
    S* dhead = g(head_idx());
    for (int tgt = target_begin; tgt < target_end; ++tgt) {
      const int t = tgt - 1;
      const S* drow = dlogits.data() + static_cast<std::size_t>(t) * V;
      const S* lt = acts.lnf_out.data() + static_cast<std::size_t>(t) * d;
      S* dl = dlnf.data() + static_cast<std::size_t>(t) * d;
      for (int o = 0; o < V; ++o) {
        const S dv = drow[o];
        if (dv == S(0)) {
          continue;
        }
        const S* hrow = head + static_cast<std::size_t>(o) * d;
        S* ghrow = dhead + static_cast<std::size_t>(o) * d;
        for (int j = 0; j < d; ++j) {
          ghrow[j] += dv * lt[j];
          dl[j] += dv * hrow[j];
        }
      }
    }
  }

  // Final layer norm.
  const std::vector<S>& x_last =
      cfg_.n_layers == 0 ? acts.x0 : acts.layers.back().res2;
  std::vector<S> dx(static_cast<std::size_t>(T) * d, S(0));
  for (int t = 0; t < T; ++t) {
    layer_norm_backward(x_last.data() + static_cast<std::size_t>(t) * d, p(lnf_g_idx()),
                        acts.lnf_mean[static_cast<std::size_t>(t)],
                        acts.lnf_rstd[static_cast<std::size_t>(t)],
                        dlnf.data() + static_cast<std::size_t>(t) * d, g(lnf_g_idx()),
                        g(lnf_g_idx() + 1), dx.data() + static_cast<std::size_t>(t) * d, d);
  }

  std::vector<S> dres1(static_cast<std::size_t>(T) * d);
  std::vector<S> dln2(static_cast<std::size_t>(T) * d);
  std::vector<S> dgelu(static_cast<std::size_t>(ff));
  std::vector<S> dfc(static_cast<std::size_t>(T) * ff);
  std::vector<S> datt_out(static_cast<std::size_t>(T) * d);
  std::vector<S> dq(static_cast<std::size_t>(T) * d);
  std::vector<S> dk(static_cast<std::size_t>(T) * d);
  std::vector<S> dv(static_cast<std::size_t>(T) * d);
  std::vector<S> dln1(static_cast<std::size_t>(T) * d);
  std::vector<S> datt_row(static_cast<std::size_t>(T));

  for (int l = cfg_.n_layers - 1; l >= 0; --l) {
    auto& la = acts.layers[static_cast<std::size_t>(l)];
    const std::size_t base = layer_base(l);
    const std::vector<S>& x_in = l == 0 ? acts.x0 : acts.layers[static_cast<std::size_t>(l - 1)].res2;

    // dx currently holds dL/d(res2). MLP branch: res2 = res1 + wproj*gelu(wfc*ln2(res1)).
    std::fill(dres1.begin(), dres1.end(), S(0));
    std::fill(dln2.begin(), dln2.end(), S(0));
    std::fill(dfc.begin(), dfc.end(), S(0));
    for (int t = 0; t < T; ++t) {
      const S* dy = dx.data() + static_cast<std::size_t>(t) * d;
      S* dr1 = dres1.data() + static_cast<std::size_t>(t) * d;
      for (int j = 0; j < d; ++j) {
        dr1[j] += dy[j];  // residual skip
      }
      // wproj backward
      std::fill(dgelu.begin(), dgelu.end(), S(0));
      const S* ge = la.gelu_out.data() + static_cast<std::size_t>(t) * ff;
      const S* wproj = p(base + 14);
      S* gwproj = g(base + 14);
      S* gbproj = g(base + 15);
      for (int o = 0; o < d; ++o) {
        const S dv_o = dy[o];
        if (dv_o == S(0)) {
          continue;
        }
        const S* wrow = wproj + static_cast<std::size_t>(o) * ff;
        S* gwrow = gwproj + static_cast<std::size_t>(o) * ff;
        for (int i = 0; i < ff; ++i) {
          gwrow[i] += dv_o * ge[i];
          dgelu[static_cast<std::size_t>(i)] += dv_o * wrow[i];
        }
        gbproj[o] += dv_o;
      }
      // gelu backward
      const S* fc = la.fc_out.data() + static_cast<std::size_t>(t) * ff;
      S* dfc_t = dfc.data() + static_cast<std::size_t>(t) * ff;
      for (int i = 0; i < ff; ++i) {
        dfc_t[i] = dgelu[static_cast<std::size_t>(i)] *
                   static_cast<S>(gelu_grad_scalar(static_cast<double>(fc[i])));
      }
      // wfc backward
      const S* h2 = la.ln2_out.data() + static_cast<std::size_t>(t) * d;
      const S* wfc = p(base + 12);
      S* gwfc = g(base + 12);
      S* gbfc = g(base + 13);
      S* dl2 = dln2.data() + static_cast<std::size_t>(t) * d;
      for (int i = 0; i < ff; ++i) {
        const S dv_i = dfc_t[i];
        if (dv_i == S(0)) {
          continue;
        }
        const S* wrow = wfc + static_cast<std::size_t>(i) * d;
        S* gwrow = gwfc + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) {
          gwrow[j] += dv_i * h2[j];
          dl2[j] += dv_i * wrow[j];
        }
        gbfc[i] += dv_i;
      }
    }
    for (int t = 0; t < T; ++t) {
      layer_norm_backward(la.res1.data() + static_cast<std::size_t>(t) * d, p(base + 10),
                          la.ln2_mean[static_cast<std::size_t>(t)],
                          la.ln2_rstd[static_cast<std::size_t>(t)],
                          dln2.data() + static_cast<std::size_t>(t) * d, g(base + 10),
                          g(base + 11), dres1.data() + static_cast<std::size_t>(t) * d, d);
    }

    // Attention branch: res1 = x_in + wo*att_out.
    std::fill(dx.begin(), dx.end(), S(0));
    std::fill(datt_out.begin(), datt_out.end(), S(0));
    for (int t = 0; t < T; ++t) {
      const S* dr1 = dres1.data() + static_cast<std::size_t>(t) * d;
      S* dxi = dx.data() + static_cast<std::size_t>(t) * d;
      for (int j = 0; j < d; ++j) {
        dxi[j] += dr1[j];  // residual skip
      }
      const S* ao = la.att_out.data() + static_cast<std::size_t>(t) * d;
      const S* wo = p(base + 8);
      S* gwo = g(base + 8);
      S* gbo = g(base + 9);
      S* dao = datt_out.data() + static_cast<std::size_t>(t) * d;
      for (int o = 0; o < d; ++o) {
        const S dv_o = dr1[o];
        if (dv_o == S(0)) {
          continue;
        }
        const S* wrow = wo + static_cast<std::size_t>(o) * d;
        S* gwrow = gwo + static_cast<std::size_t>(o) * d;
        for (int j = 0; j < d; ++j) {
          gwrow[j] += dv_o * ao[j];
          dao[j] += dv_o * wrow[j];
        }
        gbo[o] += dv_o;
      }
    }

    std::fill(dq.begin(), dq.end(), S(0));
    std::fill(dk.begin(), dk.end(), S(0));
    std::fill(dv.begin(), dv.end(), S(0));
    for (int h = 0; h < H; ++h) {
      const int hoff = h * dh;
      const S* att_h = la.att.data() + static_cast<std::size_t>(h) * T * T;
      for (int t = 0; t < T; ++t) {
        const S* arow = att_h + static_cast<std::size_t>(t) * T;
        const S* dao = datt_out.data() + static_cast<std::size_t>(t) * d + hoff;
        // datt[t][u] and dv
        for (int u = 0; u <= t; ++u) {
          const S* vu = la.v.data() + static_cast<std::size_t>(u) * d + hoff;
          S* dvu = dv.data() + static_cast<std::size_t>(u) * d + hoff;
          S acc = 0;
          const S a = arow[u];
          for (int j = 0; j < dh; ++j) {
            acc += dao[j] * vu[j];
            dvu[j] += a * dao[j];
          }
          datt_row[static_cast<std::size_t>(u)] = acc;
        }
        // softmax backward over the causal row
        S dot = 0;
        for (int u = 0; u <= t; ++u) {
          dot += arow[u] * datt_row[static_cast<std::size_t>(u)];
        }
        const S* qt = la.q.data() + static_cast<std::size_t>(t) * d + hoff;
        S* dqt = dq.data() + static_cast<std::size_t>(t) * d + hoff;
        for (int u = 0; u <= t; ++u) {
          const S ds = arow[u] * (datt_row[static_cast<std::size_t>(u)] - dot) * scale;
          if (ds == S(0)) {
            continue;
          }
          const S* ku = la.k.data() + static_cast<std::size_t>(u) * d + hoff;
          S* dku = dk.data() + static_cast<std::size_t>(u) * d + hoff;
          for (int j = 0; j < dh; ++j) {
            dqt[j] += ds * ku[j];
            dku[j] += ds * qt[j];
          }
        }
      }
    }

    // Q/K/V projections back to ln1_out, then ln1 back to x_in.
    std::fill(dln1.begin(), dln1.end(), S(0));
    struct Proj {
      std::size_t w, b;
      const std::vector<S>* dval;
    };
    const std::array<Proj, 3> projs = {{{base + 2, base + 3, &dq},
                                        {base + 4, base + 5, &dk},
                                        {base + 6, base + 7, &dv}}};
    for (const auto& pr : projs) {
      const S* w = p(pr.w);
      S* gw = g(pr.w);
      S* gb = g(pr.b);
      for (int t = 0; t < T; ++t) {
        const S* dy = pr.dval->data() + static_cast<std::size_t>(t) * d;
        const S* h1 = la.ln1_out.data() + static_cast<std::size_t>(t) * d;
        S* dl1 = dln1.data() + static_cast<std::size_t>(t) * d;
        for (int o = 0; o < d; ++o) {
          const S dv_o = dy[o];
          if (dv_o == S(0)) {
            continue;
          }
          const S* wrow = w + static_cast<std::size_t>(o) * d;
          S* gwrow = gw + static_cast<std::size_t>(o) * d;
          for (int j = 0; j < d; ++j) {
            gwrow[j] += dv_o * h1[j];
            dl1[j] += dv_o * wrow[j];
          }
          gb[o] += dv_o;
        }
      }
    }
    for (int t = 0; t < T; ++t) {
      layer_norm_backward(x_in.data() + static_cast<std::size_t>(t) * d, p(base + 0),
                          la.ln1_mean[static_cast<std::size_t>(t)],
                          la.ln1_rstd[static_cast<std::size_t>(t)],
                          dln1.data() + static_cast<std::size_t>(t) * d, g(base + 0),
                          g(base + 1), dx.data() + static_cast<std::size_t>(t) * d, d);
    }
  }

  // Embeddings.
  S* gtok = g(kTokEmb);
  S* gpos = g(kPosEmb);
  for (int t = 0; t < T; ++t) {
    const S* dxt = dx.data() + static_cast<std::size_t>(t) * d;
    S* gt = gtok + static_cast<std::size_t>(tokens[static_cast<std::size_t>(t)]) * d;
    S* gp = gpos + static_cast<std::size_t>(t) * d;
    for (int j = 0; j < d; ++j) {
      gt[j] += dxt[j];
      gp[j] += dxt[j];
    }
  }

  return loss;
}

}  // namespace

// ---------------------------------------------------------------------------
// Model wrapper

namespace {

std::unique_ptr<ModelBackend> make_backend(const ModelConfig& cfg, std::uint64_t seed,
                                           bool init_params) {
  if (cfg.precision == Precision::f64) {
    return std::make_unique<BackendImpl<double>>(cfg, seed, init_params);
  }
  return std::make_unique<BackendImpl<float>>(cfg, seed, init_params);
}

}  // namespace

Model::Model(const ModelConfig& config, std::uint64_t seed)
    : impl_(make_backend(config, seed, true)) {}

Model::Model(std::unique_ptr<ModelBackend> impl) : impl_(std::move(impl)) {}

Model::Model(const Model& other) : impl_(other.impl_->clone()) {}
Model::Model(Model&&) noexcept = default;
Model& Model::operator=(Model&&) noexcept = default;
Model::~Model() = default;

const ModelConfig& Model::config() const { return impl_->config(); }
std::int64_t Model::step() const { return impl_->step(); }
void Model::set_step(std::int64_t step) { impl_->set_step(step); }

ForwardResult Model::forward(std::span<const std::int32_t> tokens,
                             bool capture_attention) const {
  return impl_->forward(tokens, capture_attention);
}

double Model::masked_sum_loss(std::span<const std::int32_t> tokens,
                              std::int32_t answer_start) const {
  return impl_->masked_sum_loss(tokens, answer_start);
}

void Model::zero_grad() { impl_->zero_grad(); }

double Model::accumulate_grad(std::span<const std::int32_t> tokens,
                              std::int32_t answer_start) {
  return impl_->accumulate_grad_range(tokens, answer_start,
                                      static_cast<std::int32_t>(tokens.size()));
}

double Model::accumulate_grad_range(std::span<const std::int32_t> tokens,
                                    std::int32_t target_begin, std::int32_t target_end) {
  return impl_->accumulate_grad_range(tokens, target_begin, target_end);
}

double Model::grad_l2norm() const { return impl_->grad_l2norm(); }
void Model::scale_grad(double factor) { impl_->scale_grad(factor); }

void Model::adamw_update(AdamWState& state, const AdamWHyper& hyper) {
  impl_->adamw_update(state, hyper);
}

std::size_t Model::n_tensors() const { return impl_->tensors().size(); }

const TensorInfo& Model::tensor_info(std::size_t tensor) const {
  return impl_->tensors().at(tensor);
}

std::int64_t Model::n_params() const { return impl_->n_params(); }

double Model::param(std::size_t tensor, std::int64_t index) const {
  const TensorInfo& info = impl_->tensors().at(tensor);
  if (index < 0 || index >= info.size) {
    throw DataError("parameter index out of range");
  }
  return impl_->param_at(info.offset + index);
}

void Model::set_param(std::size_t tensor, std::int64_t index, double value) {
  const TensorInfo& info = impl_->tensors().at(tensor);
  if (index < 0 || index >= info.size) {
    throw DataError("parameter index out of range");
  }
  impl_->set_param_at(info.offset + index, value);
}

double Model::grad(std::size_t tensor, std::int64_t index) const {
  const TensorInfo& info = impl_->tensors().at(tensor);
  if (index < 0 || index >= info.size) {
    throw DataError("parameter index out of range");
  }
  return impl_->grad_at(info.offset + index);
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Binary little-endian layout:
//   "CTCKPT01" | u32 version | u8 precision | 6 x i32 config | i64 step |
//   u32 n_tensors | per tensor { u16 name_len, name, u8 ndim, i32 dims...,
//   u64 byte_len, raw IEEE data } | u64 fnv1a digest of everything above.

namespace {

constexpr char kMagic[8] = {'C', 'T', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void append_le(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T read_le(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) {
    throw DataError("checkpoint truncated");
  }
  T value;
  std::memcpy(&value, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

std::string Model::serialize() const {
  const ModelConfig& cfg = impl_->config();
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  append_le(out, kCheckpointVersion);
  append_le(out, static_cast<std::uint8_t>(cfg.precision == Precision::f64 ? 0 : 1));
  for (int v : {cfg.n_layers, cfg.n_heads, cfg.d_model, cfg.d_ff, cfg.max_seq,
                cfg.vocab_size}) {
    append_le(out, static_cast<std::int32_t>(v));
  }
  append_le(out, static_cast<std::int64_t>(impl_->step()));
  const auto& tensors = impl_->tensors();
  append_le(out, static_cast<std::uint32_t>(tensors.size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const TensorInfo& info = tensors[i];
    append_le(out, static_cast<std::uint16_t>(info.name.size()));
    out.append(info.name);
    append_le(out, static_cast<std::uint8_t>(info.shape.size()));
    for (int dim : info.shape) {
      append_le(out, static_cast<std::int32_t>(dim));
    }
    const std::size_t elem =
        cfg.precision == Precision::f64 ? sizeof(double) : sizeof(float);
    append_le(out, static_cast<std::uint64_t>(info.size) * elem);
    impl_->append_raw(i, out);
  }
  append_le(out, fnv1a64(out.data(), out.size()));
  return out;
}

Model Model::deserialize(std::string_view bytes) {
  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint64_t)) {
    throw DataError("checkpoint truncated");
  }
  const std::uint64_t stored = [&] {
    std::uint64_t v;
    std::memcpy(&v, bytes.data() + bytes.size() - sizeof(v), sizeof(v));
    return v;
  }();
  const std::uint64_t computed =
      fnv1a64(bytes.data(), bytes.size() - sizeof(std::uint64_t));
  if (stored != computed) {
    throw DataError("checkpoint digest mismatch (file corrupt or truncated)");
  }

  std::size_t pos = 0;
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError("checkpoint: bad magic");
  }
  pos += sizeof(kMagic);
  const auto version = read_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto prec_byte = read_le<std::uint8_t>(bytes, pos);
  if (prec_byte > 1) {
    throw DataError("checkpoint: bad precision byte");
  }

  ModelConfig cfg;
  cfg.precision = prec_byte == 0 ? Precision::f64 : Precision::f32;
  cfg.n_layers = read_le<std::int32_t>(bytes, pos);
  cfg.n_heads = read_le<std::int32_t>(bytes, pos);
  cfg.d_model = read_le<std::int32_t>(bytes, pos);
  cfg.d_ff = read_le<std::int32_t>(bytes, pos);
  cfg.max_seq = read_le<std::int32_t>(bytes, pos);
  cfg.vocab_size = read_le<std::int32_t>(bytes, pos);
  const auto step = read_le<std::int64_t>(bytes, pos);

  auto backend = make_backend(cfg, 0, false);
  backend->set_step(step);

  const auto n_tensors = read_le<std::uint32_t>(bytes, pos);
  const auto& expect = backend->tensors();
  if (n_tensors != expect.size()) {
    throw DataError("checkpoint: tensor count mismatch");
  }
  for (std::size_t i = 0; i < expect.size(); ++i) {
    const auto name_len = read_le<std::uint16_t>(bytes, pos);
    if (pos + name_len > bytes.size()) {
      throw DataError("checkpoint truncated");
    }
    const std::string_view name = bytes.substr(pos, name_len);
    pos += name_len;
    if (name != expect[i].name) {
      throw DataError("checkpoint: unexpected tensor \"" + std::string(name) + "\"");
    }
    const auto ndim = static_cast<std::size_t>(read_le<std::uint8_t>(bytes, pos));
    if (ndim != expect[i].shape.size()) {
      throw DataError("checkpoint: rank mismatch for " + expect[i].name);
    }
    for (std::size_t k = 0; k < ndim; ++k) {
      if (read_le<std::int32_t>(bytes, pos) != expect[i].shape[k]) {
        throw DataError("checkpoint: shape mismatch for " + expect[i].name);
      }
    }
    const auto byte_len = read_le<std::uint64_t>(bytes, pos);
    if (pos + byte_len > bytes.size()) {
      throw DataError("checkpoint truncated");
    }
    backend->load_raw(i, bytes.data() + pos, byte_len);
    pos += byte_len;
  }
  return Model(std::move(backend));
}

void Model::save(const std::filesystem::path& path) const {
  write_binary_file(path, serialize());
}

Model Model::load(const std::filesystem::path& path) {
  return deserialize(read_binary_file(path));
}

std::string Model::fingerprint() const { return digest_of(serialize()); }

}  // namespace curritune
