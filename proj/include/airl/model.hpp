#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

#include "airl/common.hpp"
#include "airl/trace.hpp"

namespace airl {

enum class Role { policy, discriminator };

const char* role_name(Role role);
Role role_from_name(std::string_view name);

// Shared backbone description. The policy head emits vocab_size logits per
// position, the discriminator head exactly one.
struct ArchConfig {
  int vocab_size = 0;
  int max_len = 96;
  int d_model = 64;
  int n_heads = 2;
  int d_ff = 128;
  int n_layers = 2;

  void validate() const;
  bool operator==(const ArchConfig&) const = default;
};

void to_json(nlohmann::json& j, const ArchConfig& a);
void from_json(const nlohmann::json& j, ArchConfig& a);

int head_width(Role role, const ArchConfig& arch);

struct TensorSpec {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

struct BlockLayout {
  std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o;
  std::size_t ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
};

// Offsets of every named array inside one flat parameter buffer.
struct ParamLayout {
  std::vector<TensorSpec> tensors;
  std::size_t tok_emb = 0, pos_emb = 0;
  std::vector<BlockLayout> blocks;
  std::size_t lnf_g = 0, lnf_b = 0, head_w = 0, head_b = 0;
  int out_dim = 0;
  std::size_t total = 0;
};

ParamLayout make_layout(Role role, const ArchConfig& arch);

template <class T>
class BasicParams {
 public:
  BasicParams() = default;
  BasicParams(Role role, const ArchConfig& arch);  // zero-filled

  Role role() const { return role_; }
  const ArchConfig& arch() const { return arch_; }
  const ParamLayout& layout() const { return *layout_; }
  std::size_t size() const { return data_.size(); }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  std::span<T> tensor(std::string_view name);
  std::span<const T> tensor(std::string_view name) const;

  BasicParams zeros_like() const { return BasicParams(role_, arch_); }

  template <class U>
  BasicParams<U> cast() const {
    BasicParams<U> out(role_, arch_);
    auto dst = out.values();
    for (std::size_t i = 0; i < data_.size(); ++i) {
      dst[i] = static_cast<U>(data_[i]);
    }
    return out;
  }

  bool operator==(const BasicParams& other) const {
    return role_ == other.role_ && arch_ == other.arch_ &&
           data_ == other.data_;
  }

 private:
  const TensorSpec& spec(std::string_view name) const;

  Role role_ = Role::policy;
  ArchConfig arch_;
  std::shared_ptr<const ParamLayout> layout_;
  std::vector<T> data_;
};

using ModelParams = BasicParams<float>;

// Small-normal initialisation; LayerNorm gains 1, biases 0. With zero_head the
// output layer starts at zero (uniform policy, D = 0.5 discriminator).
ModelParams init_params(Role role, const ArchConfig& arch, std::uint64_t seed,
                        bool zero_head = true);

bool all_finite(std::span<const float> values);

// Copies every tensor except the output head from `from` into `to`. The two
// architectures must agree apart from the role.
void copy_backbone(const ModelParams& from, ModelParams& to);

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Activations kept for the backward pass of one sequence.
template <class T>
struct ForwardCache {
  struct Layer {
    Matrix<T> x_in, ln1, ln1_xhat, qkv, ctx, x_mid, ln2, ln2_xhat, fc_pre,
        fc_act;
    Eigen::Matrix<T, Eigen::Dynamic, 1> ln1_rstd, ln2_rstd;
    std::vector<Matrix<T>> att;  // per head, n x n (causal)
  };
  std::vector<TokenId> ids;
  std::vector<Layer> layers;
  Matrix<T> x_out, lnf, lnf_xhat;
  Eigen::Matrix<T, Eigen::Dynamic, 1> lnf_rstd;
};

// Full causal forward; returns n x head_width logits. Row t only depends on
// tokens 0..t. Throws std::length_error past the context window.
template <class T>
Matrix<T> forward(const BasicParams<T>& params, std::span<const TokenId> ids,
                  ForwardCache<T>* cache = nullptr);

// Accumulates parameter gradients of sum(dlogits .* logits) into grad.
template <class T>
void backward(const BasicParams<T>& params, const ForwardCache<T>& cache,
              const Matrix<T>& dlogits, BasicParams<T>& grad);

// log pi(y_t | x, y_<t) for every response position t in [prompt_len, T).
template <class T>
std::vector<double> policy_log_probs(const BasicParams<T>& params,
                                     const Trace& trace);

// Full next-token log-distribution for each response position, one row per
// position in [prompt_len, T).
template <class T>
Matrix<T> policy_log_softmax(const BasicParams<T>& params, const Trace& trace);

// Discriminator logits z_t for response positions [prompt_len, T).
template <class T>
std::vector<double> disc_token_logits(const BasicParams<T>& params,
                                      const Trace& trace);

// Key/value cached single-token stepping, numerically equivalent to forward().
template <class T>
class IncrementalDecoder {
 public:
  explicit IncrementalDecoder(const BasicParams<T>& params);
  // Feeds the token at the next position and returns that row's logits.
  Eigen::Matrix<T, 1, Eigen::Dynamic> step(TokenId token);
  int position() const { return pos_; }

 private:
  const BasicParams<T>& params_;
  std::vector<Matrix<T>> keys_, values_;
  int pos_ = 0;
};

struct DecodeConfig {
  double temperature = 1.0;
  double top_p = 0.95;
  int max_new_tokens = 64;
  bool greedy = false;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const DecodeConfig& c);
void from_json(const nlohmann::json& j, DecodeConfig& c);

// Index of the token chosen from one row of logits under nucleus sampling
// (or argmax when greedy). `banned` tokens get zero mass.
int choose_token(std::span<const double> logits, const DecodeConfig& cfg,
                 Rng& rng, TokenId banned);

Trace sample_trace(const ModelParams& params, std::span<const TokenId> prompt,
                   const DecodeConfig& cfg, Rng& rng, const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Losses

enum class LossKind { sft, ppo, disc_bce, disc_wgan };

// Per-trace inputs for one of the trainer losses. Vectors are indexed by
// trace position within the batch passed to loss_and_grad.
struct LossSpec {
  LossKind kind = LossKind::sft;
  double clip_eps = 0.2;
  double kl_coef = 0.0;
  std::vector<std::vector<double>> advantages;      // ppo
  std::vector<std::vector<double>> old_log_probs;   // ppo
  std::vector<std::vector<double>> ref_log_probs;   // ppo, when kl_coef > 0
  std::vector<double> targets;  // disc: target probability (wgan: >0.5 expert)
  std::vector<double> weights;  // optional per-trace weights
  double scale = 1.0;
};

class NonFiniteLoss : public Error {
 public:
  explicit NonFiniteLoss(const std::string& what) : Error("nonfinite", what) {}
};

template <class T>
struct LossAndGrad {
  double loss = 0.0;
  BasicParams<T> grad;
};

// Loss over traces[begin, end) normalised by full-batch token counts, with
// gradients added into `grad` when non-null. Summing over a partition of the
// batch equals the full-batch loss, which is how gradient accumulation works.
template <class T>
double accumulate_loss_grad(const BasicParams<T>& params,
                            std::span<const Trace> traces,
                            const LossSpec& spec, std::size_t begin,
                            std::size_t end, BasicParams<T>* grad);

template <class T>
LossAndGrad<T> loss_and_grad(const BasicParams<T>& params,
                             std::span<const Trace> traces,
                             const LossSpec& spec);

// Per-token clipped surrogate min(rho A, clip(rho, 1-eps, 1+eps) A).
double clipped_surrogate(double ratio, double advantage, double eps);

}  // namespace airl
