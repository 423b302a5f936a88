#include "airl/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace airl {

const char* role_name(Role role) {
  return role == Role::policy ? "policy" : "discriminator";
}

Role role_from_name(std::string_view name) {
  if (name == "policy") return Role::policy;
  if (name == "discriminator") return Role::discriminator;
  throw std::invalid_argument("unknown role '" + std::string(name) + "'");
}

void ArchConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error("config", "arch: " + m); };
  if (vocab_size < 1 || vocab_size > Vocabulary::kMaxSize) {
    fail("vocab_size must be in [1, 256]");
  }
  if (max_len < 2) fail("max_len must be >= 2");
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
    fail("d_model must be a positive multiple of n_heads");
  }
  if (d_ff < 1 || n_layers < 1) fail("d_ff and n_layers must be positive");
}

void to_json(nlohmann::json& j, const ArchConfig& a) {
  j = {{"vocab_size", a.vocab_size}, {"max_len", a.max_len},
       {"d_model", a.d_model},       {"n_heads", a.n_heads},
       {"d_ff", a.d_ff},             {"n_layers", a.n_layers}};
}

void from_json(const nlohmann::json& j, ArchConfig& a) {
  ArchConfig d;
  a.vocab_size = j.value("vocab_size", d.vocab_size);
  a.max_len = j.value("max_len", d.max_len);
  a.d_model = j.value("d_model", d.d_model);
  a.n_heads = j.value("n_heads", d.n_heads);
  a.d_ff = j.value("d_ff", d.d_ff);
  a.n_layers = j.value("n_layers", d.n_layers);
}

int head_width(Role role, const ArchConfig& arch) {
  return role == Role::policy ? arch.vocab_size : 1;
}

ParamLayout make_layout(Role role, const ArchConfig& arch) {
  arch.validate();
  ParamLayout layout;
  const int d = arch.d_model;
  auto add = [&](std::string name, std::vector<int> shape) {
    std::size_t size = 1;
    for (int s : shape) size *= static_cast<std::size_t>(s);
    layout.tensors.push_back({std::move(name), std::move(shape), layout.total,
                              size});
    layout.total += size;
    return layout.tensors.back().offset;
  };
  layout.tok_emb = add("tok_emb", {arch.vocab_size, d});
  layout.pos_emb = add("pos_emb", {arch.max_len, d});
  for (int l = 0; l < arch.n_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    BlockLayout b{};
    b.ln1_g = add(p + "ln1.gain", {d});
    b.ln1_b = add(p + "ln1.bias", {d});
    b.w_qkv = add(p + "attn.w_qkv", {d, 3 * d});
    b.b_qkv = add(p + "attn.b_qkv", {3 * d});
    b.w_o = add(p + "attn.w_out", {d, d});
    b.b_o = add(p + "attn.b_out", {d});
    b.ln2_g = add(p + "ln2.gain", {d});
    b.ln2_b = add(p + "ln2.bias", {d});
    b.w_fc = add(p + "mlp.w_fc", {d, arch.d_ff});
    b.b_fc = add(p + "mlp.b_fc", {arch.d_ff});
    b.w_proj = add(p + "mlp.w_proj", {arch.d_ff, d});
    b.b_proj = add(p + "mlp.b_proj", {d});
    layout.blocks.push_back(b);
  }
  layout.lnf_g = add("ln_f.gain", {d});
  layout.lnf_b = add("ln_f.bias", {d});
  layout.out_dim = head_width(role, arch);
  layout.head_w = add("head.weight", {d, layout.out_dim});
  layout.head_b = add("head.bias", {layout.out_dim});
  return layout;
}

template <class T>
BasicParams<T>::BasicParams(Role role, const ArchConfig& arch)
    : role_(role),
      arch_(arch),
      layout_(std::make_shared<const ParamLayout>(make_layout(role, arch))),
      data_(layout_->total, T(0)) {}

template <class T>
const TensorSpec& BasicParams<T>::spec(std::string_view name) const {
  for (const auto& t : layout_->tensors) {
    if (t.name == name) return t;
  }
  throw std::invalid_argument("no parameter named '" + std::string(name) + "'");
}

template <class T>
std::span<T> BasicParams<T>::tensor(std::string_view name) {
  const auto& s = spec(name);
  return std::span<T>(data_).subspan(s.offset, s.size);
}

template <class T>
std::span<const T> BasicParams<T>::tensor(std::string_view name) const {
  const auto& s = spec(name);
  return std::span<const T>(data_).subspan(s.offset, s.size);
}

template class BasicParams<float>;
template class BasicParams<double>;

ModelParams init_params(Role role, const ArchConfig& arch, std::uint64_t seed,
                        bool zero_head) {
  ModelParams params(role, arch);
  Rng rng(derive_seed(seed, std::string("init.") + role_name(role)));
  std::normal_distribution<float> normal(0.0f, 0.02f);
  const float proj_std = 0.02f / std::sqrt(2.0f * arch.n_layers);
  std::normal_distribution<float> proj_normal(0.0f, proj_std);
  const auto& layout = params.layout();
  float* p = params.data();
  auto fill = [&](std::size_t offset, std::size_t n, auto& dist) {
    for (std::size_t i = 0; i < n; ++i) p[offset + i] = dist(rng);
  };
  auto ones = [&](std::size_t offset, std::size_t n) {
    std::fill_n(p + offset, n, 1.0f);
  };
  const std::size_t d = arch.d_model;
  fill(layout.tok_emb, arch.vocab_size * d, normal);
  fill(layout.pos_emb, arch.max_len * d, normal);
  for (const auto& b : layout.blocks) {
    ones(b.ln1_g, d);
    ones(b.ln2_g, d);
    fill(b.w_qkv, d * 3 * d, normal);
    fill(b.w_o, d * d, proj_normal);
    fill(b.w_fc, d * arch.d_ff, normal);
    fill(b.w_proj, arch.d_ff * d, proj_normal);
  }
  ones(layout.lnf_g, d);
  if (!zero_head) fill(layout.head_w, d * layout.out_dim, normal);
  return params;
}

void copy_backbone(const ModelParams& from, ModelParams& to) {
  ArchConfig a = from.arch(), b = to.arch();
  if (!(a == b)) throw Error("config", "copy_backbone: architectures differ");
  for (const auto& t : from.layout().tensors) {
    if (t.name.rfind("head.", 0) == 0) continue;
    auto src = from.tensor(t.name);
    auto dst = to.tensor(t.name);
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

bool all_finite(std::span<const float> values) {
  return std::all_of(values.begin(), values.end(),
                     [](float v) { return std::isfinite(v); });
}

namespace {

template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <class T>
using MapM = Eigen::Map<const Matrix<T>>;
template <class T>
using MapMutM = Eigen::Map<Matrix<T>>;
template <class T>
using MapRow = Eigen::Map<const RowVec<T>>;
template <class T>
using MapMutRow = Eigen::Map<RowVec<T>>;

constexpr double kLnEps = 1e-5;

template <class T>
MapM<T> mat(const BasicParams<T>& p, std::size_t offset, int rows, int cols) {
  return MapM<T>(p.data() + offset, rows, cols);
}

template <class T>
MapRow<T> row(const BasicParams<T>& p, std::size_t offset, int cols) {
  return MapRow<T>(p.data() + offset, cols);
}

template <class T>
MapMutM<T> mat(BasicParams<T>& p, std::size_t offset, int rows, int cols) {
  return MapMutM<T>(p.data() + offset, rows, cols);
}

template <class T>
MapMutRow<T> row(BasicParams<T>& p, std::size_t offset, int cols) {
  return MapMutRow<T>(p.data() + offset, cols);
}

template <class T>
void layer_norm(const Matrix<T>& x, const MapRow<T>& gain,
                const MapRow<T>& bias, Matrix<T>& y, Matrix<T>& xhat,
                Vec<T>& rstd) {
  const int n = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  y.resize(n, d);
  xhat.resize(n, d);
  rstd.resize(n);
  for (int i = 0; i < n; ++i) {
    const T mean = x.row(i).mean();
    const T var = (x.row(i).array() - mean).square().mean();
    const T r = T(1) / std::sqrt(var + T(kLnEps));
    rstd(i) = r;
    xhat.row(i) = (x.row(i).array() - mean) * r;
    y.row(i) = xhat.row(i).cwiseProduct(gain) + bias;
  }
}

template <class T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const Matrix<T>& xhat,
                              const Vec<T>& rstd, const MapRow<T>& gain,
                              MapMutRow<T> dgain, MapMutRow<T> dbias) {
  const int n = static_cast<int>(dy.rows());
  const int d = static_cast<int>(dy.cols());
  Matrix<T> dx(n, d);
  dgain += dy.cwiseProduct(xhat).colwise().sum();
  dbias += dy.colwise().sum();
  for (int i = 0; i < n; ++i) {
    RowVec<T> dxhat = dy.row(i).cwiseProduct(gain);
    const T mean_dxhat = dxhat.mean();
    const T mean_dxhat_xhat = dxhat.cwiseProduct(xhat.row(i)).mean();
    dx.row(i) = rstd(i) * (dxhat.array() - mean_dxhat -
                           xhat.row(i).array() * mean_dxhat_xhat)
                              .matrix();
  }
  return dx;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

template <class T>
T gelu(T x) {
  const T u = T(kGeluC) * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <class T>
T gelu_grad(T x) {
  const T u = T(kGeluC) * (x + T(0.044715) * x * x * x);
  const T th = std::tanh(u);
  const T du = T(kGeluC) * (T(1) + T(3 * 0.044715) * x * x);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

}  // namespace

template <class T>
Matrix<T> forward(const BasicParams<T>& params, std::span<const TokenId> ids,
                  ForwardCache<T>* cache) {
  const auto& arch = params.arch();
  const auto& layout = params.layout();
  const int n = static_cast<int>(ids.size());
  if (n > arch.max_len) {
    throw std::length_error("sequence length " + std::to_string(n) +
                            " exceeds context window " +
                            std::to_string(arch.max_len));
  }
  if (n == 0) throw std::invalid_argument("empty sequence");
  const int d = arch.d_model;
  const int heads = arch.n_heads;
  const int dh = d / heads;
  const T scale = T(1) / std::sqrt(T(dh));

  auto tok = mat(params, layout.tok_emb, arch.vocab_size, d);
  auto pos = mat(params, layout.pos_emb, arch.max_len, d);
  Matrix<T> x(n, d);
  for (int i = 0; i < n; ++i) {
    if (ids[i] < 0 || ids[i] >= arch.vocab_size) {
      throw std::invalid_argument("token id outside vocabulary");
    }
    x.row(i) = tok.row(ids[i]) + pos.row(i);
  }

  ForwardCache<T> local;
  ForwardCache<T>& c = cache ? *cache : local;
  c.ids.assign(ids.begin(), ids.end());
  c.layers.resize(layout.blocks.size());

  for (std::size_t l = 0; l < layout.blocks.size(); ++l) {
    const auto& b = layout.blocks[l];
    auto& L = c.layers[l];
    L.x_in = x;
    layer_norm<T>(x, row(params, b.ln1_g, d), row(params, b.ln1_b, d), L.ln1,
                  L.ln1_xhat, L.ln1_rstd);
    L.qkv = L.ln1 * mat(params, b.w_qkv, d, 3 * d);
    L.qkv.rowwise() += row(params, b.b_qkv, 3 * d);
    L.ctx.setZero(n, d);
    L.att.resize(heads);
    for (int h = 0; h < heads; ++h) {
      auto q = L.qkv.middleCols(h * dh, dh);
      auto k = L.qkv.middleCols(d + h * dh, dh);
      auto v = L.qkv.middleCols(2 * d + h * dh, dh);
      Matrix<T>& att = L.att[h];
      att.noalias() = (q * k.transpose()) * scale;
      for (int i = 0; i < n; ++i) {
        T m = att.row(i).head(i + 1).maxCoeff();
        T sum = 0;
        for (int j = 0; j <= i; ++j) {
          att(i, j) = std::exp(att(i, j) - m);
          sum += att(i, j);
        }
        for (int j = 0; j <= i; ++j) att(i, j) /= sum;
        for (int j = i + 1; j < n; ++j) att(i, j) = 0;
      }
      L.ctx.middleCols(h * dh, dh).noalias() = att * v;
    }
    x.noalias() += L.ctx * mat(params, b.w_o, d, d);
    x.rowwise() += row(params, b.b_o, d);
    L.x_mid = x;
    layer_norm<T>(x, row(params, b.ln2_g, d), row(params, b.ln2_b, d), L.ln2,
                  L.ln2_xhat, L.ln2_rstd);
    L.fc_pre = L.ln2 * mat(params, b.w_fc, d, arch.d_ff);
    L.fc_pre.rowwise() += row(params, b.b_fc, arch.d_ff);
    L.fc_act = L.fc_pre.unaryExpr([](T v) { return gelu(v); });
    x.noalias() += L.fc_act * mat(params, b.w_proj, arch.d_ff, d);
    x.rowwise() += row(params, b.b_proj, d);
  }
  c.x_out = x;
  layer_norm<T>(x, row(params, layout.lnf_g, d), row(params, layout.lnf_b, d),
                c.lnf, c.lnf_xhat, c.lnf_rstd);
  Matrix<T> logits = c.lnf * mat(params, layout.head_w, d, layout.out_dim);
  logits.rowwise() += row(params, layout.head_b, layout.out_dim);
  return logits;
}

template <class T>
void backward(const BasicParams<T>& params, const ForwardCache<T>& c,
              const Matrix<T>& dlogits, BasicParams<T>& grad) {
  const auto& arch = params.arch();
  const auto& layout = params.layout();
  const int n = static_cast<int>(c.ids.size());
  const int d = arch.d_model;
  const int heads = arch.n_heads;
  const int dh = d / heads;
  const T scale = T(1) / std::sqrt(T(dh));

  mat(grad, layout.head_w, d, layout.out_dim).noalias() +=
      c.lnf.transpose() * dlogits;
  row(grad, layout.head_b, layout.out_dim) += dlogits.colwise().sum();
  Matrix<T> dlnf =
      dlogits * mat(params, layout.head_w, d, layout.out_dim).transpose();
  Matrix<T> dx = layer_norm_backward<T>(
      dlnf, c.lnf_xhat, c.lnf_rstd, row(params, layout.lnf_g, d),
      row(grad, layout.lnf_g, d), row(grad, layout.lnf_b, d));

  for (int l = static_cast<int>(layout.blocks.size()) - 1; l >= 0; --l) {
    const auto& b = layout.blocks[l];
    const auto& L = c.layers[l];

    // x_out = x_mid + gelu(ln2 W_fc + b_fc) W_proj + b_proj
    mat(grad, b.w_proj, arch.d_ff, d).noalias() += L.fc_act.transpose() * dx;
    row(grad, b.b_proj, d) += dx.colwise().sum();
    Matrix<T> dpre = dx * mat(params, b.w_proj, arch.d_ff, d).transpose();
    dpre.array() *= L.fc_pre.unaryExpr([](T v) { return gelu_grad(v); }).array();
    mat(grad, b.w_fc, d, arch.d_ff).noalias() += L.ln2.transpose() * dpre;
    row(grad, b.b_fc, arch.d_ff) += dpre.colwise().sum();
    Matrix<T> dln2 = dpre * mat(params, b.w_fc, d, arch.d_ff).transpose();
    Matrix<T> dx_mid =
        dx + layer_norm_backward<T>(dln2, L.ln2_xhat, L.ln2_rstd,
                                    row(params, b.ln2_g, d),
                                    row(grad, b.ln2_g, d), row(grad, b.ln2_b, d));

    // x_mid = x_in + ctx W_o + b_o
    mat(grad, b.w_o, d, d).noalias() += L.ctx.transpose() * dx_mid;
    row(grad, b.b_o, d) += dx_mid.colwise().sum();
    Matrix<T> dctx = dx_mid * mat(params, b.w_o, d, d).transpose();

    Matrix<T> dqkv(n, 3 * d);
    for (int h = 0; h < heads; ++h) {
      auto q = L.qkv.middleCols(h * dh, dh);
      auto k = L.qkv.middleCols(d + h * dh, dh);
      auto v = L.qkv.middleCols(2 * d + h * dh, dh);
      const Matrix<T>& att = L.att[h];
      auto dout = dctx.middleCols(h * dh, dh);
      Matrix<T> datt = dout * v.transpose();
      dqkv.middleCols(2 * d + h * dh, dh).noalias() = att.transpose() * dout;
      // softmax backward; masked entries have att = 0
      Matrix<T> dscore(n, n);
      for (int i = 0; i < n; ++i) {
        const T dot = att.row(i).dot(datt.row(i));
        dscore.row(i) = att.row(i).cwiseProduct(
            (datt.row(i).array() - dot).matrix());
      }
      dscore *= scale;
      dqkv.middleCols(h * dh, dh).noalias() = dscore * k;
      dqkv.middleCols(d + h * dh, dh).noalias() = dscore.transpose() * q;
    }
    mat(grad, b.w_qkv, d, 3 * d).noalias() += L.ln1.transpose() * dqkv;
    row(grad, b.b_qkv, 3 * d) += dqkv.colwise().sum();
    Matrix<T> dln1 = dqkv * mat(params, b.w_qkv, d, 3 * d).transpose();
    dx = dx_mid + layer_norm_backward<T>(dln1, L.ln1_xhat, L.ln1_rstd,
                                         row(params, b.ln1_g, d),
                                         row(grad, b.ln1_g, d),
                                         row(grad, b.ln1_b, d));
  }

  auto dtok = mat(grad, layout.tok_emb, arch.vocab_size, d);
  auto dpos = mat(grad, layout.pos_emb, arch.max_len, d);
  for (int i = 0; i < n; ++i) {
    dtok.row(c.ids[i]) += dx.row(i);
    dpos.row(i) += dx.row(i);
  }
}

namespace {

template <class T>
void require_role(const BasicParams<T>& params, Role role) {
  if (params.role() != role) {
    throw std::invalid_argument(std::string("expected ") + role_name(role) +
                                " parameters");
  }
}

// Log-softmax of one row, computed in the parameter precision.
template <class T>
RowVec<T> log_softmax_row(const Eigen::Ref<const RowVec<T>>& logits) {
  const T m = logits.maxCoeff();
  const T lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

}  // namespace

template <class T>
Matrix<T> policy_log_softmax(const BasicParams<T>& params, const Trace& trace) {
  require_role(params, Role::policy);
  Matrix<T> logits = forward(params, trace.ids());
  const int p = trace.prompt_len();
  Matrix<T> out(trace.response_len(), logits.cols());
  for (int t = p; t < trace.length(); ++t) {
    out.row(t - p) = log_softmax_row<T>(logits.row(t - 1));
  }
  return out;
}

template <class T>
std::vector<double> policy_log_probs(const BasicParams<T>& params,
                                     const Trace& trace) {
  Matrix<T> lsm = policy_log_softmax(params, trace);
  std::vector<double> out(trace.response_len());
  for (int t = trace.prompt_len(); t < trace.length(); ++t) {
    const int r = t - trace.prompt_len();
    out[r] = static_cast<double>(lsm(r, trace[t]));
  }
  return out;
}

template <class T>
std::vector<double> disc_token_logits(const BasicParams<T>& params,
                                      const Trace& trace) {
  require_role(params, Role::discriminator);
  Matrix<T> logits = forward(params, trace.ids());
  std::vector<double> out(trace.response_len());
  for (int t = trace.prompt_len(); t < trace.length(); ++t) {
    out[t - trace.prompt_len()] = static_cast<double>(logits(t, 0));
  }
  return out;
}

template <class T>
IncrementalDecoder<T>::IncrementalDecoder(const BasicParams<T>& params)
    : params_(params) {
  const auto& arch = params.arch();
  keys_.assign(arch.n_layers, Matrix<T>(arch.max_len, arch.d_model));
  values_.assign(arch.n_layers, Matrix<T>(arch.max_len, arch.d_model));
}

template <class T>
RowVec<T> IncrementalDecoder<T>::step(TokenId token) {
  const auto& arch = params_.arch();
  const auto& layout = params_.layout();
  if (pos_ >= arch.max_len) {
    throw std::length_error("decoder position exceeds context window");
  }
  if (token < 0 || token >= arch.vocab_size) {
    throw std::invalid_argument("token id outside vocabulary");
  }
  const int d = arch.d_model;
  const int heads = arch.n_heads;
  const int dh = d / heads;
  const T scale = T(1) / std::sqrt(T(dh));
  const int p = pos_;

  Matrix<T> x = mat(params_, layout.tok_emb, arch.vocab_size, d).row(token) +
                mat(params_, layout.pos_emb, arch.max_len, d).row(p);
  Matrix<T> y, xhat;
  Vec<T> rstd;
  for (std::size_t l = 0; l < layout.blocks.size(); ++l) {
    const auto& b = layout.blocks[l];
    layer_norm<T>(x, row(params_, b.ln1_g, d), row(params_, b.ln1_b, d), y,
                  xhat, rstd);
    Matrix<T> qkv = y * mat(params_, b.w_qkv, d, 3 * d);
    qkv += row(params_, b.b_qkv, 3 * d);
    keys_[l].row(p) = qkv.middleCols(d, d);
    values_[l].row(p) = qkv.middleCols(2 * d, d);
    Matrix<T> ctx(1, d);
    for (int h = 0; h < heads; ++h) {
      auto q = qkv.middleCols(h * dh, dh);
      auto k = keys_[l].block(0, h * dh, p + 1, dh);
      auto v = values_[l].block(0, h * dh, p + 1, dh);
      RowVec<T> s = (q * k.transpose()) * scale;
      const T m = s.maxCoeff();
      s = (s.array() - m).exp().matrix();
      s /= s.sum();
      ctx.middleCols(h * dh, dh).noalias() = s * v;
    }
    x.noalias() += ctx * mat(params_, b.w_o, d, d);
    x += row(params_, b.b_o, d);
    layer_norm<T>(x, row(params_, b.ln2_g, d), row(params_, b.ln2_b, d), y,
                  xhat, rstd);
    Matrix<T> pre = y * mat(params_, b.w_fc, d, arch.d_ff);
    pre += row(params_, b.b_fc, arch.d_ff);
    Matrix<T> act = pre.unaryExpr([](T v) { return gelu(v); });
    x.noalias() += act * mat(params_, b.w_proj, arch.d_ff, d);
    x += row(params_, b.b_proj, d);
  }
  layer_norm<T>(x, row(params_, layout.lnf_g, d), row(params_, layout.lnf_b, d),
                y, xhat, rstd);
  RowVec<T> logits = y * mat(params_, layout.head_w, d, layout.out_dim);
  logits += row(params_, layout.head_b, layout.out_dim);
  ++pos_;
  return logits;
}

void to_json(nlohmann::json& j, const DecodeConfig& c) {
  j = {{"temperature", c.temperature},
       {"top_p", c.top_p},
       {"max_new_tokens", c.max_new_tokens},
       {"greedy", c.greedy},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, DecodeConfig& c) {
  DecodeConfig d;
  c.temperature = j.value("temperature", d.temperature);
  c.top_p = j.value("top_p", d.top_p);
  c.max_new_tokens = j.value("max_new_tokens", d.max_new_tokens);
  c.greedy = j.value("greedy", d.greedy);
  c.seed = j.value("seed", d.seed);
  if (!(c.temperature > 0.0) || !(c.top_p > 0.0 && c.top_p <= 1.0) ||
      c.max_new_tokens < 1) {
    throw Error("config",
                "decode: need temperature > 0, top_p in (0, 1], "
                "max_new_tokens >= 1");
  }
}

int choose_token(std::span<const double> logits, const DecodeConfig& cfg,
                 Rng& rng, TokenId banned) {
  const int v = static_cast<int>(logits.size());
  if (cfg.greedy) {
    int best = -1;
    for (int i = 0; i < v; ++i) {
      if (i == banned) continue;
      if (best < 0 || logits[i] > logits[best]) best = i;
    }
    return best;
  }
  std::vector<double> prob(v);
  double m = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < v; ++i) {
    if (i != banned) m = std::max(m, logits[i] / cfg.temperature);
  }
  double total = 0.0;
  for (int i = 0; i < v; ++i) {
    prob[i] = i == banned ? 0.0 : std::exp(logits[i] / cfg.temperature - m);
    total += prob[i];
  }
  for (auto& p : prob) p /= total;

  std::vector<int> order(v);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return prob[a] > prob[b]; });
  // Smallest prefix of probability-sorted tokens with mass >= top_p.
  double mass = 0.0;
  int keep = 0;
  while (keep < v) {
    mass += prob[order[keep]];
    ++keep;
    if (mass >= cfg.top_p) break;
  }
  std::uniform_real_distribution<double> unif(0.0, mass);
  double u = unif(rng);
  for (int i = 0; i < keep; ++i) {
    u -= prob[order[i]];
    if (u < 0.0) return order[i];
  }
  return order[keep - 1];
}

Trace sample_trace(const ModelParams& params, std::span<const TokenId> prompt,
                   const DecodeConfig& cfg, Rng& rng,
                   const Vocabulary& vocab) {
  require_role(params, Role::policy);
  const int max_len = params.arch().max_len;
  if (prompt.empty() || static_cast<int>(prompt.size()) >= max_len) {
    throw std::length_error("prompt does not fit the context window");
  }
  const TokenId eos = vocab.special().eos;
  const TokenId pad = vocab.special().pad;
  IncrementalDecoder<float> decoder(params);
  std::vector<TokenId> ids(prompt.begin(), prompt.end());
  RowVec<float> logits;
  for (TokenId t : prompt) logits = decoder.step(t);
  std::vector<double> row_logits(logits.size());
  for (int generated = 0;; ++generated) {
    for (int i = 0; i < logits.size(); ++i) row_logits[i] = logits(i);
    const TokenId next = choose_token(row_logits, cfg, rng, pad);
    ids.push_back(next);
    if (next == eos || generated + 1 >= cfg.max_new_tokens ||
        static_cast<int>(ids.size()) >= max_len) {
      break;
    }
    logits = decoder.step(next);
  }
  return Trace::make(std::move(ids), static_cast<int>(prompt.size()), vocab);
}

double clipped_surrogate(double ratio, double advantage, double eps) {
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * advantage, clipped * advantage);
}

namespace {

struct Normalizers {
  double tokens = 0.0;    // weighted response tokens (sft / ppo / bce)
  double expert = 0.0;    // wgan
  double negative = 0.0;  // wgan
};

double weight_of(const LossSpec& spec, std::size_t i) {
  return spec.weights.empty() ? 1.0 : spec.weights.at(i);
}

Normalizers normalizers(std::span<const Trace> traces, const LossSpec& spec) {
  Normalizers n;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const double count = traces[i].response_len();
    if (spec.kind == LossKind::disc_wgan) {
      (spec.targets.at(i) > 0.5 ? n.expert : n.negative) += count;
    } else {
      n.tokens += weight_of(spec, i) * count;
    }
  }
  return n;
}

double softplus(double z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace

template <class T>
double accumulate_loss_grad(const BasicParams<T>& params,
                            std::span<const Trace> traces,
                            const LossSpec& spec, std::size_t begin,
                            std::size_t end, BasicParams<T>* grad) {
  const bool policy_loss =
      spec.kind == LossKind::sft || spec.kind == LossKind::ppo;
  require_role(params, policy_loss ? Role::policy : Role::discriminator);
  const Normalizers norm = normalizers(traces, spec);
  double loss = 0.0;
  ForwardCache<T> cache;
  for (std::size_t i = begin; i < end; ++i) {
    const Trace& trace = traces[i];
    const double w = weight_of(spec, i);
    Matrix<T> logits = forward(params, trace.ids(), grad ? &cache : nullptr);
    Matrix<T> dlogits;
    if (grad) dlogits.setZero(logits.rows(), logits.cols());
    const int p = trace.prompt_len();
    for (int t = p; t < trace.length(); ++t) {
      const int r = t - p;
      if (policy_loss) {
        RowVec<T> lsm = log_softmax_row<T>(logits.row(t - 1));
        const double logp = static_cast<double>(lsm(trace[t]));
        double dlogp = 0.0;  // d loss / d logp
        if (spec.kind == LossKind::sft) {
          loss -= w * logp / norm.tokens;
          dlogp = -w / norm.tokens;
        } else {
          const double old = spec.old_log_probs.at(i).at(r);
          const double adv = spec.advantages.at(i).at(r);
          const double ratio = std::exp(logp - old);
          const double unclipped = ratio * adv;
          const double clipped =
              std::clamp(ratio, 1.0 - spec.clip_eps, 1.0 + spec.clip_eps) * adv;
          loss -= w * std::min(unclipped, clipped) / norm.tokens;
          // The clipped branch is constant in theta when it is the minimum.
          if (unclipped <= clipped) dlogp = -w * unclipped / norm.tokens;
          if (spec.kl_coef != 0.0) {
            const double ref = spec.ref_log_probs.at(i).at(r);
            loss += w * spec.kl_coef * (logp - ref) / norm.tokens;
            dlogp += w * spec.kl_coef / norm.tokens;
          }
        }
        if (grad) {
          // d logp_y / d logits = onehot(y) - softmax
          const T g = static_cast<T>(dlogp * spec.scale);
          dlogits.row(t - 1) = -g * lsm.array().exp().matrix();
          dlogits(t - 1, trace[t]) += g;
        }
      } else {
        const double z = static_cast<double>(logits(t, 0));
        double dz = 0.0;
        if (spec.kind == LossKind::disc_bce) {
          const double y = spec.targets.at(i);
          loss += w * (softplus(z) - y * z) / norm.tokens;
          dz = w * (sigmoid(z) - y) / norm.tokens;
        } else if (spec.targets.at(i) > 0.5) {
          loss -= z / norm.expert;
          dz = -1.0 / norm.expert;
        } else {
          loss += z / norm.negative;
          dz = 1.0 / norm.negative;
        }
        if (grad) dlogits(t, 0) = static_cast<T>(dz * spec.scale);
      }
    }
    if (!std::isfinite(loss)) {
      throw NonFiniteLoss("non-finite loss on trace " + std::to_string(i));
    }
    if (grad) backward(params, cache, dlogits, *grad);
  }
  return loss * spec.scale;
}

template <class T>
LossAndGrad<T> loss_and_grad(const BasicParams<T>& params,
                             std::span<const Trace> traces,
                             const LossSpec& spec) {
  LossAndGrad<T> out{0.0, params.zeros_like()};
  out.loss = accumulate_loss_grad(params, traces, spec, 0, traces.size(),
                                  &out.grad);
  return out;
}

#define AIRL_INSTANTIATE(T)                                                  \
  template Matrix<T> forward<T>(const BasicParams<T>&,                      \
                                std::span<const TokenId>, ForwardCache<T>*); \
  template void backward<T>(const BasicParams<T>&, const ForwardCache<T>&,  \
                            const Matrix<T>&, BasicParams<T>&);             \
  template std::vector<double> policy_log_probs<T>(const BasicParams<T>&,   \
                                                   const Trace&);           \
  template Matrix<T> policy_log_softmax<T>(const BasicParams<T>&,           \
                                           const Trace&);                   \
  template std::vector<double> disc_token_logits<T>(const BasicParams<T>&,  \
                                                    const Trace&);          \
  template class IncrementalDecoder<T>;                                      \
  template double accumulate_loss_grad<T>(                                   \
      const BasicParams<T>&, std::span<const Trace>, const LossSpec&,       \
      std::size_t, std::size_t, BasicParams<T>*);                            \
  template LossAndGrad<T> loss_and_grad<T>(                                  \
      const BasicParams<T>&, std::span<const Trace>, const LossSpec&);

AIRL_INSTANTIATE(float)
AIRL_INSTANTIATE(double)

#undef AIRL_INSTANTIATE

}  // namespace airl
