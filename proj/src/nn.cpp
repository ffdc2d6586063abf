#include "countlab/nn.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <string_view>

#include "countlab/error.hpp"

namespace countlab::nn {

void Param::init(std::string n, int rows, int cols, bool apply_decay) {
  name = std::move(n);
  value = Matrix::Zero(rows, cols);
  grad = Matrix::Zero(rows, cols);
  adam_m = Matrix::Zero(rows, cols);
  adam_v = Matrix::Zero(rows, cols);
  decay = apply_decay;
}

std::size_t parameter_count(const ConstParamList& params) {
  std::size_t n = 0;
  for (const Param* p : params) n += p->size();
  return n;
}

void zero_grad(const ParamList& params) {
  for (Param* p : params) p->grad.setZero();
}

uint64_t fingerprint(const ConstParamList& params) {
  uint64_t h = 0x84222325cbf29ce4ULL;
  for (const Param* p : params) {
    const auto bytes = std::string_view(reinterpret_cast<const char*>(p->value.data()),
                                        static_cast<std::size_t>(p->value.size()) * sizeof(float));
    h = hash_combine(h, hash64(bytes));
  }
  return h;
}

namespace {

void fill_normal(Matrix& m, double stddev, Rng& rng) {
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<float>(stddev * rng.normal());
}

}  // namespace

// ---------------------------------------------------------------- Linear

Linear::Linear(const std::string& name, int in, int out, double init_std, Rng& rng) {
  weight_.init(name + ".weight", in, out);
  bias_.init(name + ".bias", 1, out, false);
  if (init_std > 0.0) fill_normal(weight_.value, init_std, rng);
}

Matrix Linear::forward(const Matrix& x) const {
  Matrix y = x * weight_.value;
  y.rowwise() += bias_.value.row(0);
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy) {
  weight_.grad.noalias() += x.transpose() * dy;
  bias_.grad.row(0) += dy.colwise().sum();
  return dy * weight_.value.transpose();
}

// ------------------------------------------------------------- LayerNorm

LayerNorm::LayerNorm(const std::string& name, int dim) {
  gain_.init(name + ".gain", 1, dim, false);
  gain_.value.setOnes();
  shift_.init(name + ".shift", 1, dim, false);
}

Matrix LayerNorm::forward(const Matrix& x, Cache* cache) const {
  const auto rows = x.rows();
  const float d = static_cast<float>(x.cols());
  Matrix normalized(rows, x.cols());
  Eigen::VectorXf inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const float mean = x.row(r).sum() / d;
    const auto centered = x.row(r).array() - mean;
    const float var = centered.square().sum() / d;
    inv_std(r) = 1.0f / std::sqrt(var + kEps);
    normalized.row(r) = centered * inv_std(r);
  }
  Matrix y = normalized.array().rowwise() * gain_.value.row(0).array();
  y.rowwise() += shift_.value.row(0);
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Matrix LayerNorm::backward(const Matrix& dy, const Cache& cache) {
  gain_.grad.row(0) += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
  shift_.grad.row(0) += dy.colwise().sum();
  Matrix dxhat = dy.array().rowwise() * gain_.value.row(0).array();
  const float d = static_cast<float>(dy.cols());
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const float mean_d = dxhat.row(r).sum() / d;
    const float mean_dx = dxhat.row(r).dot(cache.normalized.row(r)) / d;
    dx.row(r) = cache.inv_std(r) * (dxhat.row(r).array() - mean_d - cache.normalized.row(r).array() * mean_dx).matrix();
  }
  return dx;
}

// ------------------------------------------------------------------ GELU

namespace {
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2 / pi)
constexpr float kGeluA = 0.044715f;
}  // namespace

Matrix gelu(const Matrix& x) {
  return x.unaryExpr([](float v) { return 0.5f * v * (1.0f + std::tanh(kGeluC * (v + kGeluA * v * v * v))); });
}

Matrix gelu_backward(const Matrix& x, const Matrix& dy) {
  return x.binaryExpr(dy, [](float v, float g) {
    const float t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    const float dt = (1.0f - t * t) * kGeluC * (1.0f + 3.0f * kGeluA * v * v);
    return g * (0.5f * (1.0f + t) + 0.5f * v * dt);
  });
}

// --------------------------------------------------------- SelfAttention

SelfAttention::SelfAttention(const std::string& name, int dim, int heads, double init_std, Rng& rng)
    : dim_(dim), heads_(heads) {
  require(heads >= 1 && dim % heads == 0, "SelfAttention: width must be divisible by the head count");
  qkv_ = Linear(name + ".qkv", dim, 3 * dim, init_std, rng);
  proj_ = Linear(name + ".proj", dim, dim, init_std, rng);
}

Matrix SelfAttention::forward(const Matrix& x, Cache* cache) const {
  const Eigen::Index tokens = x.rows();
  const int dh = dim_ / heads_;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  Matrix qkv = qkv_.forward(x);
  Matrix merged(tokens, dim_);
  if (cache) cache->attention.resize(static_cast<std::size_t>(heads_));
  for (int h = 0; h < heads_; ++h) {
    const auto q = qkv.middleCols(h * dh, dh);
    const auto k = qkv.middleCols(dim_ + h * dh, dh);
    const auto v = qkv.middleCols(2 * dim_ + h * dh, dh);
    Matrix scores = (q * k.transpose()) * scale;
    for (Eigen::Index r = 0; r < tokens; ++r) {
      const float mx = scores.row(r).maxCoeff();
      scores.row(r) = (scores.row(r).array() - mx).exp();
      scores.row(r) /= scores.row(r).sum();
    }
    merged.middleCols(h * dh, dh).noalias() = scores * v;
    if (cache) cache->attention[static_cast<std::size_t>(h)] = std::move(scores);
  }
  Matrix out = proj_.forward(merged);
  if (cache) {
    cache->input = x;
    cache->qkv = std::move(qkv);
    cache->merged = std::move(merged);
  }
  return out;
}

Matrix SelfAttention::backward(const Matrix& dy, Cache& cache) {
  const int dh = dim_ / heads_;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  const Matrix d_merged = proj_.backward(cache.merged, dy);
  Matrix d_qkv(cache.qkv.rows(), cache.qkv.cols());
  for (int h = 0; h < heads_; ++h) {
    const Matrix& attn = cache.attention[static_cast<std::size_t>(h)];
    const auto q = cache.qkv.middleCols(h * dh, dh);
    const auto k = cache.qkv.middleCols(dim_ + h * dh, dh);
    const auto v = cache.qkv.middleCols(2 * dim_ + h * dh, dh);
    const auto d_out = d_merged.middleCols(h * dh, dh);
    Matrix d_attn = d_out * v.transpose();
    d_qkv.middleCols(2 * dim_ + h * dh, dh).noalias() = attn.transpose() * d_out;
    // Softmax backward, row by row.
    const Eigen::VectorXf row_dot = (d_attn.array() * attn.array()).rowwise().sum();
    Matrix d_scores = attn.array() * (d_attn.array().colwise() - row_dot.array());
    d_scores *= scale;
    d_qkv.middleCols(h * dh, dh).noalias() = d_scores * k;
    d_qkv.middleCols(dim_ + h * dh, dh).noalias() = d_scores.transpose() * q;
  }
  return qkv_.backward(cache.input, d_qkv);
}

// ------------------------------------------------------ TransformerBlock

TransformerBlock::TransformerBlock(const std::string& name, int dim, int heads, int mlp_hidden, double init_std,
                                   Rng& rng)
    : ln1_(name + ".ln1", dim),
      ln2_(name + ".ln2", dim),
      attn_(name + ".attn", dim, heads, init_std, rng),
      fc1_(name + ".fc1", dim, mlp_hidden, init_std, rng),
      fc2_(name + ".fc2", mlp_hidden, dim, init_std, rng) {}

Matrix TransformerBlock::forward(const Matrix& x, Cache* cache) const {
  Matrix x1 = x + attn_.forward(ln1_.forward(x, cache ? &cache->ln1 : nullptr), cache ? &cache->attn : nullptr);
  Matrix h2 = ln2_.forward(x1, cache ? &cache->ln2 : nullptr);
  Matrix pre = fc1_.forward(h2);
  Matrix out = x1 + fc2_.forward(gelu(pre));
  if (cache) {
    cache->ln2_out = std::move(h2);
    cache->hidden_pre = std::move(pre);
  }
  return out;
}

Matrix TransformerBlock::backward(const Matrix& dy, Cache& cache) {
  const Matrix d_hidden = fc2_.backward(gelu(cache.hidden_pre), dy);
  Matrix dx1 = dy + ln2_.backward(fc1_.backward(cache.ln2_out, gelu_backward(cache.hidden_pre, d_hidden)), cache.ln2);
  return dx1 + ln1_.backward(attn_.backward(dx1, cache.attn), cache.ln1);
}

void TransformerBlock::collect(ParamList& out) {
  ln1_.collect(out);
  attn_.collect(out);
  ln2_.collect(out);
  fc1_.collect(out);
  fc2_.collect(out);
}

void TransformerBlock::collect(ConstParamList& out) const {
  ln1_.collect(out);
  attn_.collect(out);
  ln2_.collect(out);
  fc1_.collect(out);
  fc2_.collect(out);
}

// ------------------------------------------------------------- Projector

Projector::Projector(const std::string& name, int in, int out, Rng& rng) : residual_(in == out) {
  const int hidden = std::max(in, out);
  fc1_ = Linear(name + ".fc1", in, hidden, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  fc2_ = Linear(name + ".fc2", hidden, out, residual_ ? 0.0 : 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
}

Matrix Projector::forward(const Matrix& x, Cache* cache) const {
  Matrix pre = fc1_.forward(x);
  Matrix hidden = gelu(pre);
  Matrix y = fc2_.forward(hidden);
  if (residual_) y += x;
  if (cache) {
    cache->input = x;
    cache->hidden_pre = std::move(pre);
    cache->hidden = std::move(hidden);
  }
  return y;
}

Matrix Projector::backward(const Matrix& dy, const Cache& cache) {
  const Matrix d_hidden = fc2_.backward(cache.hidden, dy);
  Matrix dx = fc1_.backward(cache.input, gelu_backward(cache.hidden_pre, d_hidden));
  if (residual_) dx += dy;
  return dx;
}

// ----------------------------------------------------------------- AdamW

void AdamW::step(const ParamList& params, double lr) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  const float b1 = static_cast<float>(options_.beta1);
  const float b2 = static_cast<float>(options_.beta2);
  for (Param* p : params) {
    p->adam_m = b1 * p->adam_m + (1.0f - b1) * p->grad;
    p->adam_v = b2 * p->adam_v + (1.0f - b2) * p->grad.cwiseProduct(p->grad);
    if (lr == 0.0) continue;
    const auto update = (p->adam_m.array() / static_cast<float>(bc1)) /
                        ((p->adam_v.array() / static_cast<float>(bc2)).sqrt() + static_cast<float>(options_.eps));
    if (p->decay) p->value *= static_cast<float>(1.0 - lr * options_.weight_decay);
    p->value.array() -= static_cast<float>(lr) * update;
  }
}

double cosine_lr(int64_t step, int64_t warmup_steps, int64_t total_steps, double lr_max, double lr_min) {
  if (total_steps <= 0) return lr_max;
  if (step < warmup_steps) return lr_max * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  const double span = std::max<int64_t>(1, total_steps - warmup_steps);
  const double progress = std::min(1.0, static_cast<double>(step - warmup_steps) / span);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace countlab::nn
