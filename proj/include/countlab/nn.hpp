#pragma once

// Small dense layers with explicit backward passes. Activations are T x d
// row-major matrices (one row per token). Each forward takes an optional
// cache; backward consumes it and accumulates into Param::grad.

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "countlab/rng.hpp"

namespace countlab::nn {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<float, 1, Eigen::Dynamic>;

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;
  bool decay = true;

  void init(std::string n, int rows, int cols, bool apply_decay = true);
  std::size_t size() const { return static_cast<std::size_t>(value.size()); }
};

using ParamList = std::vector<Param*>;
using ConstParamList = std::vector<const Param*>;

std::size_t parameter_count(const ConstParamList& params);
void zero_grad(const ParamList& params);
/// Bitwise fingerprint of parameter values.
uint64_t fingerprint(const ConstParamList& params);
inline uint64_t fingerprint(const ParamList& params) { return fingerprint(ConstParamList(params.begin(), params.end())); }

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out, double init_std, Rng& rng);

  Matrix forward(const Matrix& x) const;
  /// Accumulates weight/bias gradients; returns dL/dx.
  Matrix backward(const Matrix& x, const Matrix& dy);

  int in_features() const { return static_cast<int>(weight_.value.rows()); }
  int out_features() const { return static_cast<int>(weight_.value.cols()); }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  void collect(ParamList& out) { out.push_back(&weight_); out.push_back(&bias_); }
  void collect(ConstParamList& out) const { out.push_back(&weight_); out.push_back(&bias_); }

 private:
  Param weight_;  // in x out
  Param bias_;    // 1 x out
};

class LayerNorm {
 public:
  struct Cache {
    Matrix normalized;
    Eigen::VectorXf inv_std;
  };

  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim);

  Matrix forward(const Matrix& x, Cache* cache) const;
  Matrix backward(const Matrix& dy, const Cache& cache);

  void collect(ParamList& out) { out.push_back(&gain_); out.push_back(&shift_); }
  void collect(ConstParamList& out) const { out.push_back(&gain_); out.push_back(&shift_); }

 private:
  Param gain_, shift_;
  static constexpr float kEps = 1e-5f;
};

/// tanh-approximated GELU.
Matrix gelu(const Matrix& x);
Matrix gelu_backward(const Matrix& x, const Matrix& dy);

class SelfAttention {
 public:
  struct Cache {
    Matrix input;
    Matrix qkv;
    std::vector<Matrix> attention;  // per head, T x T
    Matrix merged;
  };

  SelfAttention() = default;
  SelfAttention(const std::string& name, int dim, int heads, double init_std, Rng& rng);

  Matrix forward(const Matrix& x, Cache* cache) const;
  Matrix backward(const Matrix& dy, Cache& cache);

  void collect(ParamList& out) { qkv_.collect(out); proj_.collect(out); }
  void collect(ConstParamList& out) const { qkv_.collect(out); proj_.collect(out); }

 private:
  int dim_ = 0;
  int heads_ = 1;
  Linear qkv_, proj_;
};

/// Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
class TransformerBlock {
 public:
  struct Cache {
    LayerNorm::Cache ln1, ln2;
    SelfAttention::Cache attn;
    Matrix ln2_out, hidden_pre;
  };

  TransformerBlock() = default;
  TransformerBlock(const std::string& name, int dim, int heads, int mlp_hidden, double init_std, Rng& rng);

  Matrix forward(const Matrix& x, Cache* cache) const;
  Matrix backward(const Matrix& dy, Cache& cache);

  void collect(ParamList& out);
  void collect(ConstParamList& out) const;

 private:
  LayerNorm ln1_, ln2_;
  SelfAttention attn_;
  Linear fc1_, fc2_;
};

/// Two-layer perceptron in -> hidden -> out with GELU. When in == out it
/// carries an identity shortcut (a residual block) and the second layer
/// starts at zero, so a fresh projector is the identity map.
class Projector {
 public:
  struct Cache {
    Matrix input;
    Matrix hidden_pre;
    Matrix hidden;
  };

  Projector() = default;
  Projector(const std::string& name, int in, int out, Rng& rng);

  Matrix forward(const Matrix& x, Cache* cache) const;
  Matrix backward(const Matrix& dy, const Cache& cache);

  int in_features() const { return fc1_.in_features(); }
  int out_features() const { return fc2_.out_features(); }
  bool residual() const { return residual_; }
  void collect(ParamList& out) { fc1_.collect(out); fc2_.collect(out); }
  void collect(ConstParamList& out) const { fc1_.collect(out); fc2_.collect(out); }

 private:
  Linear fc1_, fc2_;
  bool residual_ = false;
};

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

class AdamW {
 public:
  explicit AdamW(AdamWOptions options = {}) : options_(options) {}

  /// One update with the given learning rate; gradients are left untouched.
  void step(const ParamList& params, double lr);
  int64_t steps() const { return steps_; }
  void set_steps(int64_t s) { steps_ = s; }

 private:
  AdamWOptions options_;
  int64_t steps_ = 0;
};

/// Linear warm-up then cosine decay from lr_max to lr_min over total_steps.
double cosine_lr(int64_t step, int64_t warmup_steps, int64_t total_steps, double lr_max, double lr_min);

}  // namespace countlab::nn
