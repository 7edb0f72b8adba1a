#pragma once

// Define-by-run reverse-mode tape over dense matrices, plus the MLP and LSTM
// built on it and the two optimizers.
//
// Matrices hold one sample per column. Every forward kernel computes each
// output column independently of the others, so a column's value does not
// depend on the batch it was evaluated in.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sisr/errors.hpp"

namespace sisr {

using Matrix = Eigen::MatrixXd;

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
};

class ParamStore {
 public:
  Param& add(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  Param* find(const std::string& name);
  const Param* find(const std::string& name) const;
  std::deque<Param>& params() noexcept { return params_; }
  const std::deque<Param>& params() const noexcept { return params_; }
  std::size_t size() const noexcept { return params_.size(); }
  std::size_t scalar_count() const noexcept;
  void zero_grad();

 private:
  std::deque<Param> params_;
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
void glorot_uniform(Matrix& w, std::mt19937_64& rng);

struct Var {
  int id = -1;
};

/// Column-wise allowed-token mask for the fused policy op (rows = vocabulary).
using Mask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

struct SoftmaxColumn {
  double max_logit = 0.0;
  double log_sum = 0.0;
  double entropy = 0.0;
};

/// Softmax of one logit column restricted to allowed entries (others get
/// probability 0), with its Shannon entropy. log p_j = l_j - max_logit - log_sum.
SoftmaxColumn masked_softmax(std::span<const double> logits, std::span<const std::uint8_t> allowed,
                             std::span<double> probs);

class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const noexcept { return record_; }
  Var input(Matrix value);
  /// A parameter enters the tape once; later calls return the same node.
  Var param(Param& p);
  const Matrix& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  std::size_t size() const noexcept { return nodes_.size(); }
  void clear() noexcept {
    nodes_.clear();
    param_ids_.clear();
  }

  Var matmul(Var a, Var b);     // a b
  Var matmul_tn(Var a, Var b);  // a^T b
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var cmul(Var a, Var b);
  Var cdiv(Var a, Var b);
  Var scale(Var a, double s);
  Var add_bias(Var x, Var bias);          // bias is rows x 1
  Var broadcast_cols(Var v, Eigen::Index cols);  // v is rows x 1
  Var gelu(Var x);
  Var gelu_prime(Var x);
  /// gelu(x) and gelu'(x) from a single pass.
  std::pair<Var, Var> gelu_with_prime(Var x);
  Var sigmoid(Var x);
  Var tanh(Var x);
  Var sqrt(Var x);
  Var abs(Var x);
  Var rows(Var x, Eigen::Index start, Eigen::Index count);
  Var concat_rows(std::span<const Var> parts);
  Var sum_rows(Var x);  // 1 x cols
  /// Columns of `table` picked by index; -1 gives a zero column.
  Var gather_cols(Var table, std::span<const int> index);
  Var sum_all(Var x);
  Var mean_square(Var x);
  /// sum(x .* w) for a constant w.
  Var dot_const(Var x, const Matrix& w);
  /// Row 0: masked log-probability of `chosen[b]`; row 1: masked entropy.
  Var masked_logprob_entropy(Var logits, const Mask& allowed, std::span<const int> chosen);

  /// Seeds d root = 1 (root must be 1 x 1) and accumulates into Param::grad.
  void backward(Var root);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Param* param = nullptr;
    std::function<void(Tape&, const Node&)> back;
  };

  Var push(Matrix value, std::function<void(Tape&, const Node&)> back);
  Matrix& grad_of(Var v);

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Param*, int> param_ids_;
};

/// Dense product with a fixed per-element summation order (k ascending).
void deterministic_matmul(const Matrix& a, const Matrix& b, Matrix& out);

double gelu(double x) noexcept;
double gelu_prime(double x) noexcept;
double gelu_second(double x) noexcept;

struct MlpConfig {
  int input_dim = 1;
  int hidden_dim = 128;
  int depth = 8;
  int output_dim = 1;
};

class Mlp {
 public:
  Mlp(ParamStore& store, const std::string& prefix, const MlpConfig& cfg, std::mt19937_64& rng);

  const MlpConfig& config() const noexcept { return cfg_; }
  Var forward(Tape& tape, Var x) const;

  struct WithInputGrad {
    Var y;       // 1 x B
    Var dy_dx;   // input_dim x B
  };
  /// Scalar-output network value and its input gradient, both on the tape,
  /// so a loss on the gradient differentiates back to the parameters.
  WithInputGrad forward_with_input_grad(Tape& tape, Var x) const;

 private:
  MlpConfig cfg_;
  std::vector<Param*> w_;
  std::vector<Param*> b_;
};

struct LstmConfig {
  int layers = 2;
  int hidden = 250;
  int input_dim = 2;
  int output_dim = 1;
};

class Lstm {
 public:
  Lstm(ParamStore& store, const std::string& prefix, const LstmConfig& cfg, std::mt19937_64& rng);

  const LstmConfig& config() const noexcept { return cfg_; }

  struct State {
    std::vector<Var> h;
    std::vector<Var> c;
  };

  /// Trainable initial state broadcast over `batch` columns.
  State initial_state(Tape& tape, Eigen::Index batch) const;

  /// One step whose input is the sum of unit vectors e_a + e_b per column
  /// (index -1 contributes nothing). Returns output logits.
  Var step(Tape& tape, std::span<const int> hot_a, std::span<const int> hot_b, State& state) const;

 private:
  LstmConfig cfg_;
  std::vector<Param*> wx_;   // 4H x in
  std::vector<Param*> wh_;   // 4H x H
  std::vector<Param*> b_;    // 4H x 1
  std::vector<Param*> h0_;   // H x 1
  std::vector<Param*> c0_;   // H x 1
  Param* wo_ = nullptr;      // out x H
  Param* bo_ = nullptr;      // out x 1
};

struct AdamConfig {
  double lr = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  void step(ParamStore& store);
  long steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return cfg_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

struct RmsPropConfig {
  double lr = 0.5;
  double decay = 0.9;
  double eps = 1e-8;
};

/// x -= lr g / (sqrt(s) + eps), s = decay s + (1 - decay) g^2.
class RmsProp {
 public:
  explicit RmsProp(RmsPropConfig cfg = {}) : cfg_(cfg) {}
  void step(ParamStore& store);
  void step(std::span<double> x, std::span<const double> g);
  const RmsPropConfig& config() const noexcept { return cfg_; }

 private:
  RmsPropConfig cfg_;
  std::vector<Matrix> s_;
  std::vector<double> flat_;
};

/// Binary container: "SISRPRM1", u32 version, u64 count, then per parameter
/// u64 name length, name bytes, i64 rows, i64 cols, row-major raw doubles.
void save_params(const ParamStore& store, const std::filesystem::path& path);
/// Values are copied into existing parameters of matching name and shape.
void load_params(ParamStore& store, const std::filesystem::path& path);

}  // namespace sisr
