#include "sisr/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>

namespace sisr {

// ---------------------------------------------------------------------------
// Parameters

Param& ParamStore::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  if (find(name)) throw ConfigError("duplicate parameter " + name);
  params_.push_back(Param{name, Matrix::Zero(rows, cols), Matrix::Zero(rows, cols)});
  return params_.back();
}

Param* ParamStore::find(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

const Param* ParamStore::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::size_t ParamStore::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.grad.setZero();
}

void glorot_uniform(Matrix& w, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
  }
}

// ---------------------------------------------------------------------------
// Scalar kernels

double gelu(double x) noexcept {
  constexpr double k = 0.7978845608028654;  // sqrt(2 / pi)
  const double t = std::tanh(k * (x + 0.044715 * x * x * x));
  return 0.5 * x * (1.0 + t);
}

double gelu_prime(double x) noexcept {
  constexpr double k = 0.7978845608028654;
  const double t = std::tanh(k * (x + 0.044715 * x * x * x));
  const double du = k * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

double gelu_second(double x) noexcept {
  constexpr double k = 0.7978845608028654;
  const double t = std::tanh(k * (x + 0.044715 * x * x * x));
  const double du = k * (1.0 + 3.0 * 0.044715 * x * x);
  const double ddu = k * 6.0 * 0.044715 * x;
  const double sech2 = 1.0 - t * t;
  return sech2 * du + 0.5 * x * sech2 * (ddu - 2.0 * t * du * du);
}

namespace {

// out[i0:i0+R, j0:j0+C] with the sum for each element taken k-ascending.
template <int R, int C>
void matmul_tile(const double* a, Eigen::Index lda, const double* b, Eigen::Index ldb, double* out,
                 Eigen::Index ldo, Eigen::Index kk) {
  using Col = Eigen::Array<double, R, 1>;
  Col acc[C];
  for (int j = 0; j < C; ++j) acc[j].setZero();
  for (Eigen::Index k = 0; k < kk; ++k) {
    const Eigen::Map<const Col> w(a + k * lda);
    for (int j = 0; j < C; ++j) acc[j] += w * b[j * ldb + k];
  }
  for (int j = 0; j < C; ++j) Eigen::Map<Col>(out + j * ldo) = acc[j];
}

template <int R>
void matmul_rows(const double* a, Eigen::Index lda, const Matrix& b, Matrix& out, Eigen::Index i0, Eigen::Index kk,
                 Eigen::Index j0, Eigen::Index j1) {
  Eigen::Index j = j0;
  for (; j + 4 <= j1; j += 4) {
    matmul_tile<R, 4>(a + i0, lda, b.data() + j * b.rows(), b.rows(), out.data() + j * out.rows() + i0, out.rows(), kk);
  }
  for (; j < j1; ++j) {
    matmul_tile<R, 1>(a + i0, lda, b.data() + j * b.rows(), b.rows(), out.data() + j * out.rows() + i0, out.rows(), kk);
  }
}

}  // namespace

void deterministic_matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.rows()) throw ShapeMismatch("matmul: inner dimensions differ");
  const Eigen::Index r = a.rows(), kk = a.cols(), c = b.cols();
  out.resize(r, c);
  constexpr Eigen::Index kColBlock = 64;
  for (Eigen::Index j0 = 0; j0 < c; j0 += kColBlock) {
    const Eigen::Index j1 = std::min(c, j0 + kColBlock);
    Eigen::Index i = 0;
    for (; i + 16 <= r; i += 16) matmul_rows<16>(a.data(), r, b, out, i, kk, j0, j1);
    for (; i < r; ++i) matmul_rows<1>(a.data(), r, b, out, i, kk, j0, j1);
  }
  if (kk == 0) out.setZero();
}

SoftmaxColumn masked_softmax(std::span<const double> logits, std::span<const std::uint8_t> allowed,
                             std::span<double> probs) {
  SoftmaxColumn col;
  col.max_logit = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (allowed[j]) col.max_logit = std::max(col.max_logit, logits[j]);
  }
  if (!std::isfinite(col.max_logit)) throw Error("masked softmax: no allowed entry");
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    probs[j] = allowed[j] ? std::exp(logits[j] - col.max_logit) : 0.0;
    sum += probs[j];
  }
  col.log_sum = std::log(sum);
  double h = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (!allowed[j]) continue;
    probs[j] /= sum;
    const double lp = logits[j] - col.max_logit - col.log_sum;
    h -= probs[j] * lp;
  }
  col.entropy = h;
  return col;
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::push(Matrix value, std::function<void(Tape&, const Node&)> back) {
  Node n;
  n.value = std::move(value);
  if (record_) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Matrix& Tape::grad_of(Var v) {
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::input(Matrix value) { return push(std::move(value), nullptr); }

Var Tape::param(Param& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var{it->second};
  Var v = push(p.value, nullptr);
  nodes_.back().param = &p;
  param_ids_.emplace(&p, v.id);
  return v;
}

namespace {

void same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeMismatch(std::string(op) + ": shapes differ");
}

template <class F>
Matrix map(const Matrix& x, F f) {
  Matrix out(x.rows(), x.cols());
  const double* in = x.data();
  double* o = out.data();
  for (Eigen::Index i = 0; i < x.size(); ++i) o[i] = f(in[i]);
  return out;
}

}  // namespace

Var Tape::matmul(Var a, Var b) {
  Matrix out;
  deterministic_matmul(value(a), value(b), out);
  return push(std::move(out), [a, b](Tape& t, const Node& n) {
    t.grad_of(a).noalias() += n.grad * t.value(b).transpose();
    t.grad_of(b).noalias() += t.value(a).transpose() * n.grad;
  });
}

Var Tape::matmul_tn(Var a, Var b) {
  Matrix out;
  const Matrix at = value(a).transpose();
  deterministic_matmul(at, value(b), out);
  return push(std::move(out), [a, b](Tape& t, const Node& n) {
    t.grad_of(a).noalias() += t.value(b) * n.grad.transpose();
    t.grad_of(b).noalias() += t.value(a) * n.grad;
  });
}

Var Tape::add(Var a, Var b) {
  same_shape(value(a), value(b), "add");
  return push(value(a) + value(b), [a, b](Tape& t, const Node& n) {
    t.grad_of(a) += n.grad;
    t.grad_of(b) += n.grad;
  });
}

Var Tape::sub(Var a, Var b) {
  same_shape(value(a), value(b), "sub");
  return push(value(a) - value(b), [a, b](Tape& t, const Node& n) {
    t.grad_of(a) += n.grad;
    t.grad_of(b) -= n.grad;
  });
}

Var Tape::cmul(Var a, Var b) {
  same_shape(value(a), value(b), "cmul");
  return push(value(a).cwiseProduct(value(b)), [a, b](Tape& t, const Node& n) {
    t.grad_of(a) += n.grad.cwiseProduct(t.value(b));
    t.grad_of(b) += n.grad.cwiseProduct(t.value(a));
  });
}

Var Tape::cdiv(Var a, Var b) {
  same_shape(value(a), value(b), "cdiv");
  return push(value(a).cwiseQuotient(value(b)), [a, b](Tape& t, const Node& n) {
    const Matrix& vb = t.value(b);
    t.grad_of(a) += n.grad.cwiseQuotient(vb);
    t.grad_of(b) -= n.grad.cwiseProduct(n.value).cwiseQuotient(vb);
  });
}

Var Tape::scale(Var a, double s) {
  return push(value(a) * s, [a, s](Tape& t, const Node& n) { t.grad_of(a) += n.grad * s; });
}

Var Tape::add_bias(Var x, Var bias) {
  const Matrix& vx = value(x);
  const Matrix& vb = value(bias);
  if (vb.rows() != vx.rows() || vb.cols() != 1) throw ShapeMismatch("add_bias: bias must be rows x 1");
  Matrix out = vx;
  for (Eigen::Index j = 0; j < out.cols(); ++j) out.col(j) += vb.col(0);
  return push(std::move(out), [x, bias](Tape& t, const Node& n) {
    t.grad_of(x) += n.grad;
    Matrix& gb = t.grad_of(bias);
    for (Eigen::Index j = 0; j < n.grad.cols(); ++j) gb.col(0) += n.grad.col(j);
  });
}

Var Tape::broadcast_cols(Var v, Eigen::Index cols) {
  const Matrix& vv = value(v);
  if (vv.cols() != 1) throw ShapeMismatch("broadcast_cols: expects a column");
  Matrix out(vv.rows(), cols);
  for (Eigen::Index j = 0; j < cols; ++j) out.col(j) = vv.col(0);
  return push(std::move(out), [v](Tape& t, const Node& n) {
    Matrix& g = t.grad_of(v);
    for (Eigen::Index j = 0; j < n.grad.cols(); ++j) g.col(0) += n.grad.col(j);
  });
}

Var Tape::gelu(Var x) {
  return push(map(value(x), [](double v) { return sisr::gelu(v); }), [x](Tape& t, const Node& n) {
    t.grad_of(x) += n.grad.cwiseProduct(map(t.value(x), [](double v) { return sisr::gelu_prime(v); }));
  });
}

Var Tape::gelu_prime(Var x) {
  return push(map(value(x), [](double v) { return sisr::gelu_prime(v); }), [x](Tape& t, const Node& n) {
    t.grad_of(x) += n.grad.cwiseProduct(map(t.value(x), [](double v) { return sisr::gelu_second(v); }));
  });
}

std::pair<Var, Var> Tape::gelu_with_prime(Var x) {
  constexpr double k = 0.7978845608028654;
  const Matrix& vx = value(x);
  Matrix g(vx.rows(), vx.cols()), d1(vx.rows(), vx.cols()), d2(vx.rows(), vx.cols());
  for (Eigen::Index i = 0; i < vx.size(); ++i) {
    const double v = vx.data()[i];
    const double t = std::tanh(k * (v + 0.044715 * v * v * v));
    const double du = k * (1.0 + 3.0 * 0.044715 * v * v);
    const double ddu = k * 6.0 * 0.044715 * v;
    const double sech2 = 1.0 - t * t;
    g.data()[i] = 0.5 * v * (1.0 + t);
    d1.data()[i] = 0.5 * (1.0 + t) + 0.5 * v * sech2 * du;
    d2.data()[i] = sech2 * du + 0.5 * v * sech2 * (ddu - 2.0 * t * du * du);
  }
  Matrix d1_copy = record_ ? d1 : Matrix();
  Var a = push(std::move(g), [x, d = std::move(d1_copy)](Tape& t, const Node& n) {
    t.grad_of(x) += n.grad.cwiseProduct(d);
  });
  Var b = push(std::move(d1), [x, d = std::move(d2)](Tape& t, const Node& n) {
    t.grad_of(x) += n.grad.cwiseProduct(d);
  });
  return {a, b};
}

Var Tape::sigmoid(Var x) {
  return push(map(value(x), [](double v) { return 1.0 / (1.0 + std::exp(-v)); }), [x](Tape& t, const Node& n) {
    t.grad_of(x) += n.grad.cwiseProduct(map(n.value, [](double s) { return s * (1.0 - s); }));
  });
}

Var Tape::tanh(Var x) {
  return push(map(value(x), [](double v) { return std::tanh(v); }), [x](Tape& t, const Node& n) {
    t.grad_of(x) += n.grad.cwiseProduct(map(n.value, [](double s) { return 1.0 - s * s; }));
  });
}

Var Tape::sqrt(Var x) {
  return push(map(value(x), [](double v) { return std::sqrt(v); }), [x](Tape& t, const Node& n) {
    t.grad_of(x) += n.grad.cwiseQuotient(n.value * 2.0);
  });
}

Var Tape::abs(Var x) {
  return push(map(value(x), [](double v) { return std::fabs(v); }), [x](Tape& t, const Node& n) {
    t.grad_of(x) += n.grad.cwiseProduct(map(t.value(x), [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }));
  });
}

Var Tape::rows(Var x, Eigen::Index start, Eigen::Index count) {
  const Matrix& vx = value(x);
  if (start < 0 || start + count > vx.rows()) throw ShapeMismatch("rows: range outside matrix");
  return push(vx.middleRows(start, count), [x, start, count](Tape& t, const Node& n) {
    t.grad_of(x).middleRows(start, count) += n.grad;
  });
}

Var Tape::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: nothing to concatenate");
  Eigen::Index total = 0;
  const Eigen::Index cols = value(parts[0]).cols();
  for (Var p : parts) {
    if (value(p).cols() != cols) throw ShapeMismatch("concat_rows: column counts differ");
    total += value(p).rows();
  }
  Matrix out(total, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleRows(at, value(p).rows()) = value(p);
    at += value(p).rows();
  }
  std::vector<Var> ids(parts.begin(), parts.end());
  return push(std::move(out), [ids](Tape& t, const Node& n) {
    Eigen::Index at = 0;
    for (Var p : ids) {
      const Eigen::Index r = t.value(p).rows();
      t.grad_of(p) += n.grad.middleRows(at, r);
      at += r;
    }
  });
}

Var Tape::sum_rows(Var x) {
  const Matrix& vx = value(x);
  Matrix out(1, vx.cols());
  for (Eigen::Index j = 0; j < vx.cols(); ++j) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < vx.rows(); ++i) s += vx(i, j);
    out(0, j) = s;
  }
  return push(std::move(out), [x](Tape& t, const Node& n) {
    Matrix& g = t.grad_of(x);
    for (Eigen::Index j = 0; j < g.cols(); ++j) g.col(j).array() += n.grad(0, j);
  });
}

Var Tape::gather_cols(Var table, std::span<const int> index) {
  const Matrix& tb = value(table);
  Matrix out = Matrix::Zero(tb.rows(), static_cast<Eigen::Index>(index.size()));
  for (std::size_t j = 0; j < index.size(); ++j) {
    if (index[j] < 0) continue;
    if (index[j] >= tb.cols()) throw ShapeMismatch("gather_cols: index out of range");
    out.col(static_cast<Eigen::Index>(j)) = tb.col(index[j]);
  }
  std::vector<int> idx(index.begin(), index.end());
  return push(std::move(out), [table, idx](Tape& t, const Node& n) {
    Matrix& g = t.grad_of(table);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      if (idx[j] >= 0) g.col(idx[j]) += n.grad.col(static_cast<Eigen::Index>(j));
    }
  });
}

Var Tape::sum_all(Var x) {
  const Matrix& vx = value(x);
  double s = 0.0;
  for (Eigen::Index i = 0; i < vx.size(); ++i) s += vx.data()[i];
  return push(Matrix::Constant(1, 1, s), [x](Tape& t, const Node& n) { t.grad_of(x).array() += n.grad(0, 0); });
}

Var Tape::mean_square(Var x) {
  const Matrix& vx = value(x);
  double s = 0.0;
  for (Eigen::Index i = 0; i < vx.size(); ++i) s += vx.data()[i] * vx.data()[i];
  const double count = static_cast<double>(vx.size());
  return push(Matrix::Constant(1, 1, s / count), [x, count](Tape& t, const Node& n) {
    t.grad_of(x) += t.value(x) * (2.0 * n.grad(0, 0) / count);
  });
}

Var Tape::dot_const(Var x, const Matrix& w) {
  same_shape(value(x), w, "dot_const");
  const Matrix& vx = value(x);
  double s = 0.0;
  for (Eigen::Index i = 0; i < vx.size(); ++i) s += vx.data()[i] * w.data()[i];
  return push(Matrix::Constant(1, 1, s), [x, w](Tape& t, const Node& n) { t.grad_of(x) += w * n.grad(0, 0); });
}

Var Tape::masked_logprob_entropy(Var logits, const Mask& allowed, std::span<const int> chosen) {
  const Matrix& lg = value(logits);
  if (allowed.rows() != lg.rows() || allowed.cols() != lg.cols() ||
      static_cast<Eigen::Index>(chosen.size()) != lg.cols()) {
    throw ShapeMismatch("masked_logprob_entropy: shapes differ");
  }
  const Eigen::Index v = lg.rows();
  Matrix out = Matrix::Zero(2, lg.cols());
  Matrix probs = Matrix::Zero(v, lg.cols());
  for (Eigen::Index j = 0; j < lg.cols(); ++j) {
    const int c = chosen[static_cast<std::size_t>(j)];
    if (c < 0) continue;
    std::span<const double> col(lg.data() + j * v, static_cast<std::size_t>(v));
    std::span<const std::uint8_t> mask(allowed.data() + j * v, static_cast<std::size_t>(v));
    if (!mask[static_cast<std::size_t>(c)]) throw Error("token invalid under mask");
    SoftmaxColumn s = masked_softmax(col, mask, std::span<double>(probs.data() + j * v, static_cast<std::size_t>(v)));
    out(0, j) = col[static_cast<std::size_t>(c)] - s.max_logit - s.log_sum;
    out(1, j) = s.entropy;
  }
  std::vector<int> ch(chosen.begin(), chosen.end());
  return push(std::move(out), [logits, probs = std::move(probs), ch](Tape& t, const Node& n) {
    Matrix& g = t.grad_of(logits);
    for (Eigen::Index j = 0; j < g.cols(); ++j) {
      const int c = ch[static_cast<std::size_t>(j)];
      if (c < 0) continue;
      const double glp = n.grad(0, j), gh = n.grad(1, j), h = n.value(1, j);
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        const double p = probs(i, j);
        if (p == 0.0) continue;
        const double lp = std::log(p);
        g(i, j) += glp * ((i == c ? 1.0 : 0.0) - p) - gh * p * (lp + h);
      }
    }
  });
}

void Tape::backward(Var root) {
  if (!record_) throw Error("backward on a non-recording tape");
  const Matrix& rv = value(root);
  if (rv.rows() != 1 || rv.cols() != 1) throw ShapeMismatch("backward: root must be a scalar");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad_of(root)(0, 0) = 1.0;
  for (int i = root.id; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.size() == 0) continue;
    if (n.back) n.back(*this, n);
    if (n.param) n.param->grad += n.grad;
  }
}

// ---------------------------------------------------------------------------
// MLP

Mlp::Mlp(ParamStore& store, const std::string& prefix, const MlpConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  if (cfg.depth < 1 || cfg.input_dim < 1 || cfg.hidden_dim < 1 || cfg.output_dim < 1) {
    throw ConfigError("mlp: dimensions must be positive");
  }
  int fan_in = cfg.input_dim;
  for (int l = 0; l <= cfg.depth; ++l) {
    const int out = l == cfg.depth ? cfg.output_dim : cfg.hidden_dim;
    Param& w = store.add(prefix + ".w" + std::to_string(l), out, fan_in);
    glorot_uniform(w.value, rng);
    Param& b = store.add(prefix + ".b" + std::to_string(l), out, 1);
    w_.push_back(&w);
    b_.push_back(&b);
    fan_in = out;
  }
}

Var Mlp::forward(Tape& tape, Var x) const {
  if (tape.value(x).rows() != cfg_.input_dim) throw ShapeMismatch("mlp: input dimension");
  Var a = x;
  for (std::size_t l = 0; l < w_.size(); ++l) {
    Var z = tape.add_bias(tape.matmul(tape.param(*w_[l]), a), tape.param(*b_[l]));
    a = l + 1 < w_.size() ? tape.gelu(z) : z;
  }
  return a;
}

Mlp::WithInputGrad Mlp::forward_with_input_grad(Tape& tape, Var x) const {
  if (cfg_.output_dim != 1) throw ConfigError("mlp: input gradient needs a scalar output");
  if (tape.value(x).rows() != cfg_.input_dim) throw ShapeMismatch("mlp: input dimension");
  const Eigen::Index batch = tape.value(x).cols();
  std::vector<Var> w, slope;
  Var a = x;
  for (std::size_t l = 0; l < w_.size(); ++l) {
    w.push_back(tape.param(*w_[l]));
    Var zl = tape.add_bias(tape.matmul(w.back(), a), tape.param(*b_[l]));
    if (l + 1 < w_.size()) {
      auto [act, s] = tape.gelu_with_prime(zl);
      a = act;
      slope.push_back(s);
    } else {
      a = zl;
    }
  }
  WithInputGrad out;
  out.y = a;
  // delta_l = d y / d z_l, propagated backwards through explicit tape ops.
  Var ones = tape.input(Matrix::Ones(1, batch));
  Var upstream = tape.matmul_tn(w.back(), ones);
  for (std::size_t l = w_.size() - 1; l-- > 0;) {
    Var delta = tape.cmul(upstream, slope[l]);
    upstream = tape.matmul_tn(w[l], delta);
  }
  out.dy_dx = upstream;
  return out;
}

// ---------------------------------------------------------------------------
// LSTM

Lstm::Lstm(ParamStore& store, const std::string& prefix, const LstmConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  if (cfg.layers < 1 || cfg.hidden < 1 || cfg.input_dim < 1 || cfg.output_dim < 1) {
    throw ConfigError("lstm: dimensions must be positive");
  }
  const int h = cfg.hidden;
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = prefix + ".l" + std::to_string(l);
    Param& wx = store.add(p + ".wx", 4 * h, l == 0 ? cfg.input_dim : h);
    glorot_uniform(wx.value, rng);
    Param& wh = store.add(p + ".wh", 4 * h, h);
    glorot_uniform(wh.value, rng);
    wx_.push_back(&wx);
    wh_.push_back(&wh);
    b_.push_back(&store.add(p + ".b", 4 * h, 1));
    h0_.push_back(&store.add(p + ".h0", h, 1));
    c0_.push_back(&store.add(p + ".c0", h, 1));
  }
  wo_ = &store.add(prefix + ".wo", cfg.output_dim, h);
  glorot_uniform(wo_->value, rng);
  bo_ = &store.add(prefix + ".bo", cfg.output_dim, 1);
}

Lstm::State Lstm::initial_state(Tape& tape, Eigen::Index batch) const {
  State s;
  for (int l = 0; l < cfg_.layers; ++l) {
    s.h.push_back(tape.broadcast_cols(tape.param(*h0_[static_cast<std::size_t>(l)]), batch));
    s.c.push_back(tape.broadcast_cols(tape.param(*c0_[static_cast<std::size_t>(l)]), batch));
  }
  return s;
}

Var Lstm::step(Tape& tape, std::span<const int> hot_a, std::span<const int> hot_b, State& state) const {
  if (static_cast<int>(state.h.size()) != cfg_.layers) throw ShapeMismatch("lstm: state depth");
  if (hot_a.size() != hot_b.size()) throw ShapeMismatch("lstm: input batch sizes differ");
  const Eigen::Index h = cfg_.hidden;
  Var x{};
  for (int l = 0; l < cfg_.layers; ++l) {
    const auto li = static_cast<std::size_t>(l);
    if (tape.value(state.h[li]).cols() != static_cast<Eigen::Index>(hot_a.size())) {
      throw ShapeMismatch("lstm: state batch size");
    }
    Var wx = tape.param(*wx_[li]);
    Var in = l == 0 ? tape.add(tape.gather_cols(wx, hot_a), tape.gather_cols(wx, hot_b)) : tape.matmul(wx, x);
    Var gates = tape.add_bias(tape.add(in, tape.matmul(tape.param(*wh_[li]), state.h[li])), tape.param(*b_[li]));
    Var i = tape.sigmoid(tape.rows(gates, 0, h));
    Var f = tape.sigmoid(tape.rows(gates, h, h));
    Var o = tape.sigmoid(tape.rows(gates, 2 * h, h));
    Var g = tape.tanh(tape.rows(gates, 3 * h, h));
    state.c[li] = tape.add(tape.cmul(f, state.c[li]), tape.cmul(i, g));
    state.h[li] = tape.cmul(o, tape.tanh(state.c[li]));
    x = state.h[li];
  }
  return tape.add_bias(tape.matmul(tape.param(*wo_), x), tape.param(*bo_));
}

// ---------------------------------------------------------------------------
// Optimizers

void Adam::step(ParamStore& store) {
  auto& ps = store.params();
  if (m_.size() != ps.size()) {
    m_.clear();
    v_.clear();
    for (const auto& p : ps) {
      m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < ps.size(); ++k) {
    double* x = ps[k].value.data();
    const double* g = ps[k].grad.data();
    double* m = m_[k].data();
    double* v = v_[k].data();
    for (Eigen::Index i = 0; i < ps[k].value.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      x[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
    }
  }
}

namespace {

void rmsprop_update(const RmsPropConfig& cfg, double* x, const double* g, double* s, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = cfg.decay * s[i] + (1.0 - cfg.decay) * g[i] * g[i];
    x[i] -= cfg.lr * g[i] / (std::sqrt(s[i]) + cfg.eps);
  }
}

}  // namespace

void RmsProp::step(ParamStore& store) {
  auto& ps = store.params();
  if (s_.size() != ps.size()) {
    s_.clear();
    for (const auto& p : ps) s_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  }
  for (std::size_t k = 0; k < ps.size(); ++k) {
    rmsprop_update(cfg_, ps[k].value.data(), ps[k].grad.data(), s_[k].data(),
                   static_cast<std::size_t>(ps[k].value.size()));
  }
}

void RmsProp::step(std::span<double> x, std::span<const double> g) {
  if (g.size() != x.size()) throw ShapeMismatch("rmsprop: gradient size");
  if (flat_.size() != x.size()) flat_.assign(x.size(), 0.0);
  rmsprop_update(cfg_, x.data(), g.data(), flat_.data(), x.size());
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'S', 'I', 'S', 'R', 'P', 'R', 'M', '1'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!f) throw FormatError(0, "checkpoint", "truncated parameter checkpoint");
  return v;
}

}  // namespace

void save_params(const ParamStore& store, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(f, kVersion);
  put<std::uint64_t>(f, store.size());
  for (const auto& p : store.params()) {
    put<std::uint64_t>(f, p.name.size());
    f.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::int64_t>(f, p.value.rows());
    put<std::int64_t>(f, p.value.cols());
    for (Eigen::Index i = 0; i < p.value.rows(); ++i) {
      for (Eigen::Index j = 0; j < p.value.cols(); ++j) put<double>(f, p.value(i, j));
    }
  }
  if (!f) throw IoError("failed writing " + path.string());
}

void load_params(ParamStore& store, const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  char magic[8];
  f.read(magic, sizeof magic);
  if (!f || std::memcmp(magic, kMagic, sizeof magic) != 0) throw FormatError(0, "magic", "not a parameter checkpoint");
  if (get<std::uint32_t>(f) != kVersion) throw FormatError(0, "version", "unsupported checkpoint version");
  const auto count = get<std::uint64_t>(f);
  if (count != store.size()) throw FormatError(0, "count", "checkpoint parameter count differs");
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto len = get<std::uint64_t>(f);
    if (len > 4096) throw FormatError(0, "name", "implausible parameter name length");
    std::string name(len, '\0');
    f.read(name.data(), static_cast<std::streamsize>(len));
    Param* p = store.find(name);
    if (!f || !p) throw FormatError(0, "name", "unknown parameter " + name);
    const auto rows = get<std::int64_t>(f);
    const auto cols = get<std::int64_t>(f);
    if (rows != p->value.rows() || cols != p->value.cols()) throw FormatError(0, name, "shape mismatch");
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) p->value(i, j) = get<double>(f);
    }
  }
}

}  // namespace sisr
