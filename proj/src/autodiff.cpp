#include "mmfuse/autodiff.hpp"

#include <cmath>
#include <limits>

namespace mmfuse::ad {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace

Var Tape::make_node_(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1, this};
}

void Tape::accumulate_(int id, const Matrix& g) {
  Matrix& dst = nodes_[id].grad;
  if (dst.size() == 0) {
    dst = g;
  } else {
    dst += g;
  }
}

Var Tape::constant(Matrix v) { return make_node_(std::move(v)); }

Var Tape::param(Param& p) {
  Var v = make_node_(p.v);
  Param* sink = &p;
  set_backward_(v.id, [this, id = v.id, sink] { sink->g += nodes_[id].grad; });
  return v;
}

void Tape::backward(Var loss) {
  require(loss.tape == this && nodes_[loss.id].value.size() == 1, "backward: loss must be a 1x1 node");
  nodes_[loss.id].grad = Matrix::Ones(1, 1);
  for (int i = loss.id; i >= 0; --i) {
    if (nodes_[i].grad.size() != 0 && nodes_[i].backward) nodes_[i].backward();
  }
}

void Tape::clear() { nodes_.clear(); }

// --- ops ------------------------------------------------------------------

Var add(Var a, Var b) {
  Tape& t = *a.tape;
  require(t.val(a).rows() == t.val(b).rows() && t.val(a).cols() == t.val(b).cols(), "add: shape mismatch");
  Var v = t.make_node_(t.val(a) + t.val(b));
  t.set_backward_(v.id, [&t, self = v.id, ia = a.id, ib = b.id] {
    t.accumulate_(ia, t.grad_(self));
    t.accumulate_(ib, t.grad_(self));
  });
  return v;
}

Var add_rowvec(Var a, Var b) {
  Tape& t = *a.tape;
  require(t.val(b).rows() == 1 && t.val(b).cols() == t.val(a).cols(), "add_rowvec: b must be 1 x cols(a)");
  Matrix out = t.val(a);
  out.rowwise() += t.val(b).row(0);
  Var v = t.make_node_(std::move(out));
  t.set_backward_(v.id, [&t, self = v.id, ia = a.id, ib = b.id] {
    const Matrix& g = t.grad_(self);
    t.accumulate_(ia, g);
    t.accumulate_(ib, g.colwise().sum());
  });
  return v;
}

Var scale(Var a, double c) {
  Tape& t = *a.tape;
  Var v = t.make_node_(t.val(a) * c);
  t.set_backward_(v.id, [&t, self = v.id, ia = a.id, c] { t.accumulate_(ia, t.grad_(self) * c); });
  return v;
}

Var hadamard(Var a, Var b) {
  Tape& t = *a.tape;
  require(t.val(a).rows() == t.val(b).rows() && t.val(a).cols() == t.val(b).cols(), "hadamard: shape mismatch");
  Var v = t.make_node_(t.val(a).cwiseProduct(t.val(b)));
  t.set_backward_(v.id, [&t, self = v.id, ia = a.id, ib = b.id] {
    const Matrix& g = t.grad_(self);
    t.accumulate_(ia, g.cwiseProduct(t.val_(ib)));
    t.accumulate_(ib, g.cwiseProduct(t.val_(ia)));
  });
  return v;
}

Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  require(t.val(a).cols() == t.val(b).rows(), "matmul: inner dimension mismatch");
  Var v = t.make_node_(t.val(a) * t.val(b));
  t.set_backward_(v.id, [&t, self = v.id, ia = a.id, ib = b.id] {
    const Matrix& g = t.grad_(self);
    t.accumulate_(ia, g * t.val_(ib).transpose());
    t.accumulate_(ib, t.val_(ia).transpose() * g);
  });
  return v;
}

Var matmul_nt(Var a, Var b) {
  Tape& t = *a.tape;
  require(t.val(a).cols() == t.val(b).cols(), "matmul_nt: inner dimension mismatch");
  Var v = t.make_node_(t.val(a) * t.val(b).transpose());
  t.set_backward_(v.id, [&t, self = v.id, ia = a.id, ib = b.id] {
    const Matrix& g = t.grad_(self);
    t.accumulate_(ia, g * t.val_(ib));
    t.accumulate_(ib, g.transpose() * t.val_(ia));
  });
  return v;
}

Var transpose(Var a) {
  Tape& t = *a.tape;
  Var v = t.make_node_(t.val(a).transpose());
  t.set_backward_(v.id, [&t, self = v.id, ia = a.id] { t.accumulate_(ia, t.grad_(self).transpose()); });
  return v;
}

Var sigmoid(Var a) {
  Tape& t = *a.tape;
  Matrix out = t.val(a).unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  Var v = t.make_node_(std::move(out));
  t.set_backward_(v.id, [&t, self = v.id, ia = a.id] {
    const Matrix& y = t.val_(self);
    t.accumulate_(ia, t.grad_(self).cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
  return v;
}

Var gelu(Var a) {
  Tape& t = *a.tape;
  Matrix out = t.val(a).unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); });
  Var v = t.make_node_(std::move(out));
  t.set_backward_(v.id, [&t, self = v.id, ia = a.id] {
    Matrix d = t.val_(ia).unaryExpr([](double x) {
      const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
      const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
      return cdf + x * pdf;
    });
    t.accumulate_(ia, t.grad_(self).cwiseProduct(d));
  });
  return v;
}

Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  Matrix out = t.val(a);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double mx = out.row(i).maxCoeff();
    out.row(i) = (out.row(i).array() - mx).exp();
    out.row(i) /= out.row(i).sum();
  }
  Var v = t.make_node_(std::move(out));
  t.set_backward_(v.id, [&t, self = v.id, ia = a.id] {
    const Matrix& y = t.val_(self);
    const Matrix& g = t.grad_(self);
    Matrix dx = y;
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double dot = g.row(i).dot(y.row(i));
      dx.row(i) = y.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
    }
    t.accumulate_(ia, dx);
  });
  return v;
}

Var log_softmax_rows(Var a) {
  Tape& t = *a.tape;
  Matrix out = t.val(a);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double mx = out.row(i).maxCoeff();
    const double lse = mx + std::log((out.row(i).array() - mx).exp().sum());
    out.row(i).array() -= lse;
  }
  Var v = t.make_node_(std::move(out));
  t.set_backward_(v.id, [&t, self = v.id, ia = a.id] {
    const Matrix& y = t.val_(self);  // log-probs
    const Matrix& g = t.grad_(self);
    Matrix dx = g;
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double gsum = g.row(i).sum();
      dx.row(i) -= (y.row(i).array().exp() * gsum).matrix();
    }
    t.accumulate_(ia, dx);
  });
  return v;
}

Var layer_norm(Var x, Var gain, Var bias) {
  constexpr double kEps = 1e-5;
  Tape& t = *x.tape;
  const Matrix& in = t.val(x);
  const Eigen::Index d = in.cols();
  require(t.val(gain).rows() == 1 && t.val(gain).cols() == d, "layer_norm: gain must be 1 x d");
  require(t.val(bias).rows() == 1 && t.val(bias).cols() == d, "layer_norm: bias must be 1 x d");

  Matrix xhat(in.rows(), d);
  Eigen::VectorXd inv_sigma(in.rows());
  for (Eigen::Index i = 0; i < in.rows(); ++i) {
    const double mu = in.row(i).mean();
    const double var = (in.row(i).array() - mu).square().mean();
    inv_sigma(i) = 1.0 / std::sqrt(var + kEps);
    xhat.row(i) = (in.row(i).array() - mu) * inv_sigma(i);
  }
  Matrix out = xhat;
  out.array().rowwise() *= t.val(gain).row(0).array();
  out.rowwise() += t.val(bias).row(0);

  Var v = t.make_node_(std::move(out));
  t.set_backward_(v.id, [&t, self = v.id, ix = x.id, ig = gain.id, ib = bias.id, xhat = std::move(xhat),
                         inv_sigma = std::move(inv_sigma)] {
    const Matrix& g = t.grad_(self);
    const Matrix& gamma = t.val_(ig);
    t.accumulate_(ib, g.colwise().sum());
    t.accumulate_(ig, g.cwiseProduct(xhat).colwise().sum());
    Matrix dx(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      Eigen::RowVectorXd dxhat = g.row(i).cwiseProduct(gamma.row(0));
      const double m1 = dxhat.mean();
      const double m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
      dx.row(i) = inv_sigma(i) * (dxhat.array() - m1 - xhat.row(i).array() * m2);
    }
    t.accumulate_(ix, dx);
  });
  return v;
}

Var l2_normalize_rows(Var a) {
  constexpr double kEps = 1e-12;
  Tape& t = *a.tape;
  const Matrix& in = t.val(a);
  Eigen::VectorXd norms(in.rows());
  Matrix out = in;
  for (Eigen::Index i = 0; i < in.rows(); ++i) {
    norms(i) = std::max(in.row(i).norm(), kEps);
    out.row(i) /= norms(i);
  }
  Var v = t.make_node_(std::move(out));
  t.set_backward_(v.id, [&t, self = v.id, ia = a.id, norms = std::move(norms)] {
    const Matrix& y = t.val_(self);
    const Matrix& g = t.grad_(self);
    Matrix dx(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const double dot = g.row(i).dot(y.row(i));
      dx.row(i) = (g.row(i) - dot * y.row(i)) / norms(i);
    }
    t.accumulate_(ia, dx);
  });
  return v;
}

Var maxpool_rows(Var a) {
  Tape& t = *a.tape;
  const Matrix& in = t.val(a);
  require(in.rows() >= 1, "maxpool_rows: empty input");
  Matrix out(1, in.cols());
  std::vector<Eigen::Index> argmax(in.cols());
  for (Eigen::Index j = 0; j < in.cols(); ++j) {
    Eigen::Index arg = 0;
    out(0, j) = in.col(j).maxCoeff(&arg);
    argmax[j] = arg;
  }
  Var v = t.make_node_(std::move(out));
  t.set_backward_(v.id, [&t, self = v.id, ia = a.id, argmax = std::move(argmax)] {
    const Matrix& g = t.grad_(self);
    Matrix dx = Matrix::Zero(t.val_(ia).rows(), t.val_(ia).cols());
    for (Eigen::Index j = 0; j < dx.cols(); ++j) dx(argmax[j], j) = g(0, j);
    t.accumulate_(ia, dx);
  });
  return v;
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no parts");
  Tape& t = *parts.front().tape;
  Eigen::Index rows = 0;
  const Eigen::Index cols = t.val(parts.front()).cols();
  for (const Var& p : parts) {
    require(t.val(p).cols() == cols, "concat_rows: column mismatch");
    rows += t.val(p).rows();
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, t.val(p).rows()) = t.val(p);
    ids.push_back(p.id);
    offsets.push_back(at);
    at += t.val(p).rows();
  }
  Var v = t.make_node_(std::move(out));
  t.set_backward_(v.id, [&t, self = v.id, ids = std::move(ids), offsets = std::move(offsets)] {
    const Matrix& g = t.grad_(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const Eigen::Index n = t.val_(ids[k]).rows();
      t.accumulate_(ids[k], g.middleRows(offsets[k], n));
    }
  });
  return v;
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no parts");
  Tape& t = *parts.front().tape;
  Eigen::Index cols = 0;
  const Eigen::Index rows = t.val(parts.front()).rows();
  for (const Var& p : parts) {
    require(t.val(p).rows() == rows, "concat_cols: row mismatch");
    cols += t.val(p).cols();
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, t.val(p).cols()) = t.val(p);
    ids.push_back(p.id);
    offsets.push_back(at);
    at += t.val(p).cols();
  }
  Var v = t.make_node_(std::move(out));
  t.set_backward_(v.id, [&t, self = v.id, ids = std::move(ids), offsets = std::move(offsets)] {
    const Matrix& g = t.grad_(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const Eigen::Index n = t.val_(ids[k]).cols();
      t.accumulate_(ids[k], g.middleCols(offsets[k], n));
    }
  });
  return v;
}

Var rows_gather(Var table, const std::vector<int>& idx) {
  Tape& t = *table.tape;
  const Matrix& tab = t.val(table);
  Matrix out(static_cast<Eigen::Index>(idx.size()), tab.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= tab.rows()) throw VocabError("rows_gather: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = tab.row(idx[i]);
  }
  Var v = t.make_node_(std::move(out));
  t.set_backward_(v.id, [&t, self = v.id, it = table.id, idx] {
    const Matrix& g = t.grad_(self);
    Matrix dt = Matrix::Zero(t.val_(it).rows(), t.val_(it).cols());
    for (std::size_t i = 0; i < idx.size(); ++i) dt.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate_(it, dt);
  });
  return v;
}

Var im2row(Var x, int kernel, int stride, int out_rows) {
  Tape& t = *x.tape;
  const Matrix& in = t.val(x);
  const Eigen::Index c = in.cols();
  require(kernel >= 1 && stride >= 1 && out_rows >= 1, "im2row: bad geometry");
  Matrix out = Matrix::Zero(out_rows, kernel * c);
  for (int r = 0; r < out_rows; ++r) {
    for (int j = 0; j < kernel; ++j) {
      const Eigen::Index src = static_cast<Eigen::Index>(r) * stride + j;
      if (src < in.rows()) out.block(r, j * c, 1, c) = in.row(src);
    }
  }
  Var v = t.make_node_(std::move(out));
  t.set_backward_(v.id, [&t, self = v.id, ix = x.id, kernel, stride, out_rows, c] {
    const Matrix& g = t.grad_(self);
    Matrix dx = Matrix::Zero(t.val_(ix).rows(), c);
    for (int r = 0; r < out_rows; ++r) {
      for (int j = 0; j < kernel; ++j) {
        const Eigen::Index src = static_cast<Eigen::Index>(r) * stride + j;
        if (src < dx.rows()) dx.row(src) += g.block(r, j * c, 1, c);
      }
    }
    t.accumulate_(ix, dx);
  });
  return v;
}

Var set_diag(Var a, double value) {
  Tape& t = *a.tape;
  Matrix out = t.val(a);
  const Eigen::Index n = std::min(out.rows(), out.cols());
  for (Eigen::Index i = 0; i < n; ++i) out(i, i) = value;
  Var v = t.make_node_(std::move(out));
  t.set_backward_(v.id, [&t, self = v.id, ia = a.id, n] {
    Matrix g = t.grad_(self);
    for (Eigen::Index i = 0; i < n; ++i) g(i, i) = 0.0;
    t.accumulate_(ia, g);
  });
  return v;
}

Var sum_weighted(Var a, Matrix weights) {
  Tape& t = *a.tape;
  require(weights.rows() == t.val(a).rows() && weights.cols() == t.val(a).cols(), "sum_weighted: shape mismatch");
  Matrix out(1, 1);
  out(0, 0) = t.val(a).cwiseProduct(weights).sum();
  Var v = t.make_node_(std::move(out));
  t.set_backward_(v.id, [&t, self = v.id, ia = a.id, w = std::move(weights)] {
    t.accumulate_(ia, t.grad_(self)(0, 0) * w);
  });
  return v;
}

Var nll_rows(Var logprobs, const std::vector<int>& targets) {
  Tape& t = *logprobs.tape;
  const Matrix& lp = t.val(logprobs);
  require(static_cast<Eigen::Index>(targets.size()) == lp.rows(), "nll_rows: one target per row required");
  double loss = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || targets[i] >= lp.cols()) throw VocabError("nll_rows: target class out of range");
    loss -= lp(static_cast<Eigen::Index>(i), targets[i]);
  }
  Matrix out(1, 1);
  out(0, 0) = loss / static_cast<double>(targets.size());
  Var v = t.make_node_(std::move(out));
  t.set_backward_(v.id, [&t, self = v.id, ia = logprobs.id, targets] {
    const double g = t.grad_(self)(0, 0) / static_cast<double>(targets.size());
    Matrix dx = Matrix::Zero(t.val_(ia).rows(), t.val_(ia).cols());
    for (std::size_t i = 0; i < targets.size(); ++i) dx(static_cast<Eigen::Index>(i), targets[i]) = -g;
    t.accumulate_(ia, dx);
  });
  return v;
}

Var dropout(Var a, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return a;
  require(rate < 1.0, "dropout: rate must be < 1");
  Tape& t = *a.tape;
  const Matrix& in = t.val(a);
  std::bernoulli_distribution keep(1.0 - rate);
  Matrix mask(in.rows(), in.cols());
  const double inv_keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < in.rows(); ++i)
    for (Eigen::Index j = 0; j < in.cols(); ++j) mask(i, j) = keep(rng) ? inv_keep : 0.0;
  Var v = t.make_node_(in.cwiseProduct(mask));
  t.set_backward_(v.id, [&t, self = v.id, ia = a.id, mask = std::move(mask)] {
    t.accumulate_(ia, t.grad_(self).cwiseProduct(mask));
  });
  return v;
}

// CTC forward DP over the extended label sequence (blank-separated), in log
// space. Backward uses the standard alpha/beta posterior identity on the
// frame log-probabilities.
Var ctc_loss_node(Var logprobs, const std::vector<int>& target) {
  Tape& t = *logprobs.tape;
  const Matrix& lp = t.val(logprobs);
  const int T = static_cast<int>(lp.rows());
  const int V = static_cast<int>(lp.cols());
  if (target.empty()) throw InfeasibleError("ctc: empty target");
  int repeats = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] <= 0 || target[i] >= V) throw VocabError("ctc: target symbol outside vocabulary");
    if (i > 0 && target[i] == target[i - 1]) ++repeats;
  }
  const int L = static_cast<int>(target.size());
  if (T < L + repeats)
    throw InfeasibleError("ctc: target needs " + std::to_string(L + repeats) + " frames but only " +
                          std::to_string(T) + " available");

  const int S = 2 * L + 1;
  std::vector<int> ext(S, 0);
  for (int i = 0; i < L; ++i) ext[2 * i + 1] = target[i];

  Matrix alpha = Matrix::Constant(T, S, kNegInf);
  alpha(0, 0) = lp(0, ext[0]);
  alpha(0, 1) = lp(0, ext[1]);
  for (int ti = 1; ti < T; ++ti) {
    for (int s = 0; s < S; ++s) {
      double acc = alpha(ti - 1, s);
      if (s >= 1) acc = log_add(acc, alpha(ti - 1, s - 1));
      if (s >= 2 && ext[s] != 0 && ext[s] != ext[s - 2]) acc = log_add(acc, alpha(ti - 1, s - 2));
      alpha(ti, s) = (acc == kNegInf) ? kNegInf : acc + lp(ti, ext[s]);
    }
  }
  const double log_p = log_add(alpha(T - 1, S - 1), alpha(T - 1, S - 2));
  Matrix out(1, 1);
  out(0, 0) = -log_p;

  Var v = t.make_node_(std::move(out));
  t.set_backward_(v.id, [&t, self = v.id, ia = logprobs.id, alpha = std::move(alpha), ext, log_p, T, S, V] {
    const Matrix& lp = t.val_(ia);
    Matrix beta = Matrix::Constant(T, S, kNegInf);
    beta(T - 1, S - 1) = lp(T - 1, ext[S - 1]);
    beta(T - 1, S - 2) = lp(T - 1, ext[S - 2]);
    for (int ti = T - 2; ti >= 0; --ti) {
      for (int s = S - 1; s >= 0; --s) {
        double acc = beta(ti + 1, s);
        if (s + 1 < S) acc = log_add(acc, beta(ti + 1, s + 1));
        if (s + 2 < S && ext[s + 2] != 0 && ext[s + 2] != ext[s]) acc = log_add(acc, beta(ti + 1, s + 2));
        beta(ti, s) = (acc == kNegInf) ? kNegInf : acc + lp(ti, ext[s]);
      }
    }
    const double g = t.grad_(self)(0, 0);
    Matrix dx = Matrix::Zero(T, V);
    for (int ti = 0; ti < T; ++ti) {
      for (int s = 0; s < S; ++s) {
        const double joint = alpha(ti, s) + beta(ti, s);
        if (joint == kNegInf) continue;
        dx(ti, ext[s]) -= g * std::exp(joint - lp(ti, ext[s]) - log_p);
      }
    }
    t.accumulate_(ia, dx);
  });
  return v;
}

}  // namespace mmfuse::ad
