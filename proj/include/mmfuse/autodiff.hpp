#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mmfuse/errors.hpp"

namespace mmfuse {

using Matrix = Eigen::MatrixXd;

// A trainable tensor: value plus gradient accumulator of the same shape.
struct Param {
  Matrix v;
  Matrix g;
  std::string name;
  bool trainable = true;

  Param() = default;
  Param(Matrix value, std::string n, bool train = true)
      : v(std::move(value)), g(Matrix::Zero(v.rows(), v.cols())), name(std::move(n)), trainable(train) {}

  void zero_grad() { g.setZero(); }
};

namespace ad {

class Tape;

// Handle to a node on a tape. Cheap to copy.
struct Var {
  int id = -1;
  Tape* tape = nullptr;
};

// Define-by-run reverse-mode tape over dense double matrices.
//
// Values are computed eagerly when an op is recorded; backward() walks the
// recorded nodes in reverse and accumulates gradients. Parameter leaves add
// their gradient into the owning Param::g, so clearing the tape leaves the
// model intact.
class Tape {
 public:
  Var constant(Matrix v);
  Var param(Param& p);

  const Matrix& val(Var x) const { return nodes_[x.id].value; }
  const Matrix& grad(Var x) const { return nodes_[x.id].grad; }

  // Seeds d(loss)/d(loss) = 1 and runs the reverse sweep. `loss` must be 1x1.
  void backward(Var loss);

  void clear();
  std::size_t size() const { return nodes_.size(); }

  // Internal surface for op constructors; not for library users.
  Var make_node_(Matrix value);
  void set_backward_(int id, std::function<void()> bw) { nodes_[id].backward = std::move(bw); }
  void accumulate_(int id, const Matrix& g);
  const Matrix& grad_(int id) const { return nodes_[id].grad; }
  const Matrix& val_(int id) const { return nodes_[id].value; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;  // empty until touched by the reverse sweep
    std::function<void()> backward;
  };

  std::vector<Node> nodes_;
};

// --- primitive ops -------------------------------------------------------

Var add(Var a, Var b);                 // same shape
Var add_rowvec(Var a, Var b);          // b is 1 x cols(a), broadcast over rows
Var scale(Var a, double c);
Var hadamard(Var a, Var b);
Var matmul(Var a, Var b);              // a * b
Var matmul_nt(Var a, Var b);           // a * b^T
Var transpose(Var a);
Var sigmoid(Var a);
Var gelu(Var a);
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
Var layer_norm(Var x, Var gain, Var bias);  // rowwise, eps 1e-5
Var l2_normalize_rows(Var a);
Var maxpool_rows(Var a);               // columnwise max -> 1 x cols
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var rows_gather(Var table, const std::vector<int>& idx);
Var im2row(Var x, int kernel, int stride, int out_rows);  // zero-padded tail
Var set_diag(Var a, double value);     // gradient blocked on the diagonal
Var sum_weighted(Var a, Matrix weights);                      // sum(a .* w) -> 1x1
Var nll_rows(Var logprobs, const std::vector<int>& targets);  // mean -logp[i, t_i]
Var dropout(Var a, double rate, std::mt19937_64& rng);
Var ctc_loss_node(Var logprobs, const std::vector<int>& target);

}  // namespace ad
}  // namespace mmfuse
