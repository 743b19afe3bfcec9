#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "agd/matrix.hpp"
#include "agd/rng.hpp"

namespace agd::nn {

/// A named trainable (or frozen) tensor.
struct Parameter {
  std::string name;
  Matrix value;
  bool trainable = true;
};

struct Var {
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::size_t id = kNone;
  [[nodiscard]] bool valid() const { return id != kNone; }
};

/// Records primitive operations so the gradient of a scalar loss can be
/// propagated back to every registered parameter. Nodes that cannot reach a
/// trainable parameter carry no backward function, so a forward pass over
/// frozen weights costs only the forward arithmetic.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Var constant(Matrix value);
  /// Registers `p`; repeated calls with the same parameter return the same node.
  /// `p` must outlive the recorded graph and stay unmodified until clear().
  Var param(const Parameter& p);

  [[nodiscard]] const Matrix& value(Var v) const { return value_at(v.id); }
  [[nodiscard]] bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Seeds d(loss)/d(loss) = 1 and runs every backward function in reverse.
  void backward(Var loss);

  /// Gradient accumulated for `p` by the last backward(); zeros if unused.
  [[nodiscard]] Matrix grad_of(const Parameter& p) const;
  [[nodiscard]] const Matrix& grad(Var v) const { return nodes_[v.id].grad; }

  void clear();
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  // Building blocks for op implementations.
  Var push(Matrix value, bool requires_grad, BackwardFn fn);
  /// Gradient buffer of `v`, allocated to zeros on first access.
  Matrix& grad_mut(std::size_t id);
  [[nodiscard]] const Matrix& value_at(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ref != nullptr ? *n.ref : n.value;
  }
  [[nodiscard]] const Matrix& grad_at(std::size_t id) const { return nodes_[id].grad; }
  [[nodiscard]] bool requires_grad_at(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Matrix value;
    // Parameter nodes alias the parameter's storage instead of copying it.
    const Matrix* ref = nullptr;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

// Differentiable primitives. All shape errors throw DimensionError.
Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
/// a + bias, with bias (1 x n) broadcast over rows.
Var add_row(Tape& t, Var a, Var bias);
Var relu(Tape& t, Var a);
Var silu(Tape& t, Var a);
Var sigmoid(Tape& t, Var a);
Var concat_cols(Tape& t, std::span<const Var> parts);
/// Rows of `table` selected by `ids`.
Var gather_rows(Tape& t, Var table, std::span<const int> ids);
/// Row-major reinterpretation.
Var reshape(Tape& t, Var a, std::size_t rows, std::size_t cols);
/// Sums each consecutive block of `group` rows: (g*group x n) -> (g x n).
Var group_sum_rows(Tape& t, Var a, std::size_t group);
/// Repeats each row `times` times consecutively: (g x n) -> (g*times x n).
Var repeat_rows(Tape& t, Var a, std::size_t times);
/// Stacks the whole matrix `times` times: (r x n) -> (times*r x n).
Var tile_rows(Tape& t, Var a, std::size_t times);
/// Row b*k + i of the result is row b of parts[i]; all parts share a shape.
Var interleave_rows(Tape& t, std::span<const Var> parts);
/// Multiplies row r of `a` by s(r, 0).
Var row_scale(Tape& t, Var a, Var s);
/// Softmax(Q K^T / sqrt(d)) V evaluated independently per group. Q has
/// groups*lq rows, K and V groups*lk rows.
Var grouped_attention(Tape& t, Var q, Var k, Var v, std::size_t groups);
/// Inverted dropout with a fixed mask drawn from `rng`.
Var dropout(Tape& t, Var a, double rate, Rng& rng);
/// 1x1 sum of all entries.
Var sum(Tape& t, Var a);
/// (r x 1) column of per-row squared norms.
Var row_sum_squares(Tape& t, Var a);
/// (r x 1) column of per-row l1 norms. The subgradient at 0 is 0.
Var row_sum_abs(Tape& t, Var a);
/// 1x1 weighted sum: sum_r w[r] * a(r, 0).
Var weighted_sum(Tape& t, Var column, std::span<const double> weights);

}  // namespace agd::nn
