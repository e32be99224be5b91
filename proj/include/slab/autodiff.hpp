#pragma once

#include <array>
#include <functional>
#include <memory>
#include <vector>

#include "slab/common.hpp"

namespace slab::ad {

// Batched reverse-mode autodiff over dense f64 matrices (rows = batch lanes,
// cols = features). Two gradient paths share the same op set:
//   * backward()  - fast accumulation into leaf buffers, used for the outer
//                   training gradient;
//   * grad()      - adjoints built as graph nodes, so the result is itself
//                   differentiable (input gradients, divergences, velocity
//                   fields inside losses).
// Binary elementwise ops broadcast (R x C) against (1 x C), (R x 1) and
// (1 x 1) operands.

enum class Op : std::uint8_t {
  kConst,
  kLeaf,
  kAdd,
  kSub,
  kNeg,
  kMul,
  kDiv,
  kMatMul,
  kExp,
  kLog,
  kTanh,
  kSigmoid,
  kErf,
  kSin,
  kCos,
  kSqrt,
  kSquare,
  kSumAll,
  kSumCols,   // (R x C) -> (R x 1)
  kSumRows,   // (R x C) -> (1 x C)
  kSliceCols,
  kConcatCols,
  kTileRows,  // (1 x C) -> (R x C)
  kTileCols,  // (R x 1) -> (R x C)
  kTranspose,
  kDetach,
};

class Node;
using Value = std::shared_ptr<Node>;

class Node {
 public:
  Mat val;
  Op op = Op::kConst;
  Value a, b;
  int i0 = 0, i1 = 0;  // aux: slice range / tile count
  bool rg = false;     // participates in some gradient

  // Gradient buffer for leaves, filled by backward().
  Mat grad;
  bool grad_set = false;

  ~Node();  // iterative parent release; deep graphs must not recurse
};

/// Thread-local switch: when false, ops produce constants and no graph is
/// retained (inference mode).
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(prev); }
};

/// Runs `fn` with graph recording forced on (grad() needs a recorded graph
/// even inside inference passes); if the ambient mode was off, the result is
/// returned detached so no graph escapes.
Value inner_grad_scope(const std::function<Value()>& fn);

Value constant(Mat m);
Value constant(double x);
Value leaf(Mat m);

Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value neg(const Value& a);
Value mul(const Value& a, const Value& b);
Value div(const Value& a, const Value& b);
Value matmul(const Value& a, const Value& b);
Value vexp(const Value& a);
Value vlog(const Value& a);
Value vtanh(const Value& a);
Value vsigmoid(const Value& a);
Value verf(const Value& a);
Value vsin(const Value& a);
Value vcos(const Value& a);
Value vsqrt(const Value& a);
Value square(const Value& a);
Value sum_all(const Value& a);
Value mean_all(const Value& a);
Value sum_cols(const Value& a);
Value sum_rows(const Value& a);
Value slice_cols(const Value& a, int j0, int n);
Value concat_cols(const Value& a, const Value& b);
Value tile_rows(const Value& a, int rows);
Value tile_cols(const Value& a, int cols);
Value transpose(const Value& a);
Value detach(const Value& a);
Value cmul(const Value& a, double c);
Value cadd(const Value& a, double c);
/// Row-wise max as a detached constant (log-sum-exp stabilizer).
Value row_max_const(const Value& a);
Value gelu(const Value& a);

inline Value operator+(const Value& a, const Value& b) { return add(a, b); }
inline Value operator-(const Value& a, const Value& b) { return sub(a, b); }
inline Value operator*(const Value& a, const Value& b) { return mul(a, b); }
inline Value operator/(const Value& a, const Value& b) { return div(a, b); }
inline Value operator-(const Value& a) { return neg(a); }
inline Value operator*(const Value& a, double c) { return cmul(a, c); }
inline Value operator*(double c, const Value& a) { return cmul(a, c); }
inline Value operator+(const Value& a, double c) { return cadd(a, c); }
inline Value operator+(double c, const Value& a) { return cadd(a, c); }
inline Value operator-(const Value& a, double c) { return cadd(a, -c); }
inline Value operator-(double c, const Value& a) { return cadd(neg(a), c); }

/// Reverse sweep from a scalar root; accumulates into the `grad` buffer of
/// every reachable leaf with rg set. Throws on non-finite adjoints.
void backward(const Value& root);

/// Adjoints of `root` w.r.t. `wrt`, built as graph nodes (differentiable).
/// `root` is scalar unless `seed` provides an explicit cotangent. Each wrt
/// node is treated as a cut: no adjoint flows through it into its parents.
std::vector<Value> grad(const Value& root, const std::vector<Value>& wrt,
                        const Value& seed = nullptr);

/// Number of nodes currently alive (leak checks in tests).
std::int64_t live_nodes();

}  // namespace slab::ad
