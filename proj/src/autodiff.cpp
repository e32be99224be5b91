#include "slab/autodiff.hpp"

#include <atomic>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace slab::ad {

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<std::int64_t> g_live{0};

constexpr double kTwoOverSqrtPi = 1.1283791670955126;

Value make_node(Mat val, Op op, Value a, Value b) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  bool track = g_grad_enabled && ((a && a->rg) || (b && b->rg));
  if (track) {
    n->op = op;
    n->a = std::move(a);
    n->b = std::move(b);
    n->rg = true;
  } else {
    n->op = Op::kConst;
  }
  ++g_live;
  return n;
}

void check_broadcast(const Mat& x, const Mat& y) {
  bool rows_ok = x.rows() == y.rows() || x.rows() == 1 || y.rows() == 1;
  bool cols_ok = x.cols() == y.cols() || x.cols() == 1 || y.cols() == 1;
  SLAB_REQUIRE(rows_ok && cols_ok, "autodiff: incompatible shapes for broadcast op");
}

Mat expand(const Mat& m, Eigen::Index r, Eigen::Index c) {
  if (m.rows() == r && m.cols() == c) return m;
  if (m.rows() == 1 && m.cols() == 1) return Mat::Constant(r, c, m(0, 0));
  if (m.rows() == 1 && m.cols() == c) return m.replicate(r, 1);
  if (m.rows() == r && m.cols() == 1) return m.replicate(1, c);
  throw InvalidArgument("autodiff: cannot expand shape");
}

Mat reduce_to(const Mat& g, Eigen::Index r, Eigen::Index c) {
  if (g.rows() == r && g.cols() == c) return g;
  if (r == 1 && c == 1) return Mat::Constant(1, 1, g.sum());
  if (r == 1) return g.colwise().sum();
  if (c == 1) return g.rowwise().sum();
  throw InvalidArgument("autodiff: cannot reduce adjoint shape");
}

Value reduce_to_node(const Value& g, Eigen::Index r, Eigen::Index c) {
  if (g->val.rows() == r && g->val.cols() == c) return g;
  if (r == 1 && c == 1) return sum_all(g);
  if (r == 1) return sum_rows(g);
  if (c == 1) return sum_cols(g);
  throw InvalidArgument("autodiff: cannot reduce adjoint shape");
}

Value expand_node(const Value& g, Eigen::Index r, Eigen::Index c) {
  Value out = g;
  if (out->val.cols() == 1 && c > 1) out = tile_cols(out, static_cast<int>(c));
  if (out->val.rows() == 1 && r > 1) out = tile_rows(out, static_cast<int>(r));
  SLAB_REQUIRE(out->val.rows() == r && out->val.cols() == c, "autodiff: cannot expand adjoint");
  return out;
}

template <typename F>
Mat binary_bc(const Mat& x, const Mat& y, F f) {
  check_broadcast(x, y);
  Eigen::Index r = std::max(x.rows(), y.rows());
  Eigen::Index c = std::max(x.cols(), y.cols());
  if (x.rows() == r && x.cols() == c && y.rows() == r && y.cols() == c)
    return f(x, y);
  return f(expand(x, r, c), expand(y, r, c));
}

}  // namespace

Node::~Node() {
  --g_live;
  // Release long parent chains iteratively; graphs can be ~1e5 nodes deep.
  std::vector<Value> stack;
  if (a) stack.push_back(std::move(a));
  if (b) stack.push_back(std::move(b));
  while (!stack.empty()) {
    Value v = std::move(stack.back());
    stack.pop_back();
    if (v && v.use_count() == 1) {
      if (v->a) stack.push_back(std::move(v->a));
      if (v->b) stack.push_back(std::move(v->b));
    }
  }
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }
std::int64_t live_nodes() { return g_live.load(); }

Value inner_grad_scope(const std::function<Value()>& fn) {
  if (g_grad_enabled) return fn();
  set_grad_enabled(true);
  Value r;
  try {
    r = fn();
  } catch (...) {
    set_grad_enabled(false);
    throw;
  }
  set_grad_enabled(false);
  return detach(r);
}

Value constant(Mat m) {
  auto n = std::make_shared<Node>();
  n->val = std::move(m);
  ++g_live;
  return n;
}

Value constant(double x) { return constant(Mat::Constant(1, 1, x)); }

Value leaf(Mat m) {
  auto n = std::make_shared<Node>();
  n->val = std::move(m);
  n->op = Op::kLeaf;
  n->rg = true;
  ++g_live;
  return n;
}

Value add(const Value& a, const Value& b) {
  return make_node(binary_bc(a->val, b->val, [](const Mat& x, const Mat& y) -> Mat { return x + y; }),
                   Op::kAdd, a, b);
}
Value sub(const Value& a, const Value& b) {
  return make_node(binary_bc(a->val, b->val, [](const Mat& x, const Mat& y) -> Mat { return x - y; }),
                   Op::kSub, a, b);
}
Value neg(const Value& a) { return make_node(-a->val, Op::kNeg, a, nullptr); }
Value mul(const Value& a, const Value& b) {
  return make_node(binary_bc(a->val, b->val,
                             [](const Mat& x, const Mat& y) -> Mat { return x.cwiseProduct(y); }),
                   Op::kMul, a, b);
}
Value div(const Value& a, const Value& b) {
  return make_node(binary_bc(a->val, b->val,
                             [](const Mat& x, const Mat& y) -> Mat { return x.cwiseQuotient(y); }),
                   Op::kDiv, a, b);
}
Value matmul(const Value& a, const Value& b) {
  SLAB_REQUIRE(a->val.cols() == b->val.rows(), "autodiff: matmul inner dims");
  return make_node(a->val * b->val, Op::kMatMul, a, b);
}
Value vexp(const Value& a) { return make_node(a->val.array().exp().matrix(), Op::kExp, a, nullptr); }
Value vlog(const Value& a) { return make_node(a->val.array().log().matrix(), Op::kLog, a, nullptr); }
Value vtanh(const Value& a) { return make_node(a->val.array().tanh().matrix(), Op::kTanh, a, nullptr); }
Value vsigmoid(const Value& a) {
  Mat y = (1.0 / (1.0 + (-a->val.array()).exp())).matrix();
  return make_node(std::move(y), Op::kSigmoid, a, nullptr);
}
Value verf(const Value& a) {
  Mat y = a->val.unaryExpr([](double x) { return std::erf(x); });
  return make_node(std::move(y), Op::kErf, a, nullptr);
}
Value vsin(const Value& a) { return make_node(a->val.array().sin().matrix(), Op::kSin, a, nullptr); }
Value vcos(const Value& a) { return make_node(a->val.array().cos().matrix(), Op::kCos, a, nullptr); }
Value vsqrt(const Value& a) { return make_node(a->val.array().sqrt().matrix(), Op::kSqrt, a, nullptr); }
Value square(const Value& a) {
  return make_node(a->val.array().square().matrix(), Op::kSquare, a, nullptr);
}
Value sum_all(const Value& a) {
  return make_node(Mat::Constant(1, 1, a->val.sum()), Op::kSumAll, a, nullptr);
}
Value mean_all(const Value& a) { return cmul(sum_all(a), 1.0 / static_cast<double>(a->val.size())); }
Value sum_cols(const Value& a) {
  return make_node(a->val.rowwise().sum(), Op::kSumCols, a, nullptr);
}
Value sum_rows(const Value& a) {
  return make_node(a->val.colwise().sum(), Op::kSumRows, a, nullptr);
}
Value slice_cols(const Value& a, int j0, int n) {
  SLAB_REQUIRE(j0 >= 0 && n >= 0 && j0 + n <= a->val.cols(), "autodiff: slice out of range");
  Value v = make_node(a->val.middleCols(j0, n), Op::kSliceCols, a, nullptr);
  v->i0 = j0;
  v->i1 = n;
  return v;
}
Value concat_cols(const Value& a, const Value& b) {
  SLAB_REQUIRE(a->val.rows() == b->val.rows(), "autodiff: concat row mismatch");
  Mat m(a->val.rows(), a->val.cols() + b->val.cols());
  m << a->val, b->val;
  return make_node(std::move(m), Op::kConcatCols, a, b);
}
Value tile_rows(const Value& a, int rows) {
  SLAB_REQUIRE(a->val.rows() == 1, "autodiff: tile_rows expects a row vector");
  Value v = make_node(a->val.replicate(rows, 1), Op::kTileRows, a, nullptr);
  v->i0 = rows;
  return v;
}
Value tile_cols(const Value& a, int cols) {
  SLAB_REQUIRE(a->val.cols() == 1, "autodiff: tile_cols expects a column vector");
  Value v = make_node(a->val.replicate(1, cols), Op::kTileCols, a, nullptr);
  v->i0 = cols;
  return v;
}
Value transpose(const Value& a) {
  return make_node(a->val.transpose(), Op::kTranspose, a, nullptr);
}
Value detach(const Value& a) { return constant(a->val); }
Value cmul(const Value& a, double c) { return mul(a, constant(c)); }
Value cadd(const Value& a, double c) { return add(a, constant(c)); }
Value row_max_const(const Value& a) {
  return constant(Mat(a->val.rowwise().maxCoeff()));
}
Value gelu(const Value& a) {
  // exact erf form; smooth to all orders
  return cmul(mul(a, cadd(verf(cmul(a, M_SQRT1_2)), 1.0)), 0.5);
}

namespace {

std::vector<Value> topo_from(const Value& root) {
  std::vector<Value> topo;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Value, bool>> st;
  st.emplace_back(root, false);
  while (!st.empty()) {
    auto [n, processed] = st.back();
    st.pop_back();
    if (processed) {
      topo.push_back(n);
      continue;
    }
    if (!n || !n->rg || visited.count(n.get())) continue;
    visited.insert(n.get());
    st.emplace_back(n, true);
    if (n->a && n->a->rg && !visited.count(n->a.get())) st.emplace_back(n->a, false);
    if (n->b && n->b->rg && !visited.count(n->b.get())) st.emplace_back(n->b, false);
  }
  return topo;  // parents precede children; root last
}

}  // namespace

void backward(const Value& root) {
  SLAB_REQUIRE(root->val.size() == 1, "backward: root must be scalar");
  if (!root->rg) return;
  std::vector<Value> topo = topo_from(root);
  std::unordered_map<Node*, Mat> adj;
  adj[root.get()] = Mat::Constant(1, 1, 1.0);

  auto accum = [&](const Value& p, Mat contrib) {
    if (!p || !p->rg) return;
    Mat red = reduce_to(contrib, p->val.rows(), p->val.cols());
    auto it = adj.find(p.get());
    if (it == adj.end())
      adj.emplace(p.get(), std::move(red));
    else
      it->second += red;
  };

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = it->get();
    auto git = adj.find(n);
    if (git == adj.end()) continue;
    Mat g = std::move(git->second);
    adj.erase(git);
    const Value& a = n->a;
    const Value& b = n->b;
    switch (n->op) {
      case Op::kLeaf:
        if (!n->grad_set) {
          n->grad = g;
          n->grad_set = true;
        } else {
          n->grad += g;
        }
        if (!n->grad.allFinite()) throw NumericalError("backward: non-finite gradient");
        break;
      case Op::kAdd:
        accum(a, g);
        accum(b, g);
        break;
      case Op::kSub:
        accum(a, g);
        accum(b, -g);
        break;
      case Op::kNeg:
        accum(a, -g);
        break;
      case Op::kMul:
        accum(a, g.cwiseProduct(expand(b->val, g.rows(), g.cols())));
        accum(b, g.cwiseProduct(expand(a->val, g.rows(), g.cols())));
        break;
      case Op::kDiv: {
        Mat be = expand(b->val, g.rows(), g.cols());
        accum(a, g.cwiseQuotient(be));
        accum(b, (-g.cwiseProduct(n->val)).cwiseQuotient(be));
        break;
      }
      case Op::kMatMul:
        accum(a, g * b->val.transpose());
        accum(b, a->val.transpose() * g);
        break;
      case Op::kExp:
        accum(a, g.cwiseProduct(n->val));
        break;
      case Op::kLog:
        accum(a, g.cwiseQuotient(a->val));
        break;
      case Op::kTanh:
        accum(a, g.cwiseProduct((1.0 - n->val.array().square()).matrix()));
        break;
      case Op::kSigmoid:
        accum(a, g.cwiseProduct((n->val.array() * (1.0 - n->val.array())).matrix()));
        break;
      case Op::kErf:
        accum(a, g.cwiseProduct((kTwoOverSqrtPi * (-a->val.array().square()).exp()).matrix()));
        break;
      case Op::kSin:
        accum(a, g.cwiseProduct(a->val.array().cos().matrix()));
        break;
      case Op::kCos:
        accum(a, -g.cwiseProduct(a->val.array().sin().matrix()));
        break;
      case Op::kSqrt:
        accum(a, (0.5 * g.array() / n->val.array()).matrix());
        break;
      case Op::kSquare:
        accum(a, (2.0 * g.array() * a->val.array()).matrix());
        break;
      case Op::kSumAll:
        accum(a, Mat::Constant(a->val.rows(), a->val.cols(), g(0, 0)));
        break;
      case Op::kSumCols:
        accum(a, g.replicate(1, a->val.cols()));
        break;
      case Op::kSumRows:
        accum(a, g.replicate(a->val.rows(), 1));
        break;
      case Op::kSliceCols: {
        Mat z = Mat::Zero(a->val.rows(), a->val.cols());
        z.middleCols(n->i0, n->i1) = g;
        accum(a, std::move(z));
        break;
      }
      case Op::kConcatCols:
        accum(a, g.leftCols(a->val.cols()));
        accum(b, g.rightCols(b->val.cols()));
        break;
      case Op::kTileRows:
        accum(a, g.colwise().sum());
        break;
      case Op::kTileCols:
        accum(a, g.rowwise().sum());
        break;
      case Op::kTranspose:
        accum(a, g.transpose());
        break;
      case Op::kConst:
      case Op::kDetach:
        break;
    }
  }
}

std::vector<Value> grad(const Value& root, const std::vector<Value>& wrt, const Value& seed) {
  SLAB_REQUIRE(seed || root->val.size() == 1, "grad: scalar root or explicit seed required");
  std::unordered_set<Node*> wrt_set;
  for (const auto& w : wrt) wrt_set.insert(w.get());

  // Mark nodes from which some wrt node is reachable via parents.
  std::unordered_map<Node*, bool> reach;
  {
    std::vector<std::pair<Node*, bool>> st;
    st.emplace_back(root.get(), false);
    while (!st.empty()) {
      auto [n, processed] = st.back();
      st.pop_back();
      if (!n) continue;
      if (processed) {
        bool r = wrt_set.count(n) > 0;
        if (!r && n->a) r = reach.count(n->a.get()) && reach[n->a.get()];
        if (!r && n->b) r = r || (reach.count(n->b.get()) && reach[n->b.get()]);
        reach[n] = r;
        continue;
      }
      if (reach.count(n)) continue;
      reach[n] = false;  // placeholder; rewritten on the processed visit
      st.emplace_back(n, true);
      if (wrt_set.count(n)) continue;  // cut: do not look past a wrt node
      if (n->a) st.emplace_back(n->a.get(), false);
      if (n->b) st.emplace_back(n->b.get(), false);
    }
  }

  std::vector<Value> topo = topo_from(root);
  std::unordered_map<Node*, Value> adj;
  adj[root.get()] = seed ? seed : constant(Mat::Constant(1, 1, 1.0));

  auto accum = [&](const Value& p, const Value& contrib) {
    if (!p) return;
    auto rit = reach.find(p.get());
    if (rit == reach.end() || !rit->second) return;
    Value red = reduce_to_node(contrib, p->val.rows(), p->val.cols());
    auto it = adj.find(p.get());
    if (it == adj.end())
      adj.emplace(p.get(), red);
    else
      it->second = add(it->second, red);
  };

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    const Value& vn = *it;
    Node* n = vn.get();
    auto git = adj.find(n);
    if (git == adj.end()) continue;
    if (wrt_set.count(n)) continue;  // harvested below; no propagation through
    Value g = git->second;
    const Value& a = n->a;
    const Value& b = n->b;
    auto ge = [&](Eigen::Index r, Eigen::Index c) { return expand_node(g, r, c); };
    switch (n->op) {
      case Op::kAdd:
        accum(a, g);
        accum(b, g);
        break;
      case Op::kSub:
        accum(a, g);
        accum(b, neg(g));
        break;
      case Op::kNeg:
        accum(a, neg(g));
        break;
      case Op::kMul: {
        Eigen::Index r = n->val.rows(), c = n->val.cols();
        accum(a, mul(ge(r, c), b));
        accum(b, mul(ge(r, c), a));
        break;
      }
      case Op::kDiv: {
        Eigen::Index r = n->val.rows(), c = n->val.cols();
        accum(a, div(ge(r, c), b));
        accum(b, neg(div(mul(ge(r, c), vn), b)));
        break;
      }
      case Op::kMatMul: {
        // adjoint shapes are exact for matmul
        accum(a, matmul(g, transpose(b)));
        accum(b, matmul(transpose(a), g));
        break;
      }
      case Op::kExp:
        accum(a, mul(g, vn));
        break;
      case Op::kLog:
        accum(a, div(g, a));
        break;
      case Op::kTanh:
        accum(a, mul(g, cadd(neg(square(vn)), 1.0)));
        break;
      case Op::kSigmoid:
        accum(a, mul(g, mul(vn, cadd(neg(vn), 1.0))));
        break;
      case Op::kErf:
        accum(a, mul(g, cmul(vexp(neg(square(a))), kTwoOverSqrtPi)));
        break;
      case Op::kSin:
        accum(a, mul(g, vcos(a)));
        break;
      case Op::kCos:
        accum(a, neg(mul(g, vsin(a))));
        break;
      case Op::kSqrt:
        accum(a, div(cmul(g, 0.5), vn));
        break;
      case Op::kSquare:
        accum(a, mul(cmul(g, 2.0), a));
        break;
      case Op::kSumAll:
        accum(a, expand_node(g, a->val.rows(), a->val.cols()));
        break;
      case Op::kSumCols:
        accum(a, tile_cols(g, static_cast<int>(a->val.cols())));
        break;
      case Op::kSumRows:
        accum(a, tile_rows(g, static_cast<int>(a->val.rows())));
        break;
      case Op::kSliceCols: {
        // embed adjoint into zero matrix via concat
        Value out = g;
        int left = n->i0;
        int right = static_cast<int>(a->val.cols()) - n->i0 - n->i1;
        if (left > 0) out = concat_cols(constant(Mat::Zero(g->val.rows(), left)), out);
        if (right > 0) out = concat_cols(out, constant(Mat::Zero(g->val.rows(), right)));
        accum(a, out);
        break;
      }
      case Op::kConcatCols:
        accum(a, slice_cols(g, 0, static_cast<int>(a->val.cols())));
        accum(b, slice_cols(g, static_cast<int>(a->val.cols()), static_cast<int>(b->val.cols())));
        break;
      case Op::kTileRows:
        accum(a, sum_rows(g));
        break;
      case Op::kTileCols:
        accum(a, sum_cols(g));
        break;
      case Op::kTranspose:
        accum(a, transpose(g));
        break;
      default:
        break;
    }
  }

  std::vector<Value> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto it = adj.find(w.get());
    if (it != adj.end())
      out.push_back(it->second);
    else
      out.push_back(constant(Mat::Zero(w->val.rows(), w->val.cols())));
  }
  return out;
}

}  // namespace slab::ad
