#pragma once

// Scalar expression graphs with reverse-mode differentiation. The reverse
// pass appends adjoint nodes to the same graph, so the result of a gradient
// is itself differentiable (needed for parameter gradients of expressions
// that contain input gradients, and for Hessians used by implicit solvers).
//
// Graphs are compiled into a flat instruction tape with register reuse and
// evaluated over a batch of lanes, one lane per data column.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lagrom::diff {

enum class Op : std::uint8_t {
  kConst,
  kVar,
  kAdd,
  kSub,
  kMul,
  kNeg,
  kFma,      // a*b + c
  kPowInt,   // x^n, n >= 0 stored in aux
  kSigmoid,
  kStep,     // 1 for x > 0, else 0
  kRelu,
  kSqrt,
  kDiv,
};

struct Node {
  Op op;
  std::int32_t a = -1;
  std::int32_t b = -1;
  std::int32_t c = -1;
  double aux = 0.0;  // constant value, var ordinal, or integer exponent
};

class Graph {
 public:
  using Id = std::int32_t;

  Id constant(double v) {
    if (v == 0.0 && zero_ >= 0) return zero_;
    if (v == 1.0 && one_ >= 0) return one_;
    Id id = push({Op::kConst, -1, -1, -1, v});
    if (v == 0.0) zero_ = id;
    if (v == 1.0) one_ = id;
    return id;
  }

  Id var() {
    Id id = push({Op::kVar, -1, -1, -1, double(n_vars_)});
    ++n_vars_;
    return id;
  }

  Id add(Id x, Id y) {
    if (is_const(x, 0.0)) return y;
    if (is_const(y, 0.0)) return x;
    if (both_const(x, y)) return constant(cval(x) + cval(y));
    return push({Op::kAdd, x, y});
  }

  Id sub(Id x, Id y) {
    if (is_const(y, 0.0)) return x;
    if (both_const(x, y)) return constant(cval(x) - cval(y));
    if (is_const(x, 0.0)) return neg(y);
    return push({Op::kSub, x, y});
  }

  Id mul(Id x, Id y) {
    if (is_const(x, 0.0) || is_const(y, 0.0)) return constant(0.0);
    if (is_const(x, 1.0)) return y;
    if (is_const(y, 1.0)) return x;
    if (both_const(x, y)) return constant(cval(x) * cval(y));
    return push({Op::kMul, x, y});
  }

  Id neg(Id x) {
    if (node(x).op == Op::kConst) return constant(-cval(x));
    return push({Op::kNeg, x});
  }

  Id fma(Id x, Id y, Id z) {
    if (is_const(x, 0.0) || is_const(y, 0.0)) return z;
    if (both_const(x, y)) return add(constant(cval(x) * cval(y)), z);
    if (is_const(z, 0.0)) return mul(x, y);
    return push({Op::kFma, x, y, z});
  }

  Id powi(Id x, int n) {
    if (n < 0) throw std::invalid_argument("powi: negative exponent");
    if (n == 0) return constant(1.0);
    if (n == 1) return x;
    if (node(x).op == Op::kConst) return constant(std::pow(cval(x), n));
    return push({Op::kPowInt, x, -1, -1, double(n)});
  }

  Id sigmoid(Id x) { return push({Op::kSigmoid, x}); }
  Id step(Id x) { return push({Op::kStep, x}); }
  Id relu(Id x) { return push({Op::kRelu, x}); }
  Id sqrt(Id x) { return push({Op::kSqrt, x}); }

  Id div(Id x, Id y) {
    if (is_const(x, 0.0)) return constant(0.0);
    if (is_const(y, 1.0)) return x;
    if (both_const(x, y)) return constant(cval(x) / cval(y));
    return push({Op::kDiv, x, y});
  }

  // swish(x) = x * sigmoid(x)
  Id swish(Id x) { return mul(x, sigmoid(x)); }

  Id sum(std::span<const Id> terms) {
    if (terms.empty()) return constant(0.0);
    // balanced tree keeps adjoint chains short
    std::vector<Id> cur(terms.begin(), terms.end());
    while (cur.size() > 1) {
      std::vector<Id> next;
      next.reserve((cur.size() + 1) / 2);
      for (std::size_t i = 0; i + 1 < cur.size(); i += 2)
        next.push_back(add(cur[i], cur[i + 1]));
      if (cur.size() % 2) next.push_back(cur.back());
      cur.swap(next);
    }
    return cur[0];
  }

  const Node& node(Id id) const { return nodes_[std::size_t(id)]; }
  std::size_t size() const { return nodes_.size(); }
  int var_count() const { return n_vars_; }
  int var_ordinal(Id id) const {
    assert(node(id).op == Op::kVar);
    return int(node(id).aux);
  }

  // Reverse-mode gradient of a scalar output with respect to `wrt`.
  // Adjoint nodes are appended to this graph; the returned expressions can
  // be evaluated or differentiated again.
  std::vector<Id> gradient(Id output, std::span<const Id> wrt) {
    const std::size_t n = std::size_t(output) + 1;
    std::vector<char> reachable(n, 0);
    {
      std::vector<Id> stack{output};
      reachable[std::size_t(output)] = 1;
      while (!stack.empty()) {
        Id id = stack.back();
        stack.pop_back();
        const Node& nd = nodes_[std::size_t(id)];
        for (Id ch : {nd.a, nd.b, nd.c}) {
          if (ch >= 0 && !reachable[std::size_t(ch)]) {
            reachable[std::size_t(ch)] = 1;
            stack.push_back(ch);
          }
        }
      }
    }
    std::vector<Id> adj(n, Id(-1));
    adj[std::size_t(output)] = constant(1.0);
    auto accumulate = [&](Id child, Id contrib) {
      if (child < 0) return;
      Id& slot = adj[std::size_t(child)];
      slot = (slot < 0) ? contrib : add(slot, contrib);
    };
    // construction order is topological, so descending ids finalize each
    // adjoint before it is consumed
    for (Id id = output; id >= 0; --id) {
      if (!reachable[std::size_t(id)] || adj[std::size_t(id)] < 0) continue;
      const Node nd = nodes_[std::size_t(id)];  // copy: vector may grow
      const Id a = adj[std::size_t(id)];
      switch (nd.op) {
        case Op::kConst:
        case Op::kVar:
          break;
        case Op::kAdd:
          accumulate(nd.a, a);
          accumulate(nd.b, a);
          break;
        case Op::kSub:
          accumulate(nd.a, a);
          accumulate(nd.b, neg(a));
          break;
        case Op::kMul:
          accumulate(nd.a, mul(a, nd.b));
          accumulate(nd.b, mul(a, nd.a));
          break;
        case Op::kNeg:
          accumulate(nd.a, neg(a));
          break;
        case Op::kFma:
          accumulate(nd.a, mul(a, nd.b));
          accumulate(nd.b, mul(a, nd.a));
          accumulate(nd.c, a);
          break;
        case Op::kPowInt: {
          int p = int(nd.aux);
          accumulate(nd.a, mul(a, mul(constant(double(p)), powi(nd.a, p - 1))));
          break;
        }
        case Op::kSigmoid:
          // s' = s (1 - s), reusing the sigmoid node itself
          accumulate(nd.a, mul(a, mul(id, sub(constant(1.0), id))));
          break;
        case Op::kStep:
          break;  // zero a.e.
        case Op::kRelu:
          accumulate(nd.a, mul(a, step(nd.a)));
          break;
        case Op::kSqrt:
          accumulate(nd.a, mul(a, div(constant(0.5), id)));
          break;
        case Op::kDiv:
          accumulate(nd.a, div(a, nd.b));
          accumulate(nd.b, neg(div(mul(a, id), nd.b)));
          break;
      }
    }
    std::vector<Id> out;
    out.reserve(wrt.size());
    for (Id w : wrt) {
      Id g = (std::size_t(w) < n) ? adj[std::size_t(w)] : Id(-1);
      out.push_back(g >= 0 ? g : constant(0.0));
    }
    return out;
  }

 private:
  Id push(Node nd) {
    nodes_.push_back(nd);
    return Id(nodes_.size() - 1);
  }
  bool is_const(Id id, double v) const {
    return node(id).op == Op::kConst && node(id).aux == v;
  }
  bool both_const(Id x, Id y) const {
    return node(x).op == Op::kConst && node(y).op == Op::kConst;
  }
  double cval(Id id) const { return node(id).aux; }

  std::vector<Node> nodes_;
  int n_vars_ = 0;
  Id zero_ = -1;
  Id one_ = -1;
};

// One input binding per graph variable ordinal. `data` points at `batch`
// contiguous doubles, or a single double when `scalar` is set.
struct VarBinding {
  const double* data = nullptr;
  bool scalar = false;
};

// Flat executable form of a set of graph outputs. Register slots are reused
// based on last-use liveness so batched evaluation stays cache-resident.
class Program {
 public:
  Program(const Graph& g, std::span<const Graph::Id> outputs) {
    const std::size_t n = g.size();
    std::vector<char> needed(n, 0);
    {
      std::vector<Graph::Id> stack(outputs.begin(), outputs.end());
      for (Graph::Id id : stack) needed[std::size_t(id)] = 1;
      while (!stack.empty()) {
        Graph::Id id = stack.back();
        stack.pop_back();
        const Node& nd = g.node(id);
        for (Graph::Id ch : {nd.a, nd.b, nd.c}) {
          if (ch >= 0 && !needed[std::size_t(ch)]) {
            needed[std::size_t(ch)] = 1;
            stack.push_back(ch);
          }
        }
      }
    }
    std::vector<Graph::Id> last_use(n, -1);
    for (Graph::Id id = 0; std::size_t(id) < n; ++id) {
      if (!needed[std::size_t(id)]) continue;
      const Node& nd = g.node(id);
      for (Graph::Id ch : {nd.a, nd.b, nd.c})
        if (ch >= 0) last_use[std::size_t(ch)] = id;
    }
    std::vector<char> pinned(n, 0);
    for (Graph::Id id : outputs) pinned[std::size_t(id)] = 1;

    std::vector<std::int32_t> slot_of(n, -1);
    std::vector<std::int32_t> free_slots;
    auto alloc = [&]() -> std::int32_t {
      if (!free_slots.empty()) {
        std::int32_t s = free_slots.back();
        free_slots.pop_back();
        return s;
      }
      return n_slots_++;
    };
    for (Graph::Id id = 0; std::size_t(id) < n; ++id) {
      if (!needed[std::size_t(id)]) continue;
      const Node& nd = g.node(id);
      Instr in;
      in.op = nd.op;
      in.a = nd.a >= 0 ? slot_of[std::size_t(nd.a)] : -1;
      in.b = nd.b >= 0 ? slot_of[std::size_t(nd.b)] : -1;
      in.c = nd.c >= 0 ? slot_of[std::size_t(nd.c)] : -1;
      in.aux = nd.aux;
      // release operands whose final consumer is this node (each at most once)
      for (Graph::Id ch : {nd.a, nd.b, nd.c}) {
        if (ch < 0 || last_use[std::size_t(ch)] != id || pinned[std::size_t(ch)])
          continue;
        last_use[std::size_t(ch)] = -1;
        free_slots.push_back(slot_of[std::size_t(ch)]);
      }
      in.dst = alloc();
      slot_of[std::size_t(id)] = in.dst;
      code_.push_back(in);
    }
    out_slots_.reserve(outputs.size());
    for (Graph::Id id : outputs) out_slots_.push_back(slot_of[std::size_t(id)]);
    n_vars_ = g.var_count();
  }

  std::size_t n_outputs() const { return out_slots_.size(); }
  std::size_t n_instructions() const { return code_.size(); }
  int n_slots() const { return n_slots_; }

  // Evaluates all outputs over `batch` lanes. `out` has row-major layout
  // [output][lane]. `work` is scratch, resized as needed.
  void eval(std::span<const VarBinding> vars, std::size_t batch,
            std::span<double> out, std::vector<double>& work) const {
    if (vars.size() != std::size_t(n_vars_))
      throw std::invalid_argument("Program::eval: wrong number of bindings");
    if (out.size() != n_outputs() * batch)
      throw std::invalid_argument("Program::eval: bad output span");
    const std::size_t B = batch;
    work.resize(std::size_t(n_slots_) * B);
    double* w = work.data();
    auto slot = [&](std::int32_t s) { return w + std::size_t(s) * B; };
    for (const Instr& in : code_) {
      double* d = slot(in.dst);
      switch (in.op) {
        case Op::kConst:
          std::fill(d, d + B, in.aux);
          break;
        case Op::kVar: {
          const VarBinding& vb = vars[std::size_t(in.aux)];
          if (vb.data == nullptr)
            throw std::invalid_argument("Program::eval: unbound variable");
          if (vb.scalar)
            std::fill(d, d + B, *vb.data);
          else
            std::copy(vb.data, vb.data + B, d);
          break;
        }
        case Op::kAdd: {
          const double *x = slot(in.a), *y = slot(in.b);
          for (std::size_t i = 0; i < B; ++i) d[i] = x[i] + y[i];
          break;
        }
        case Op::kSub: {
          const double *x = slot(in.a), *y = slot(in.b);
          for (std::size_t i = 0; i < B; ++i) d[i] = x[i] - y[i];
          break;
        }
        case Op::kMul: {
          const double *x = slot(in.a), *y = slot(in.b);
          for (std::size_t i = 0; i < B; ++i) d[i] = x[i] * y[i];
          break;
        }
        case Op::kNeg: {
          const double* x = slot(in.a);
          for (std::size_t i = 0; i < B; ++i) d[i] = -x[i];
          break;
        }
        case Op::kFma: {
          const double *x = slot(in.a), *y = slot(in.b), *z = slot(in.c);
          for (std::size_t i = 0; i < B; ++i) d[i] = x[i] * y[i] + z[i];
          break;
        }
        case Op::kPowInt: {
          const double* x = slot(in.a);
          const int p = int(in.aux);
          for (std::size_t i = 0; i < B; ++i) {
            double base = x[i], acc = 1.0;
            for (int e = p; e > 0; e >>= 1) {
              if (e & 1) acc *= base;
              base *= base;
            }
            d[i] = acc;
          }
          break;
        }
        case Op::kSigmoid: {
          const double* x = slot(in.a);
          for (std::size_t i = 0; i < B; ++i) d[i] = stable_sigmoid(x[i]);
          break;
        }
        case Op::kStep: {
          const double* x = slot(in.a);
          for (std::size_t i = 0; i < B; ++i) d[i] = x[i] > 0.0 ? 1.0 : 0.0;
          break;
        }
        case Op::kRelu: {
          const double* x = slot(in.a);
          for (std::size_t i = 0; i < B; ++i) d[i] = x[i] > 0.0 ? x[i] : 0.0;
          break;
        }
        case Op::kSqrt: {
          const double* x = slot(in.a);
          for (std::size_t i = 0; i < B; ++i) d[i] = std::sqrt(x[i]);
          break;
        }
        case Op::kDiv: {
          const double *x = slot(in.a), *y = slot(in.b);
          for (std::size_t i = 0; i < B; ++i) d[i] = x[i] / y[i];
          break;
        }
      }
    }
    for (std::size_t k = 0; k < out_slots_.size(); ++k)
      std::copy(slot(out_slots_[k]), slot(out_slots_[k]) + B, out.data() + k * B);
  }

  // Single-lane convenience wrapper; every variable bound to a scalar.
  std::vector<double> eval_scalar(std::span<const double> var_values) const {
    std::vector<VarBinding> vars(var_values.size());
    for (std::size_t i = 0; i < var_values.size(); ++i)
      vars[i] = {&var_values[i], true};
    std::vector<double> out(n_outputs());
    std::vector<double> work;
    eval(vars, 1, out, work);
    return out;
  }

  static double stable_sigmoid(double x) {
    if (x >= 0.0) {
      const double e = std::exp(-x);
      return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
  }

 private:
  struct Instr {
    Op op;
    std::int32_t a, b, c;
    std::int32_t dst;
    double aux;
  };
  std::vector<Instr> code_;
  std::vector<std::int32_t> out_slots_;
  std::int32_t n_slots_ = 0;
  int n_vars_ = 0;
};

struct GradientReport {
  double max_relative_error = 0.0;
  int worst_index = -1;
};

// Compares the reverse-mode gradient of `output` with central differences
// of step `h` at `point`. `inputs` are the graph variables being varied;
// all graph variables must be covered by `point` (indexed by var ordinal).
inline GradientReport check_gradient(Graph& g, Graph::Id output,
                                     std::span<const Graph::Id> inputs,
                                     std::span<const double> point, double h) {
  if (h <= 0.0) throw std::invalid_argument("check_gradient: h must be > 0");
  auto grads = g.gradient(output, inputs);
  std::vector<Graph::Id> outs{output};
  outs.insert(outs.end(), grads.begin(), grads.end());
  Program prog(g, outs);
  Program value_only(g, std::span<const Graph::Id>(&output, 1));

  std::vector<double> x(point.begin(), point.end());
  auto analytic = prog.eval_scalar(x);
  GradientReport rep;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const int ord = g.var_ordinal(inputs[i]);
    const double saved = x[std::size_t(ord)];
    x[std::size_t(ord)] = saved + h;
    const double fp = value_only.eval_scalar(x)[0];
    x[std::size_t(ord)] = saved - h;
    const double fm = value_only.eval_scalar(x)[0];
    x[std::size_t(ord)] = saved;
    const double fd = (fp - fm) / (2.0 * h);
    const double ga = analytic[1 + i];
    const double denom = std::max(std::abs(fd), std::abs(ga));
    const double err = denom < 1e-12 ? 0.0 : std::abs(ga - fd) / denom;
    if (err > rep.max_relative_error) {
      rep.max_relative_error = err;
      rep.worst_index = int(i);
    }
  }
  return rep;
}

// Gradient of a scalar expression with respect to a vector of input
// variables, returned as evaluable expressions.
inline std::vector<Graph::Id> grad_input(Graph& g, Graph::Id f,
                                         std::span<const Graph::Id> x) {
  return g.gradient(f, x);
}

inline std::vector<Graph::Id> grad_params(Graph& g, Graph::Id f,
                                          std::span<const Graph::Id> theta) {
  return g.gradient(f, theta);
}

}  // namespace lagrom::diff
