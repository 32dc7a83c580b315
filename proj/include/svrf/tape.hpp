// Copyright Contributors to the SVRF Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "svrf/parameter_store.hpp"

namespace svrf::ad {

/// Primitive operations recorded on the tape. Higher-level functions
/// (softplus, sigmoid, relu, tanh) are composed from these.
enum class Op : std::uint8_t {
  Const,
  Param,    // differentiable leaf, read from the ParameterStore by name
  Frozen,   // non-differentiable leaf, read from the ParameterStore by name
  Add,
  Mul,
  Neg,
  Recip,
  Exp,
  Log,
  Sin,
  Cos,
  Sqrt,
  Max,
  Sum,      // full reduction to a 1x1 scalar
  MatMul,   // [m,k] x [k,n] contraction
  Reshape,  // metadata-only relabeling of a flat buffer
};

struct NodeRef {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

class Tape;
struct FdCheck;
FdCheck finite_difference_check(const Tape&, const ParameterStore&, NodeRef, double,
                                const std::vector<std::string>* only);

/// Forward-pass results: one flat row-major buffer per node.
class Evaluation {
 public:
  const std::vector<double>& value(NodeRef n) const { return values_.at(n.id); }

  double scalar(NodeRef n) const {
    const auto& v = values_.at(n.id);
    if (v.size() != 1) throw std::invalid_argument("Evaluation::scalar: node is not 1x1");
    return v[0];
  }

 private:
  friend class Tape;
  std::vector<std::vector<double>> values_;
};

/// Reverse-mode tape over 1x1 / row / column / matrix values stored as flat
/// row-major arrays of 64-bit reals. Nodes are created in topological order;
/// evaluation and gradient accumulation both walk the tape in a fixed order,
/// so repeated runs on identical inputs are bitwise identical.
///
/// Elementwise binary ops accept, besides equal shapes, a limited set of
/// implicit expansions: scalar against anything, a 1xC row against an RxC
/// matrix, and an Rx1 column against an RxC matrix.
class Tape {
 public:
  struct Node {
    Op op;
    std::int32_t a = -1;
    std::int32_t b = -1;
    std::int32_t rows = 0;
    std::int32_t cols = 0;
    std::int32_t payload = -1;  // index into const_data_ or names_
  };

  // ---- leaves ----

  NodeRef constant(std::int32_t rows, std::int32_t cols, std::vector<double> data) {
    if (rows <= 0 || cols <= 0) throw std::invalid_argument("constant: non-positive shape");
    if (static_cast<std::size_t>(rows) * cols != data.size())
      throw std::invalid_argument("constant: data size does not match shape");
    const_data_.push_back(std::move(data));
    return push({Op::Const, -1, -1, rows, cols,
                 static_cast<std::int32_t>(const_data_.size() - 1)});
  }

  NodeRef scalar(double v) { return constant(1, 1, {v}); }

  NodeRef param(const std::string& name, std::int32_t rows, std::int32_t cols) {
    return leaf(Op::Param, name, rows, cols);
  }

  NodeRef frozen(const std::string& name, std::int32_t rows, std::int32_t cols) {
    return leaf(Op::Frozen, name, rows, cols);
  }

  // ---- primitives ----

  NodeRef add(NodeRef a, NodeRef b) { return binary(Op::Add, a, b); }
  NodeRef mul(NodeRef a, NodeRef b) { return binary(Op::Mul, a, b); }
  NodeRef max(NodeRef a, NodeRef b) { return binary(Op::Max, a, b); }

  NodeRef neg(NodeRef a) { return unary(Op::Neg, a); }
  NodeRef reciprocal(NodeRef a) { return unary(Op::Recip, a); }
  NodeRef exp(NodeRef a) { return unary(Op::Exp, a); }
  NodeRef log(NodeRef a) { return unary(Op::Log, a); }
  NodeRef sin(NodeRef a) { return unary(Op::Sin, a); }
  NodeRef cos(NodeRef a) { return unary(Op::Cos, a); }
  NodeRef sqrt(NodeRef a) { return unary(Op::Sqrt, a); }

  NodeRef sum(NodeRef a) {
    check(a);
    return push({Op::Sum, a.id, -1, 1, 1, -1});
  }

  NodeRef matmul(NodeRef a, NodeRef b) {
    check(a);
    check(b);
    const Node& na = nodes_[a.id];
    const Node& nb = nodes_[b.id];
    if (na.cols != nb.rows)
      throw std::invalid_argument("matmul: inner dimensions disagree (" +
                                  shape_str(na) + " x " + shape_str(nb) + ")");
    return push({Op::MatMul, a.id, b.id, na.rows, nb.cols, -1});
  }

  NodeRef reshape(NodeRef a, std::int32_t rows, std::int32_t cols) {
    check(a);
    const Node& na = nodes_[a.id];
    if (static_cast<std::int64_t>(rows) * cols !=
        static_cast<std::int64_t>(na.rows) * na.cols)
      throw std::invalid_argument("reshape: element count changes");
    return push({Op::Reshape, a.id, -1, rows, cols, -1});
  }

  // ---- composed helpers ----

  NodeRef sub(NodeRef a, NodeRef b) { return add(a, neg(b)); }

  NodeRef relu(NodeRef a) { return max(a, scalar(0.0)); }

  /// max(x,0) + log(1 + exp(-|x|)); finite for all finite x.
  NodeRef softplus(NodeRef a) {
    NodeRef ax = max(a, neg(a));
    return add(relu(a), log(add(scalar(1.0), exp(neg(ax)))));
  }

  /// exp(x - softplus(x)); equals 1/(1+exp(-x)) without overflow.
  NodeRef sigmoid(NodeRef a) { return exp(sub(a, softplus(a))); }

  NodeRef tanh(NodeRef a) {
    NodeRef two_x = mul(scalar(2.0), a);
    return sub(mul(scalar(2.0), sigmoid(two_x)), scalar(1.0));
  }

  // ---- introspection ----

  std::size_t size() const { return nodes_.size(); }
  std::int32_t rows(NodeRef n) const { return nodes_.at(n.id).rows; }
  std::int32_t cols(NodeRef n) const { return nodes_.at(n.id).cols; }

  // ---- execution ----

  Evaluation forward(const ParameterStore& params) const {
    Evaluation ev;
    ev.values_.resize(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) eval_node(i, params, ev);
    return ev;
  }

  /// Value of a single node after a fresh forward pass.
  std::vector<double> evaluate(const ParameterStore& params, NodeRef out) const {
    check(out);
    return forward(params).value(out);
  }

  /// d(out)/d(entry) for every entry in `params`. Entries the graph never
  /// touches come back as zeros. `out` must be 1x1.
  ParameterStore gradient(const Evaluation& ev, const ParameterStore& params,
                          NodeRef out) const {
    check(out);
    const Node& no = nodes_[out.id];
    if (no.rows != 1 || no.cols != 1)
      throw std::invalid_argument("gradient: output node is not scalar");

    std::vector<std::vector<double>> adj(nodes_.size());
    adj[out.id].assign(1, 1.0);

    ParameterStore grads = ParameterStore::zeros_like(params);

    for (std::int32_t i = out.id; i >= 0; --i) {
      if (adj[i].empty()) continue;
      backprop_node(i, ev, adj, grads);
    }
    return grads;
  }

  ParameterStore gradient(const ParameterStore& params, NodeRef out) const {
    Evaluation ev = forward(params);
    return gradient(ev, params, out);
  }

 private:
  NodeRef push(Node n) {
    nodes_.push_back(n);
    return {static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  NodeRef leaf(Op op, const std::string& name, std::int32_t rows, std::int32_t cols) {
    if (rows <= 0 || cols <= 0) throw std::invalid_argument("leaf: non-positive shape");
    names_.push_back(name);
    return push({op, -1, -1, rows, cols, static_cast<std::int32_t>(names_.size() - 1)});
  }

  void check(NodeRef n) const {
    if (n.id < 0 || static_cast<std::size_t>(n.id) >= nodes_.size())
      throw std::invalid_argument("invalid node reference");
  }

  static std::string shape_str(const Node& n) {
    return std::to_string(n.rows) + "x" + std::to_string(n.cols);
  }

  // Operand layout relative to the result shape of a broadcast binary op.
  enum class Span : std::uint8_t { Full, Scalar, Row, Col };

  static Span classify(const Node& n, std::int32_t r, std::int32_t c) {
    if (n.rows == r && n.cols == c) return Span::Full;
    if (n.rows == 1 && n.cols == 1) return Span::Scalar;
    if (n.rows == 1 && n.cols == c) return Span::Row;
    if (n.cols == 1 && n.rows == r) return Span::Col;
    throw std::invalid_argument("elementwise op: incompatible shapes " +
                                shape_str(n) + " vs " + std::to_string(r) + "x" +
                                std::to_string(c));
  }

  NodeRef binary(Op op, NodeRef a, NodeRef b) {
    check(a);
    check(b);
    const Node& na = nodes_[a.id];
    const Node& nb = nodes_[b.id];
    std::int32_t r = std::max(na.rows, nb.rows);
    std::int32_t c = std::max(na.cols, nb.cols);
    classify(na, r, c);  // throws on incompatibility
    classify(nb, r, c);
    return push({op, a.id, b.id, r, c, -1});
  }

  NodeRef unary(Op op, NodeRef a) {
    check(a);
    const Node& na = nodes_[a.id];
    return push({op, a.id, -1, na.rows, na.cols, -1});
  }

  static std::size_t span_index(Span s, std::int32_t i, std::int32_t j, std::int32_t c) {
    switch (s) {
      case Span::Full: return static_cast<std::size_t>(i) * c + j;
      case Span::Scalar: return 0;
      case Span::Row: return static_cast<std::size_t>(j);
      case Span::Col: return static_cast<std::size_t>(i);
    }
    return 0;
  }

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapMat = Eigen::Map<RowMat>;
  using CMapMat = Eigen::Map<const RowMat>;

  void eval_node(std::size_t i, const ParameterStore& params, Evaluation& ev) const {
    const Node& n = nodes_[i];
    const std::size_t count = static_cast<std::size_t>(n.rows) * n.cols;
    std::vector<double>& out = ev.values_[i];

    switch (n.op) {
      case Op::Const:
        out = const_data_[n.payload];
        return;
      case Op::Param:
      case Op::Frozen: {
        const std::string& name = names_[n.payload];
        if (!params.has(name))
          throw std::invalid_argument("unresolved parameter name: " + name);
        const auto& v = params.values(name);
        if (v.size() != count)
          throw std::invalid_argument("parameter '" + name + "' has " +
                                      std::to_string(v.size()) + " elements, node expects " +
                                      std::to_string(count));
        out = v;
        return;
      }
      case Op::MatMul: {
        const Node& na = nodes_[n.a];
        const Node& nb = nodes_[n.b];
        out.resize(count);
        CMapMat A(ev.values_[n.a].data(), na.rows, na.cols);
        CMapMat B(ev.values_[n.b].data(), nb.rows, nb.cols);
        MapMat C(out.data(), n.rows, n.cols);
        C.noalias() = A * B;
        return;
      }
      case Op::Sum: {
        const auto& av = ev.values_[n.a];
        double acc = 0.0;
        for (double v : av) acc += v;
        out.assign(1, acc);
        return;
      }
      case Op::Reshape:
        out = ev.values_[n.a];
        return;
      case Op::Add:
      case Op::Mul:
      case Op::Max: {
        const Node& na = nodes_[n.a];
        const Node& nb = nodes_[n.b];
        Span sa = classify(na, n.rows, n.cols);
        Span sb = classify(nb, n.rows, n.cols);
        const auto& av = ev.values_[n.a];
        const auto& bv = ev.values_[n.b];
        out.resize(count);
        if (sa == Span::Full && sb == Span::Full) {
          // same-shape fast path
          if (n.op == Op::Add)
            for (std::size_t k = 0; k < count; ++k) out[k] = av[k] + bv[k];
          else if (n.op == Op::Mul)
            for (std::size_t k = 0; k < count; ++k) out[k] = av[k] * bv[k];
          else
            for (std::size_t k = 0; k < count; ++k) out[k] = av[k] >= bv[k] ? av[k] : bv[k];
          return;
        }
        for (std::int32_t r = 0; r < n.rows; ++r) {
          for (std::int32_t c = 0; c < n.cols; ++c) {
            double x = av[span_index(sa, r, c, n.cols)];
            double y = bv[span_index(sb, r, c, n.cols)];
            double v = n.op == Op::Add ? x + y : n.op == Op::Mul ? x * y : (x >= y ? x : y);
            out[static_cast<std::size_t>(r) * n.cols + c] = v;
          }
        }
        return;
      }
      default: {
        const auto& av = ev.values_[n.a];
        out.resize(count);
        switch (n.op) {
          case Op::Neg:
            for (std::size_t k = 0; k < count; ++k) out[k] = -av[k];
            return;
          case Op::Recip:
            for (std::size_t k = 0; k < count; ++k) out[k] = 1.0 / av[k];
            return;
          case Op::Exp:
            for (std::size_t k = 0; k < count; ++k) out[k] = std::exp(av[k]);
            return;
          case Op::Log:
            for (std::size_t k = 0; k < count; ++k) out[k] = std::log(av[k]);
            return;
          case Op::Sin:
            for (std::size_t k = 0; k < count; ++k) out[k] = std::sin(av[k]);
            return;
          case Op::Cos:
            for (std::size_t k = 0; k < count; ++k) out[k] = std::cos(av[k]);
            return;
          case Op::Sqrt:
            for (std::size_t k = 0; k < count; ++k) out[k] = std::sqrt(av[k]);
            return;
          default:
            throw std::logic_error("eval_node: unhandled op");
        }
      }
    }
  }

  static void ensure_adjoint(std::vector<std::vector<double>>& adj, std::int32_t id,
                             std::size_t count) {
    if (adj[id].empty()) adj[id].assign(count, 0.0);
  }

  void backprop_node(std::int32_t i, const Evaluation& ev,
                     std::vector<std::vector<double>>& adj,
                     ParameterStore& grads) const {
    const Node& n = nodes_[i];
    const std::vector<double>& g = adj[i];
    const std::size_t count = g.size();

    switch (n.op) {
      case Op::Const:
      case Op::Frozen:
        return;
      case Op::Param: {
        auto& dst = grads.values(names_[n.payload]);
        for (std::size_t k = 0; k < count; ++k) dst[k] += g[k];
        return;
      }
      case Op::Sum: {
        const Node& na = nodes_[n.a];
        const std::size_t ac = static_cast<std::size_t>(na.rows) * na.cols;
        ensure_adjoint(adj, n.a, ac);
        for (std::size_t k = 0; k < ac; ++k) adj[n.a][k] += g[0];
        return;
      }
      case Op::Reshape: {
        ensure_adjoint(adj, n.a, count);
        for (std::size_t k = 0; k < count; ++k) adj[n.a][k] += g[k];
        return;
      }
      case Op::MatMul: {
        const Node& na = nodes_[n.a];
        const Node& nb = nodes_[n.b];
        ensure_adjoint(adj, n.a, static_cast<std::size_t>(na.rows) * na.cols);
        ensure_adjoint(adj, n.b, static_cast<std::size_t>(nb.rows) * nb.cols);
        CMapMat G(g.data(), n.rows, n.cols);
        CMapMat A(ev.values_[n.a].data(), na.rows, na.cols);
        CMapMat B(ev.values_[n.b].data(), nb.rows, nb.cols);
        MapMat dA(adj[n.a].data(), na.rows, na.cols);
        MapMat dB(adj[n.b].data(), nb.rows, nb.cols);
        dA.noalias() += G * B.transpose();
        dB.noalias() += A.transpose() * G;
        return;
      }
      case Op::Add:
      case Op::Mul:
      case Op::Max: {
        const Node& na = nodes_[n.a];
        const Node& nb = nodes_[n.b];
        Span sa = classify(na, n.rows, n.cols);
        Span sb = classify(nb, n.rows, n.cols);
        const auto& av = ev.values_[n.a];
        const auto& bv = ev.values_[n.b];
        ensure_adjoint(adj, n.a, static_cast<std::size_t>(na.rows) * na.cols);
        ensure_adjoint(adj, n.b, static_cast<std::size_t>(nb.rows) * nb.cols);
        for (std::int32_t r = 0; r < n.rows; ++r) {
          for (std::int32_t c = 0; c < n.cols; ++c) {
            const std::size_t ko = static_cast<std::size_t>(r) * n.cols + c;
            const std::size_t ka = span_index(sa, r, c, n.cols);
            const std::size_t kb = span_index(sb, r, c, n.cols);
            const double go = g[ko];
            if (n.op == Op::Add) {
              adj[n.a][ka] += go;
              adj[n.b][kb] += go;
            } else if (n.op == Op::Mul) {
              adj[n.a][ka] += go * bv[kb];
              adj[n.b][kb] += go * av[ka];
            } else {
              // ties route to the first operand
              if (av[ka] >= bv[kb])
                adj[n.a][ka] += go;
              else
                adj[n.b][kb] += go;
            }
          }
        }
        return;
      }
      default: {
        const auto& av = ev.values_[n.a];
        const auto& ov = ev.values_[i];
        ensure_adjoint(adj, n.a, count);
        auto& da = adj[n.a];
        switch (n.op) {
          case Op::Neg:
            for (std::size_t k = 0; k < count; ++k) da[k] -= g[k];
            return;
          case Op::Recip:
            for (std::size_t k = 0; k < count; ++k) da[k] -= g[k] * ov[k] * ov[k];
            return;
          case Op::Exp:
            for (std::size_t k = 0; k < count; ++k) da[k] += g[k] * ov[k];
            return;
          case Op::Log:
            for (std::size_t k = 0; k < count; ++k) da[k] += g[k] / av[k];
            return;
          case Op::Sin:
            for (std::size_t k = 0; k < count; ++k) da[k] += g[k] * std::cos(av[k]);
            return;
          case Op::Cos:
            for (std::size_t k = 0; k < count; ++k) da[k] -= g[k] * std::sin(av[k]);
            return;
          case Op::Sqrt:
            for (std::size_t k = 0; k < count; ++k) da[k] += g[k] * 0.5 / ov[k];
            return;
          default:
            throw std::logic_error("backprop_node: unhandled op");
        }
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> const_data_;
  std::vector<std::string> names_;

  friend FdCheck finite_difference_check(const Tape&, const ParameterStore&, NodeRef,
                                         double, const std::vector<std::string>*);
};

/// Result of a central-difference gradient comparison.
struct FdCheck {
  double max_rel_error = 0.0;
  /// Set when the base evaluation sits close to a max() tie, where the
  /// two-sided difference straddles a kink and the comparison means little.
  bool unreliable = false;
};

/// Compares gradient() against central finite differences. Relative error
/// denominator is max(|analytic|, |numeric|, 1e-8). `only` restricts the
/// perturbed entries, e.g. to skip frozen leaves the graph does not
/// differentiate through; by default every entry is perturbed.
inline FdCheck finite_difference_check(const Tape& tape, const ParameterStore& params,
                                       NodeRef out, double step,
                                       const std::vector<std::string>* only = nullptr) {
  if (step <= 0.0) throw std::invalid_argument("finite_difference_check: step must be > 0");
  Evaluation base = tape.forward(params);
  ParameterStore analytic = tape.gradient(base, params, out);

  FdCheck result;
  for (std::size_t i = 0; i < tape.nodes_.size() && !result.unreliable; ++i) {
    const Tape::Node& n = tape.nodes_[i];
    if (n.op != Op::Max) continue;
    const Tape::Node& na = tape.nodes_[n.a];
    const Tape::Node& nb = tape.nodes_[n.b];
    Tape::Span sa = Tape::classify(na, n.rows, n.cols);
    Tape::Span sb = Tape::classify(nb, n.rows, n.cols);
    const auto& av = base.value({n.a});
    const auto& bv = base.value({n.b});
    for (std::int32_t r = 0; r < n.rows && !result.unreliable; ++r) {
      for (std::int32_t c = 0; c < n.cols; ++c) {
        double x = av[Tape::span_index(sa, r, c, n.cols)];
        double y = bv[Tape::span_index(sb, r, c, n.cols)];
        if (std::abs(x - y) <= 8.0 * step * std::max({1.0, std::abs(x), std::abs(y)})) {
          result.unreliable = true;
          break;
        }
      }
    }
  }

  ParameterStore work = params;
  const std::vector<std::string> names = only ? *only : params.names();
  for (const auto& name : names) {
    auto& vals = work.values(name);
    for (std::size_t k = 0; k < vals.size(); ++k) {
      const double saved = vals[k];
      vals[k] = saved + step;
      double fp = tape.forward(work).scalar(out);
      vals[k] = saved - step;
      double fm = tape.forward(work).scalar(out);
      vals[k] = saved;
      const double numeric = (fp - fm) / (2.0 * step);
      const double anal = analytic.values(name)[k];
      const double denom = std::max({std::abs(anal), std::abs(numeric), 1e-8});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(anal - numeric) / denom);
    }
  }
  return result;
}

}  // namespace svrf::ad
