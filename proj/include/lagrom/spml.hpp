#pragma once

// Polynomial-augmented MLP parametrizations of the reduced kinetic-energy
// correction, potential nonlinearity, and dissipation nonlinearity, plus the
// training loop. The per-batch loss and its parameter gradient are compiled
// once into flat programs (see diff.hpp) and evaluated with one lane per
// data column, which is what makes single-core training affordable.

#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "lagrom/diff.hpp"
#include "lagrom/lopinf.hpp"
#include "lagrom/reduce.hpp"

namespace lagrom::spml {

using MultiIndex = std::vector<int>;

// All multi-indices over r variables whose total degree lies in `degrees`,
// in a fixed deterministic order (ascending degree, then first variable's
// exponent descending): r=2, degree 2 -> (2,0), (1,1), (0,2).
inline std::vector<MultiIndex> monomial_basis(int r, const std::set<int>& degrees) {
  if (r < 1) throw std::invalid_argument("monomial_basis: r must be >= 1");
  std::vector<MultiIndex> out;
  MultiIndex cur(std::size_t(r), 0);
  std::function<void(int, int)> gen = [&](int pos, int remaining) {
    if (pos == r - 1) {
      cur[std::size_t(pos)] = remaining;
      out.push_back(cur);
      return;
    }
    for (int k = remaining; k >= 0; --k) {
      cur[std::size_t(pos)] = k;
      gen(pos + 1, remaining - k);
    }
  };
  for (int d : degrees) {
    if (d < 1) throw std::invalid_argument("monomial_basis: degree must be >= 1");
    gen(0, d);
  }
  return out;
}

struct Mlp {
  std::vector<int> widths;  // input, hidden..., 1
  std::vector<Mat> W;
  std::vector<Vec> b;
  double out_scale = 0.0;  // the trainable scalar multiplying the network

  int param_count() const {
    int n = 1;  // out_scale
    for (const auto& w : W) n += int(w.size());
    for (const auto& v : b) n += int(v.size());
    return n;
  }
};

// polynomial + scaled-MLP scalar function of an r-vector
struct ScalarFunction {
  std::vector<MultiIndex> terms;
  Vec coeffs;
  std::vector<Mlp> mlps;

  int param_count() const {
    int n = int(coeffs.size());
    for (const auto& m : mlps) n += m.param_count();
    return n;
  }
};

struct Architecture {
  std::vector<int> hidden{64, 30, 20, 6};
  int n_mlps = 1;
  std::set<int> degrees{2, 3, 4};
  bool use_TNN = false;
  bool use_FNN = true;
};

struct SpmlModel {
  int r = 0;
  bool use_TNN = false;
  bool use_FNN = true;
  std::vector<MultiIndex> T_terms;  // degree exactly 2
  Vec T_coeffs;
  ScalarFunction U;
  ScalarFunction F;

  int param_count() const {
    return int(T_coeffs.size()) + U.param_count() + F.param_count();
  }

  // flattening order: T coefficients, U coefficients, U MLPs (per layer W
  // row-major then b, finally out_scale), then the same for F
  Vec pack() const {
    Vec theta(param_count());
    int t = 0;
    for (int i = 0; i < T_coeffs.size(); ++i) theta(t++) = T_coeffs(i);
    auto pack_fn = [&](const ScalarFunction& f) {
      for (int i = 0; i < f.coeffs.size(); ++i) theta(t++) = f.coeffs(i);
      for (const auto& m : f.mlps) {
        for (std::size_t l = 0; l < m.W.size(); ++l) {
          for (int i = 0; i < m.W[l].rows(); ++i)
            for (int j = 0; j < m.W[l].cols(); ++j) theta(t++) = m.W[l](i, j);
          for (int i = 0; i < m.b[l].size(); ++i) theta(t++) = m.b[l](i);
        }
        theta(t++) = m.out_scale;
      }
    };
    pack_fn(U);
    pack_fn(F);
    return theta;
  }

  void unpack(const Vec& theta) {
    if (theta.size() != param_count())
      throw DimensionMismatch("SpmlModel::unpack: wrong parameter count");
    int t = 0;
    for (int i = 0; i < T_coeffs.size(); ++i) T_coeffs(i) = theta(t++);
    auto unpack_fn = [&](ScalarFunction& f) {
      for (int i = 0; i < f.coeffs.size(); ++i) f.coeffs(i) = theta(t++);
      for (auto& m : f.mlps) {
        for (std::size_t l = 0; l < m.W.size(); ++l) {
          for (int i = 0; i < m.W[l].rows(); ++i)
            for (int j = 0; j < m.W[l].cols(); ++j) m.W[l](i, j) = theta(t++);
          for (int i = 0; i < m.b[l].size(); ++i) m.b[l](i) = theta(t++);
        }
        m.out_scale = theta(t++);
      }
    };
    unpack_fn(U);
    unpack_fn(F);
  }
};

inline Mlp make_mlp(int input, const std::vector<int>& hidden) {
  Mlp m;
  m.widths.push_back(input);
  for (int h : hidden) {
    if (h < 1) throw std::invalid_argument("make_mlp: bad hidden width");
    m.widths.push_back(h);
  }
  m.widths.push_back(1);
  for (std::size_t l = 0; l + 1 < m.widths.size(); ++l) {
    m.W.emplace_back(Mat::Zero(m.widths[l + 1], m.widths[l]));
    m.b.emplace_back(Vec::Zero(m.widths[l + 1]));
  }
  return m;
}

inline SpmlModel make_model(int r, const Architecture& arch) {
  if (r < 1) throw std::invalid_argument("make_model: r must be >= 1");
  if (arch.n_mlps < 0) throw std::invalid_argument("make_model: n_mlps < 0");
  SpmlModel m;
  m.r = r;
  m.use_TNN = arch.use_TNN;
  m.use_FNN = arch.use_FNN;
  if (arch.use_TNN) {
    m.T_terms = monomial_basis(r, {2});
    m.T_coeffs = Vec::Zero(long(m.T_terms.size()));
  }
  m.U.terms = monomial_basis(r, arch.degrees);
  m.U.coeffs = Vec::Zero(long(m.U.terms.size()));
  for (int i = 0; i < arch.n_mlps; ++i) m.U.mlps.push_back(make_mlp(r, arch.hidden));
  if (arch.use_FNN) {
    m.F.terms = monomial_basis(r, arch.degrees);
    m.F.coeffs = Vec::Zero(long(m.F.terms.size()));
    for (int i = 0; i < arch.n_mlps; ++i) m.F.mlps.push_back(make_mlp(r, arch.hidden));
  }
  return m;
}

// Hidden weights uniform on [-b, b], b = sqrt(6/(fan_in+fan_out)); biases,
// polynomial coefficients, and output scales stay zero so the model starts
// exactly at the linear prior.
inline void glorot_init(SpmlModel& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto init_fn = [&](ScalarFunction& f) {
    for (auto& m : f.mlps)
      for (std::size_t l = 0; l < m.W.size(); ++l) {
        const double bound =
            std::sqrt(6.0 / double(m.widths[l] + m.widths[l + 1]));
        std::uniform_real_distribution<double> uni(-bound, bound);
        for (int i = 0; i < m.W[l].rows(); ++i)
          for (int j = 0; j < m.W[l].cols(); ++j) m.W[l](i, j) = uni(rng);
      }
  };
  init_fn(model.U);
  init_fn(model.F);
}

namespace detail {

inline double eval_poly(const std::vector<MultiIndex>& terms, const Vec& c,
                        const Vec& x) {
  double acc = 0.0;
  for (std::size_t t = 0; t < terms.size(); ++t) {
    double mono = 1.0;
    for (int i = 0; i < x.size(); ++i)
      for (int k = 0; k < terms[t][std::size_t(i)]; ++k) mono *= x(i);
    acc += c(long(t)) * mono;
  }
  return acc;
}

inline double eval_mlp(const Mlp& m, const Vec& x) {
  Vec h = x;
  for (std::size_t l = 0; l < m.W.size(); ++l) {
    Vec z = m.W[l] * h + m.b[l];
    if (l + 1 < m.W.size())
      for (int i = 0; i < z.size(); ++i)
        z(i) = z(i) * diff::Program::stable_sigmoid(z(i));  // swish
    h = std::move(z);
  }
  return m.out_scale * h(0);
}

inline double eval_fn(const ScalarFunction& f, const Vec& x) {
  double acc = eval_poly(f.terms, f.coeffs, x);
  for (const auto& m : f.mlps) acc += eval_mlp(m, x);
  return acc;
}

}  // namespace detail

inline double eval_U_NN(const SpmlModel& model, const Vec& q) {
  if (q.size() != model.r) throw DimensionMismatch("eval_U_NN: bad input size");
  return detail::eval_fn(model.U, q);
}

inline double eval_F_NN(const SpmlModel& model, const Vec& v) {
  if (v.size() != model.r) throw DimensionMismatch("eval_F_NN: bad input size");
  return detail::eval_fn(model.F, v);
}

inline double eval_T_NN(const SpmlModel& model, const Vec& v) {
  if (v.size() != model.r) throw DimensionMismatch("eval_T_NN: bad input size");
  return detail::eval_poly(model.T_terms, model.T_coeffs, v);
}

// constant Hessian of the quadratic T correction
inline Mat m_nn(const SpmlModel& model) {
  Mat M = Mat::Zero(model.r, model.r);
  for (std::size_t t = 0; t < model.T_terms.size(); ++t) {
    const auto& mi = model.T_terms[t];
    int i = -1, j = -1;
    for (int k = 0; k < model.r; ++k) {
      if (mi[std::size_t(k)] == 2) i = j = k;
      if (mi[std::size_t(k)] == 1) (i < 0 ? i : j) = k;
    }
    if (i == j)
      M(i, i) += 2.0 * model.T_coeffs(long(t));
    else {
      M(i, j) += model.T_coeffs(long(t));
      M(j, i) += model.T_coeffs(long(t));
    }
  }
  return M;
}

struct TrainConfig {
  double eta = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch = 250;
  int epochs = 0;
  std::uint64_t seed = 0;
  double penalty_weight = 1.0;

  void validate() const {
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0))
      throw std::invalid_argument("TrainConfig: decay rates must be in (0,1)");
    if (batch < 1) throw std::invalid_argument("TrainConfig: batch must be >= 1");
    if (eta <= 0.0) throw std::invalid_argument("TrainConfig: eta must be > 0");
    if (epochs < 0) throw std::invalid_argument("TrainConfig: negative epochs");
  }
};

struct NonFiniteLoss : std::runtime_error {
  int epoch;
  int batch_index;
  NonFiniteLoss(int e, int b)
      : std::runtime_error("training loss became non-finite at epoch " +
                           std::to_string(e) + ", batch " + std::to_string(b)),
        epoch(e), batch_index(b) {}
};

namespace detail {

// Builds the graph nodes of one SpmlModel. Parameter nodes are created in
// pack() order, either as variables (training) or as constants (frozen
// model, letting constant folding prune inactive branches).
class ModelGraphBuilder {
 public:
  ModelGraphBuilder(diff::Graph& g, const SpmlModel& model, bool as_vars)
      : g_(g), model_(model) {
    const Vec theta = model.pack();
    theta_ids_.reserve(std::size_t(theta.size()));
    for (int i = 0; i < theta.size(); ++i)
      theta_ids_.push_back(as_vars ? g_.var() : g_.constant(theta(i)));
    nT_ = int(model.T_coeffs.size());
    nUc_ = int(model.U.coeffs.size());
    nU_ = model.U.param_count();
  }

  const std::vector<diff::Graph::Id>& theta_ids() const { return theta_ids_; }

  diff::Graph::Id T_value(std::span<const diff::Graph::Id> v) const {
    std::vector<diff::Graph::Id> terms;
    for (std::size_t t = 0; t < model_.T_terms.size(); ++t)
      terms.push_back(g_.mul(theta_ids_[t], monomial(model_.T_terms[t], v)));
    return g_.sum(terms);
  }

  diff::Graph::Id U_value(std::span<const diff::Graph::Id> q) const {
    return scalar_fn(model_.U, q, nT_);
  }
  diff::Graph::Id F_value(std::span<const diff::Graph::Id> v) const {
    return scalar_fn(model_.F, v, nT_ + nU_);
  }

  // accumulates (M_NN x)_i into res[i]
  void add_mnn_times(std::span<const diff::Graph::Id> x,
                     std::vector<std::vector<diff::Graph::Id>>& res) const {
    for (std::size_t t = 0; t < model_.T_terms.size(); ++t) {
      const auto& mi = model_.T_terms[t];
      int i = -1, j = -1;
      for (int k = 0; k < model_.r; ++k) {
        if (mi[std::size_t(k)] == 2) i = j = k;
        if (mi[std::size_t(k)] == 1) (i < 0 ? i : j) = k;
      }
      const diff::Graph::Id z = theta_ids_[t];
      if (i == j) {
        res[std::size_t(i)].push_back(
            g_.mul(g_.constant(2.0), g_.mul(z, x[std::size_t(i)])));
      } else {
        res[std::size_t(i)].push_back(g_.mul(z, x[std::size_t(j)]));
        res[std::size_t(j)].push_back(g_.mul(z, x[std::size_t(i)]));
      }
    }
  }

 private:
  diff::Graph::Id monomial(const MultiIndex& mi,
                           std::span<const diff::Graph::Id> x) const {
    diff::Graph::Id acc = g_.constant(1.0);
    for (std::size_t i = 0; i < mi.size(); ++i)
      if (mi[i] > 0) acc = g_.mul(acc, g_.powi(x[i], mi[i]));
    return acc;
  }

  diff::Graph::Id scalar_fn(const ScalarFunction& f,
                            std::span<const diff::Graph::Id> x,
                            int offset) const {
    std::vector<diff::Graph::Id> parts;
    for (std::size_t t = 0; t < f.terms.size(); ++t)
      parts.push_back(
          g_.mul(theta_ids_[std::size_t(offset) + t], monomial(f.terms[t], x)));
    int cur = offset + int(f.coeffs.size());
    for (const auto& m : f.mlps) {
      std::vector<diff::Graph::Id> h(x.begin(), x.end());
      for (std::size_t l = 0; l < m.W.size(); ++l) {
        std::vector<diff::Graph::Id> z(std::size_t(m.widths[l + 1]));
        const int wsz = int(m.W[l].size());
        for (int i = 0; i < m.W[l].rows(); ++i) {
          diff::Graph::Id acc =
              theta_ids_[std::size_t(cur + wsz + i)];  // bias b_i
          for (int j = 0; j < m.W[l].cols(); ++j) {
            const auto w =
                theta_ids_[std::size_t(cur + i * int(m.W[l].cols()) + j)];
            acc = g_.fma(w, h[std::size_t(j)], acc);
          }
          z[std::size_t(i)] =
              (l + 1 < m.W.size()) ? g_.swish(acc) : acc;
        }
        cur += wsz + int(m.b[l].size());
        h = std::move(z);
      }
      parts.push_back(g_.mul(theta_ids_[std::size_t(cur)], h[0]));  // out_scale
      ++cur;
    }
    return g_.sum(parts);
  }

  diff::Graph& g_;
  const SpmlModel& model_;
  std::vector<diff::Graph::Id> theta_ids_;
  int nT_ = 0, nUc_ = 0, nU_ = 0;
};

}  // namespace detail

// Compiled Euler-Lagrange residual loss for a fixed model shape and fixed
// linear operators. Variable ordinals: q (0..r-1), v (r..2r-1),
// a (2r..3r-1), then theta in pack() order.
class CompiledLoss {
 public:
  CompiledLoss(const SpmlModel& shape, const Mat& Khat, const Mat& Chat)
      : r_(shape.r), n_theta_(shape.param_count()) {
    if (Khat.rows() != r_ || Khat.cols() != r_)
      throw DimensionMismatch("CompiledLoss: bad stiffness shape");
    const bool damped = Chat.size() > 0;
    if (damped && (Chat.rows() != r_ || Chat.cols() != r_))
      throw DimensionMismatch("CompiledLoss: bad damping shape");

    diff::Graph g;
    const auto rs = static_cast<std::size_t>(r_);
    std::vector<diff::Graph::Id> q(rs), v(rs), a(rs);
    for (auto& id : q) id = g.var();
    for (auto& id : v) id = g.var();
    for (auto& id : a) id = g.var();
    detail::ModelGraphBuilder mb(g, shape, /*as_vars=*/true);

    std::vector<std::vector<diff::Graph::Id>> res(rs);
    for (int i = 0; i < r_; ++i) {
      res[std::size_t(i)].push_back(a[std::size_t(i)]);
      for (int j = 0; j < r_; ++j) {
        if (Khat(i, j) != 0.0)
          res[std::size_t(i)].push_back(
              g.mul(g.constant(Khat(i, j)), q[std::size_t(j)]));
        if (damped && Chat(i, j) != 0.0)
          res[std::size_t(i)].push_back(
              g.mul(g.constant(Chat(i, j)), v[std::size_t(j)]));
      }
    }
    if (shape.use_TNN) mb.add_mnn_times(a, res);

    diff::Graph::Id u = mb.U_value(q);
    auto gradU = g.gradient(u, q);
    for (int i = 0; i < r_; ++i)
      res[std::size_t(i)].push_back(gradU[std::size_t(i)]);

    diff::Graph::Id f_nn = g.constant(0.0);
    if (shape.use_FNN) {
      f_nn = mb.F_value(v);
      auto gradF = g.gradient(f_nn, v);
      for (int i = 0; i < r_; ++i)
        res[std::size_t(i)].push_back(gradF[std::size_t(i)]);
    }

    std::vector<diff::Graph::Id> res_ids, sq;
    for (int i = 0; i < r_; ++i) {
      res_ids.push_back(g.sum(res[std::size_t(i)]));
      sq.push_back(g.mul(res_ids.back(), res_ids.back()));
    }
    diff::Graph::Id s = g.sum(sq);

    // positivity penalties on the learned energies
    std::vector<diff::Graph::Id> pen;
    if (shape.use_TNN) {
      std::vector<diff::Graph::Id> kin;
      for (int i = 0; i < r_; ++i)
        kin.push_back(g.mul(g.constant(0.5),
                            g.mul(v[std::size_t(i)], v[std::size_t(i)])));
      kin.push_back(mb.T_value(v));
      diff::Graph::Id neg_kin = g.neg(g.sum(kin));
      diff::Graph::Id rk = g.relu(neg_kin);
      pen.push_back(g.mul(rk, rk));
    }
    if (shape.use_FNN || damped) {
      std::vector<diff::Graph::Id> fhat;
      if (damped)
        for (int i = 0; i < r_; ++i)
          for (int j = 0; j < r_; ++j)
            if (Chat(i, j) != 0.0)
              fhat.push_back(g.mul(g.constant(0.5 * Chat(i, j)),
                                   g.mul(v[std::size_t(i)], v[std::size_t(j)])));
      if (shape.use_FNN) fhat.push_back(f_nn);
      diff::Graph::Id rf = g.relu(g.neg(g.sum(fhat)));
      pen.push_back(g.mul(rf, rf));
    }
    has_penalty_ = !pen.empty();
    diff::Graph::Id p = has_penalty_ ? g.sum(pen) : g.constant(0.0);

    std::vector<diff::Graph::Id> fwd_outs{s, p};
    forward_.emplace(g, fwd_outs);
    residual_.emplace(g, res_ids);

    auto gs = g.gradient(s, mb.theta_ids());
    std::vector<diff::Graph::Id> grad_outs{s, p};
    grad_outs.insert(grad_outs.end(), gs.begin(), gs.end());
    if (has_penalty_) {
      auto gp = g.gradient(p, mb.theta_ids());
      grad_outs.insert(grad_outs.end(), gp.begin(), gp.end());
    }
    grad_.emplace(g, grad_outs);
  }

  int r() const { return r_; }
  int n_theta() const { return n_theta_; }

  // loss = sqrt(S) + w * sqrt(P) over all columns
  double loss(const Vec& theta, const Mat& Q, const Mat& V, const Mat& A,
              double penalty_weight) const {
    double S = 0.0, P = 0.0;
    run(*forward_, theta, Q, V, A, [&](std::span<const double> out, std::size_t B) {
      for (std::size_t l = 0; l < B; ++l) S += out[l];
      for (std::size_t l = 0; l < B; ++l) P += out[B + l];
    });
    return std::sqrt(S) + penalty_weight * std::sqrt(P);
  }

  double loss_grad(const Vec& theta, const Mat& Q, const Mat& V, const Mat& A,
                   double penalty_weight, Vec& grad) const {
    double S = 0.0, P = 0.0;
    Vec gS = Vec::Zero(n_theta_), gP = Vec::Zero(n_theta_);
    const std::size_t nt = std::size_t(n_theta_);
    run(*grad_, theta, Q, V, A, [&](std::span<const double> out, std::size_t B) {
      for (std::size_t l = 0; l < B; ++l) S += out[l];
      for (std::size_t l = 0; l < B; ++l) P += out[B + l];
      for (std::size_t k = 0; k < nt; ++k) {
        const double* row = out.data() + (2 + k) * B;
        double acc = 0.0;
        for (std::size_t l = 0; l < B; ++l) acc += row[l];
        gS(long(k)) += acc;
      }
      if (has_penalty_)
        for (std::size_t k = 0; k < nt; ++k) {
          const double* row = out.data() + (2 + nt + k) * B;
          double acc = 0.0;
          for (std::size_t l = 0; l < B; ++l) acc += row[l];
          gP(long(k)) += acc;
        }
    });
    const double seedS = S > 0.0 ? 0.5 / std::sqrt(S) : 0.0;
    const double seedP = P > 0.0 ? 0.5 * penalty_weight / std::sqrt(P) : 0.0;
    grad = seedS * gS + seedP * gP;
    return std::sqrt(S) + penalty_weight * std::sqrt(P);
  }

  Mat residuals(const Vec& theta, const Mat& Q, const Mat& V,
                const Mat& A) const {
    Mat R(r_, Q.cols());
    long col = 0;
    run(*residual_, theta, Q, V, A, [&](std::span<const double> out, std::size_t B) {
      for (int i = 0; i < r_; ++i)
        for (std::size_t l = 0; l < B; ++l)
          R(i, col + long(l)) = out[std::size_t(i) * B + l];
      col += long(B);
    });
    return R;
  }

 private:
  template <class Sink>
  void run(const diff::Program& prog, const Vec& theta, const Mat& Q,
           const Mat& V, const Mat& A, Sink&& sink) const {
    if (theta.size() != n_theta_)
      throw DimensionMismatch("CompiledLoss: wrong parameter count");
    if (Q.rows() != r_ || V.rows() != r_ || A.rows() != r_ ||
        Q.cols() != V.cols() || Q.cols() != A.cols())
      throw DimensionMismatch("CompiledLoss: misaligned batch");
    const long N = Q.cols();
    constexpr std::size_t kChunk = 64;
    std::vector<double> buf(std::size_t(3 * r_) * kChunk);
    std::vector<double> out(prog.n_outputs() * kChunk);
    std::vector<double> work;
    std::vector<diff::VarBinding> vars(std::size_t(3 * r_ + n_theta_));
    for (int k = 0; k < n_theta_; ++k)
      vars[std::size_t(3 * r_ + k)] = {theta.data() + k, true};
    for (long c0 = 0; c0 < N; c0 += long(kChunk)) {
      const std::size_t B = std::size_t(std::min<long>(long(kChunk), N - c0));
      for (int i = 0; i < r_; ++i)
        for (std::size_t l = 0; l < B; ++l) {
          buf[std::size_t(i) * B + l] = Q(i, c0 + long(l));
          buf[std::size_t(r_ + i) * B + l] = V(i, c0 + long(l));
          buf[std::size_t(2 * r_ + i) * B + l] = A(i, c0 + long(l));
        }
      for (int i = 0; i < 3 * r_; ++i)
        vars[std::size_t(i)] = {buf.data() + std::size_t(i) * B, false};
      std::span<double> out_span(out.data(), prog.n_outputs() * B);
      prog.eval(vars, B, out_span, work);
      sink(std::span<const double>(out_span), B);
    }
  }

  int r_;
  int n_theta_;
  bool has_penalty_ = false;
  std::optional<diff::Program> forward_;
  std::optional<diff::Program> grad_;
  std::optional<diff::Program> residual_;
};

inline Mat lin_K(const lopinf::LinearLagrangianRom& lin) { return lin.K; }
inline Mat lin_C(const lopinf::LinearLagrangianRom& lin) {
  return lin.C ? *lin.C : Mat();
}

// convenience one-shot wrappers over CompiledLoss
inline Mat residual_batch(const SpmlModel& model,
                          const lopinf::LinearLagrangianRom& lin, const Mat& Q,
                          const Mat& V, const Mat& A) {
  CompiledLoss cl(model, lin_K(lin), lin_C(lin));
  return cl.residuals(model.pack(), Q, V, A);
}

inline double loss(const SpmlModel& model, const lopinf::LinearLagrangianRom& lin,
                   const Mat& Q, const Mat& V, const Mat& A,
                   const TrainConfig& cfg) {
  CompiledLoss cl(model, lin_K(lin), lin_C(lin));
  return cl.loss(model.pack(), Q, V, A, cfg.penalty_weight);
}

struct AdamState {
  Vec m, v;
  long t = 0;
};

inline void adam_step(Vec& theta, const Vec& g, AdamState& st,
                      const TrainConfig& cfg) {
  if (st.t == 0) {
    st.m = Vec::Zero(theta.size());
    st.v = Vec::Zero(theta.size());
  }
  ++st.t;
  st.m = cfg.beta1 * st.m + (1.0 - cfg.beta1) * g;
  st.v = cfg.beta2 * st.v.array().matrix() +
         (1.0 - cfg.beta2) * g.array().square().matrix();
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(st.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(st.t));
  theta.array() -= cfg.eta * (st.m.array() / bc1) /
                   ((st.v.array() / bc2).sqrt() + cfg.eps);
}

struct TrainResult {
  SpmlModel model;
  std::vector<double> train_history;  // mean minibatch loss per epoch
  std::vector<double> val_history;
  int best_epoch = -1;
  double best_val = std::numeric_limits<double>::infinity();
};

// Minibatch ADAM on the Euler-Lagrange residual loss; returns the model
// snapshot with the lowest validation loss.
inline TrainResult train(const reduce::ReducedDataset& data,
                         const lopinf::LinearLagrangianRom& lin,
                         const Architecture& arch, const TrainConfig& cfg) {
  cfg.validate();
  const int r = int(data.Qhat.rows());
  TrainResult result;
  result.model = make_model(r, arch);
  glorot_init(result.model, cfg.seed);

  const Mat Qtr = data.train_Q(), Vtr = data.train_Qdot(), Atr = data.train_Qddot();
  const Mat Qv = data.val_Q(), Vv = data.val_Qdot(), Av = data.val_Qddot();
  const long N = Qtr.cols();

  CompiledLoss cl(result.model, lin_K(lin), lin_C(lin));
  Vec theta = result.model.pack();
  Vec best_theta = theta;
  AdamState adam;
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<long> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), 0L);
  Vec grad(theta.size());
  Mat Qb, Vb, Ab;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    int n_batches = 0;
    for (long start = 0; start < N; start += cfg.batch) {
      const long B = std::min<long>(cfg.batch, N - start);
      Qb.resize(r, B);
      Vb.resize(r, B);
      Ab.resize(r, B);
      for (long j = 0; j < B; ++j) {
        const long c = order[std::size_t(start + j)];
        Qb.col(j) = Qtr.col(c);
        Vb.col(j) = Vtr.col(c);
        Ab.col(j) = Atr.col(c);
      }
      const double l =
          cl.loss_grad(theta, Qb, Vb, Ab, cfg.penalty_weight, grad);
      if (!std::isfinite(l) || !grad.allFinite())
        throw NonFiniteLoss(epoch, n_batches);
      adam_step(theta, grad, adam, cfg);
      epoch_loss += l;
      ++n_batches;
    }
    result.train_history.push_back(epoch_loss / std::max(1, n_batches));
    const double vl = cl.loss(theta, Qv, Vv, Av, cfg.penalty_weight);
    if (!std::isfinite(vl)) throw NonFiniteLoss(epoch, -1);
    result.val_history.push_back(vl);
    if (vl < result.best_val) {
      result.best_val = vl;
      result.best_epoch = epoch;
      best_theta = theta;
    }
  }
  if (cfg.epochs > 0) result.model.unpack(best_theta);
  return result;
}

}  // namespace lagrom::spml
