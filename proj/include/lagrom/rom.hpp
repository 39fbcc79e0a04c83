#pragma once

// Assembles learned or intrusively projected Lagrangian reduced models as
// SecondOrderSystems for the shared Newmark engine. Gradients and Hessians
// of the learned energies are compiled once per assembly from the frozen
// model; Newton never falls back to finite differences.

#include <memory>

#include "lagrom/integrate.hpp"
#include "lagrom/lopinf.hpp"
#include "lagrom/models.hpp"
#include "lagrom/reduce.hpp"
#include "lagrom/spml.hpp"

namespace lagrom::rom {

enum class Kind { lopinf, lopinf_spml, pod_spml, intrusive };

inline const char* kind_name(Kind k) {
  switch (k) {
    case Kind::lopinf: return "lopinf";
    case Kind::lopinf_spml: return "lopinf-spml";
    case Kind::pod_spml: return "pod-spml";
    case Kind::intrusive: return "intrusive";
  }
  return "?";
}

struct LagrangianRom {
  Kind kind = Kind::lopinf;
  reduce::PodBasis basis;
  lopinf::LinearLagrangianRom lin;
  spml::SpmlModel model;  // meaningful only when has_model
  bool has_model = false;
  // intrusive-only extras
  Mat Mhat;
  std::shared_ptr<const models::MechanicalFom> fom;

  int r() const { return lin.r; }
};

namespace detail {

// value, input gradient, and Hessian of one frozen learned energy term,
// compiled to a single program
class FnDerivs {
 public:
  FnDerivs(const spml::SpmlModel& model, bool potential) : r_(model.r) {
    diff::Graph g;
    std::vector<diff::Graph::Id> x;
    x.reserve(std::size_t(r_));
    for (int i = 0; i < r_; ++i) x.push_back(g.var());
    spml::detail::ModelGraphBuilder mb(g, model, /*as_vars=*/false);
    diff::Graph::Id val = potential ? mb.U_value(x) : mb.F_value(x);
    auto grad = g.gradient(val, x);
    std::vector<diff::Graph::Id> outs{val};
    outs.insert(outs.end(), grad.begin(), grad.end());
    for (int i = 0; i < r_; ++i) {
      auto row = g.gradient(grad[std::size_t(i)], x);
      outs.insert(outs.end(), row.begin(), row.end());
    }
    prog_.emplace(g, outs);
  }

  double value(const Vec& x) const { return run(x)[0]; }

  Vec grad(const Vec& x) const {
    auto out = run(x);
    return Eigen::Map<const Vec>(out.data() + 1, r_);
  }

  Mat hess(const Vec& x) const {
    auto out = run(x);
    Mat H(r_, r_);
    for (int i = 0; i < r_; ++i)
      for (int j = 0; j < r_; ++j)
        H(i, j) = out[std::size_t(1 + r_ + i * r_ + j)];
    return 0.5 * (H + H.transpose());
  }

 private:
  std::vector<double> run(const Vec& x) const {
    if (x.size() != r_) throw DimensionMismatch("FnDerivs: bad input size");
    return prog_->eval_scalar(std::span<const double>(x.data(), std::size_t(r_)));
  }
  int r_;
  std::optional<diff::Program> prog_;
};

}  // namespace detail

inline LagrangianRom intrusive_project(const models::MechanicalFom& fom,
                                       const reduce::PodBasis& basis) {
  LagrangianRom rom;
  rom.kind = Kind::intrusive;
  rom.basis = basis;
  rom.lin.r = basis.r;
  rom.lin.K = basis.V_r.transpose() * fom.K * basis.V_r;
  rom.lin.C = basis.V_r.transpose() * fom.C * basis.V_r;
  rom.Mhat = basis.V_r.transpose() * fom.M * basis.V_r;
  rom.fom = std::make_shared<models::MechanicalFom>(fom);
  return rom;
}

inline integrate::SecondOrderSystem as_second_order(const LagrangianRom& rom) {
  const int r = rom.r();
  integrate::SecondOrderSystem sys;
  sys.dim = r;
  auto K = std::make_shared<Mat>(rom.lin.K);
  auto C = std::make_shared<Mat>(rom.lin.damping_or_zero());

  if (rom.kind == Kind::intrusive) {
    auto V = std::make_shared<Mat>(rom.basis.V_r);
    auto M = std::make_shared<Mat>(rom.Mhat);
    auto fom = rom.fom;
    if (!fom) throw std::invalid_argument("as_second_order: intrusive rom lost its FOM");
    sys.residual = [=](const Vec& q, const Vec& v, const Vec& a) {
      Vec res = (*M) * a + (*C) * v + (*K) * q +
                V->transpose() * fom->nl_potential_grad((*V) * q);
      if (fom->nl_dissipation_grad)
        res += V->transpose() * fom->nl_dissipation_grad((*V) * v);
      return res;
    };
    sys.jac_q = [=](const Vec& q, const Vec&, const Vec&) {
      return Mat(*K + V->transpose() * fom->nl_potential_hess((*V) * q) * (*V));
    };
    sys.jac_v = [=](const Vec&, const Vec& v, const Vec&) {
      Mat J = *C;
      if (fom->nl_dissipation_hess)
        J += V->transpose() * fom->nl_dissipation_hess((*V) * v) * (*V);
      return J;
    };
    sys.jac_a = [=](const Vec&, const Vec&, const Vec&) { return *M; };
    sys.energy = [=](const Vec& q, const Vec& v) {
      return 0.5 * v.dot((*M) * v) + fom->potential_energy((*V) * q);
    };
    return sys;
  }

  Mat Meff = Mat::Identity(r, r);
  std::shared_ptr<detail::FnDerivs> U, F;
  if (rom.has_model) {
    if (rom.model.use_TNN) Meff += spml::m_nn(rom.model);
    U = std::make_shared<detail::FnDerivs>(rom.model, true);
    if (rom.model.use_FNN)
      F = std::make_shared<detail::FnDerivs>(rom.model, false);
  }
  {
    Eigen::SelfAdjointEigenSolver<Mat> eig(Meff);
    if (eig.eigenvalues().minCoeff() <= 0.0)
      throw std::runtime_error("as_second_order: effective mass not SPD");
  }
  auto M = std::make_shared<Mat>(Meff);

  sys.residual = [=](const Vec& q, const Vec& v, const Vec& a) {
    Vec res = (*M) * a + (*C) * v + (*K) * q;
    if (U) res += U->grad(q);
    if (F) res += F->grad(v);
    return res;
  };
  sys.jac_q = [=](const Vec& q, const Vec&, const Vec&) {
    return U ? Mat(*K + U->hess(q)) : *K;
  };
  sys.jac_v = [=](const Vec&, const Vec& v, const Vec&) {
    return F ? Mat(*C + F->hess(v)) : *C;
  };
  sys.jac_a = [=](const Vec&, const Vec&, const Vec&) { return *M; };
  sys.energy = [=](const Vec& q, const Vec& v) {
    double e = 0.5 * v.dot((*M) * v) + 0.5 * q.dot((*K) * q);
    if (U) e += U->value(q);
    return e;
  };
  return sys;
}

inline integrate::Trajectory simulate_rom(const LagrangianRom& rom,
                                          const Vec& q0hat, const Vec& v0hat,
                                          const integrate::NewmarkConfig& cfg,
                                          double T) {
  return integrate::simulate(as_second_order(rom), cfg, q0hat, v0hat, T);
}

inline double rom_energy(const LagrangianRom& rom, const Vec& qhat,
                         const Vec& vhat) {
  return as_second_order(rom).energy(qhat, vhat);
}

}  // namespace lagrom::rom
