#pragma once

// Linearized dq-frame models of grid-following (GFLI) and grid-forming (GFMI)
// inverters, built as block lists plus routing for ss::compose.
//
// Conventions used throughout:
//   * per-unit quantities, nominal frequency w0 = 1 pu, time in seconds, so
//     every inductive/capacitive derivative carries a factor 1/omega_b;
//   * the system frame is aligned with the terminal voltage (Vq0 = 0);
//   * steady-state currents are positive from the inverter into the grid,
//     while the reported admittance maps the terminal-voltage perturbation to
//     the current drawn from the grid into the device (load convention), so a
//     bare RL branch has positive conductance;
//   * dq pairs are carried as complex numbers x = xd + j*xq, under which the
//     cross-coupling matrix J = [[0, 1], [-1, 0]] acts as multiplication by -j
//     and a frame rotation by theta acts as multiplication by exp(-j*theta).

#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "ibrkit/error.hpp"
#include "ibrkit/ssmodel.hpp"

namespace ibrkit {

using cplx = std::complex<double>;

enum class InverterKind { GFLI, GFMI };

inline const char* to_string(InverterKind k) { return k == InverterKind::GFLI ? "GFLI" : "GFMI"; }

/// Terminal operating point in per-unit.
struct OperatingPoint {
  double V = 1.0;
  double P = 0.0;
  double Q = 0.0;

  double apparent_power() const { return std::hypot(P, Q); }
  /// Rated-power limit: points with |S| > 1 pu are discarded.
  bool feasible() const { return apparent_power() <= 1.0 + 1e-12; }
  bool in_range() const {
    return V >= 0.9 - 1e-12 && V <= 1.1 + 1e-12 && std::abs(P) <= 1.0 + 1e-12 &&
           std::abs(Q) <= 1.0 + 1e-12;
  }
};

/**
 * Physical and control parameters of one inverter.
 *
 * Fields that do not apply to the kind are ignored (GFLI: Cf, Lg, Rg, voltage
 * loop, droop, omega_c; GFMI: PLL gains, kf).
 */
struct InverterParams {
  std::string name;
  InverterKind kind = InverterKind::GFLI;
  double omega_b = 2.0 * std::numbers::pi * 60.0;
  double Lf = 0.0, Rf = 0.0;
  double Cf = 0.0, Lg = 0.0, Rg = 0.0;
  double kp_i = 0.0, ki_i = 0.0;
  double kp_v = 0.0, ki_v = 0.0;
  double kp_pll = 0.0, ki_pll = 0.0;
  double mp = 0.0, nq = 0.0;
  double omega_c = 0.0;
  double kf = 0.0;          ///< terminal-voltage feedforward gain in the current loop (GFLI)
  double decoupling = 1.0;  ///< gain on the w0*L*J cross-coupling compensation terms

  void validate() const {
    const auto positive = [&](double v, const char* what) {
      if (!(v > 0.0) || !std::isfinite(v))
        throw Error("inverter '" + name + "': " + what + " must be positive");
    };
    const auto gain = [&](double v, const char* what) {
      if (!(v >= 0.0) || !std::isfinite(v))
        throw Error("inverter '" + name + "': " + what + " must be finite and non-negative");
    };
    positive(omega_b, "omega_b");
    positive(Lf, "Lf");
    positive(Rf, "Rf");
    gain(kp_i, "kp_i");
    gain(ki_i, "ki_i");
    gain(decoupling, "decoupling");
    if (kind == InverterKind::GFLI) {
      gain(kp_pll, "kp_pll");
      gain(ki_pll, "ki_pll");
      gain(kf, "kf");
    } else {
      positive(Cf, "Cf");
      positive(Lg, "Lg");
      positive(Rg, "Rg");
      positive(omega_c, "omega_c");
      gain(kp_v, "kp_v");
      gain(ki_v, "ki_v");
      gain(mp, "mp");
      gain(nq, "nq");
    }
  }
};

/**
 * Equilibrium about which the models are linearized. All dq pairs are in
 * the system frame unless the name says otherwise.
 */
struct SteadyState {
  InverterKind kind = InverterKind::GFLI;
  double Vd0 = 0.0, Vq0 = 0.0;
  double Id0 = 0.0, Iq0 = 0.0;
  cplx vm;             ///< converter (modulated) voltage
  cplx iL;             ///< converter-side inductor current (GFMI; equals the terminal current for GFLI)
  cplx vC;             ///< filter capacitor voltage (GFMI)
  double theta0 = 0.0; ///< control-frame angle relative to the system frame
  double E0 = 0.0;     ///< voltage magnitude reference (GFMI)
  cplx current_pi;     ///< current-loop integrator state
  cplx voltage_pi;     ///< voltage-loop integrator state (GFMI)
  double pll_integrator = 0.0;
  double p_filtered = 0.0, q_filtered = 0.0;

  cplx v() const { return {Vd0, Vq0}; }
  cplx i() const { return {Id0, Iq0}; }
};

struct AdmittanceMatrix {
  cplx Ydd, Ydq, Yqd, Yqq;
  double f = 0.0;

  bool finite() const {
    for (const auto& y : {Ydd, Ydq, Yqd, Yqq})
      if (!std::isfinite(y.real()) || !std::isfinite(y.imag())) return false;
    return true;
  }
};

/// Subsystem blocks and their routing, ready for ss::stack_blocks + ss::compose.
struct BlockModel {
  std::vector<ss::StateSpaceBlock> blocks;
  ss::Interconnection routing;
};

namespace detail {

inline double safe_div(double num, double den) { return den != 0.0 ? num / den : 0.0; }
inline cplx safe_div(cplx num, double den) { return den != 0.0 ? num / den : cplx{}; }

// A dq pair of routing signals.
struct SignalPair {
  ss::Signal d, q;

  friend SignalPair operator+(const SignalPair& a, const SignalPair& b) {
    return {a.d + b.d, a.q + b.q};
  }
  friend SignalPair operator-(const SignalPair& a, const SignalPair& b) {
    return {a.d - b.d, a.q - b.q};
  }
  friend SignalPair operator*(double g, const SignalPair& a) { return {g * a.d, g * a.q}; }
};

// g * J * x
inline SignalPair cross(double g, const SignalPair& x) { return {g * x.q, -g * x.d}; }

// R(theta) x: [cos d + sin q, -sin d + cos q]
inline SignalPair rotate(const SignalPair& x, double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  return {c * x.d + s * x.q, c * x.q - s * x.d};
}

// Linearized frame-transform term J*X0*dtheta = [X0q; -X0d] dtheta.
inline SignalPair angle_term(const ss::Signal& theta, cplx x0) {
  return {x0.imag() * theta, -x0.real() * theta};
}

inline SignalPair pair(const ss::InterconnectionBuilder& b, const std::string& d,
                       const std::string& q) {
  return {b.output(d), b.output(q)};
}

inline void drive(ss::InterconnectionBuilder& b, const std::string& d, const std::string& q,
                  const SignalPair& s) {
  b.drive(d, s.d);
  b.drive(q, s.q);
}

inline ss::Matrix J2() {
  ss::Matrix J(2, 2);
  J << 0.0, 1.0, -1.0, 0.0;
  return J;
}

// (L/omega_b) di/dt = u_from - u_to - R i + w0 L J i, two inputs pairs (from, to).
inline ss::StateSpaceBlock rl_branch(double L, double R, double omega_b, const std::string& name,
                                     const std::string& from, const std::string& to) {
  ss::StateSpaceBlock b;
  const double k = omega_b / L;
  b.A = k * (-R * ss::Matrix::Identity(2, 2) + L * J2());
  b.B = ss::Matrix::Zero(2, 4);
  b.B.block(0, 0, 2, 2) = k * ss::Matrix::Identity(2, 2);
  b.B.block(0, 2, 2, 2) = -k * ss::Matrix::Identity(2, 2);
  b.C = ss::Matrix::Identity(2, 2);
  b.D = ss::Matrix::Zero(2, 4);
  b.inputs = {name + "." + from + "_d", name + "." + from + "_q", name + "." + to + "_d",
              name + "." + to + "_q"};
  b.outputs = {name + ".i_d", name + ".i_q"};
  return b;
}

// Two decoupled PI channels: x' = e, u = ki x + kp e.
inline ss::StateSpaceBlock pi_pair(double kp, double ki, const std::string& name) {
  ss::StateSpaceBlock b;
  b.A = ss::Matrix::Zero(2, 2);
  b.B = ss::Matrix::Identity(2, 2);
  b.C = ki * ss::Matrix::Identity(2, 2);
  b.D = kp * ss::Matrix::Identity(2, 2);
  b.inputs = {name + ".e_d", name + ".e_q"};
  b.outputs = {name + ".u_d", name + ".u_q"};
  return b;
}

}  // namespace detail

/**
 * Equilibrium at the given terminal operating point.
 *
 * Power setpoints of the droop loops are dispatched to the operating point
 * itself, so the equilibrium follows in closed form: Id0 = P/V,
 * Iq0 = -Q/V, unit frequency, and every integrator holding exactly the value
 * that zeroes its derivative.
 */
inline SteadyState steady_state(const InverterParams& params, const OperatingPoint& op) {
  if (!op.feasible() || !(op.V > 0.0)) {
    throw FeasibilityError("operating point (V=" + std::to_string(op.V) + ", P=" +
                           std::to_string(op.P) + ", Q=" + std::to_string(op.Q) +
                           ") exceeds the rated power limit");
  }
  SteadyState s;
  s.kind = params.kind;
  s.Vd0 = op.V;
  s.Vq0 = 0.0;
  s.Id0 = op.P / op.V;
  s.Iq0 = -op.Q / op.V;
  s.p_filtered = op.P;
  s.q_filtered = op.Q;
  const cplx j(0.0, 1.0);
  const cplx v = s.v(), i = s.i();

  if (params.kind == InverterKind::GFLI) {
    s.iL = i;
    s.vm = v + (params.Rf + j * params.Lf) * i;
    // vm = ki*gamma - decoupling*Lf*J*i + kf*v  with J <-> -j
    s.current_pi =
        detail::safe_div(s.vm - j * params.decoupling * params.Lf * i - params.kf * v, params.ki_i);
    return s;
  }

  s.vC = v + (params.Rg + j * params.Lg) * i;
  s.iL = i + j * params.Cf * s.vC;
  s.vm = s.vC + (params.Rf + j * params.Lf) * s.iL;
  s.theta0 = std::arg(s.vC);
  s.E0 = std::abs(s.vC);
  const cplx rot = std::polar(1.0, -s.theta0);
  const cplx iL_c = s.iL * rot, vC_c = s.vC * rot, vm_c = s.vm * rot;
  s.voltage_pi =
      detail::safe_div(iL_c - j * params.decoupling * params.Cf * vC_c, params.ki_v);
  s.current_pi =
      detail::safe_div(vm_c - j * params.decoupling * params.Lf * iL_c, params.ki_i);
  return s;
}

/**
 * Grid-following inverter: L filter, current PI with cross decoupling and
 * optional voltage feedforward, SRF-PLL. Frame transforms between the PLL
 * frame and the system frame live in the routing gains.
 *
 * External input: terminal voltage (d, q). External output: terminal current
 * drawn into the device (d, q). Six states.
 */
inline BlockModel build_gfli(const InverterParams& p, const SteadyState& s) {
  if (p.kind != InverterKind::GFLI) throw Error("build_gfli: '" + p.name + "' is not a GFLI");
  using detail::SignalPair;

  BlockModel model;
  model.blocks.push_back(detail::rl_branch(p.Lf, p.Rf, p.omega_b, "filter", "vm", "v"));
  model.blocks.push_back(detail::pi_pair(p.kp_i, p.ki_i, "cc"));

  ss::StateSpaceBlock pll;  // x1' = vq, theta' = kp*vq + ki*x1
  pll.A = ss::Matrix::Zero(2, 2);
  pll.A(1, 0) = p.ki_pll;
  pll.B = ss::Matrix(2, 1);
  pll.B << 1.0, p.kp_pll;
  pll.C = ss::Matrix(1, 2);
  pll.C << 0.0, 1.0;
  pll.D = ss::Matrix::Zero(1, 1);
  pll.inputs = {"pll.vq"};
  pll.outputs = {"pll.theta"};
  model.blocks.push_back(std::move(pll));

  const auto stacked = ss::stack_blocks(model.blocks);
  ss::InterconnectionBuilder b(stacked, 2, 2);

  const ss::Signal theta = b.output("pll.theta");
  const SignalPair v_s{b.external(0), b.external(1)};
  const SignalPair i_s = detail::pair(b, "filter.i_d", "filter.i_q");
  const SignalPair i_c = i_s + detail::angle_term(theta, s.i());
  const SignalPair v_c = v_s + detail::angle_term(theta, s.v());

  b.drive("pll.vq", v_c.q);
  detail::drive(b, "cc.e_d", "cc.e_q", -1.0 * i_c);
  const SignalPair vm_c = detail::pair(b, "cc.u_d", "cc.u_q") -
                          detail::cross(p.decoupling * p.Lf, i_c) + p.kf * v_c;
  const SignalPair vm_s = vm_c - detail::angle_term(theta, s.vm);
  detail::drive(b, "filter.vm_d", "filter.vm_q", vm_s);
  detail::drive(b, "filter.v_d", "filter.v_q", v_s);

  b.expose(0, -1.0 * i_s.d);
  b.expose(1, -1.0 * i_s.q);
  model.routing = b.interconnection();
  return model;
}

/**
 * Grid-forming inverter: LC filter plus grid-side coupling branch, power
 * measurement at the terminal with first-order low-pass, P-f / Q-V droop,
 * cascaded voltage and current PI loops with cross decoupling.
 *
 * Same external ports as build_gfli. Thirteen states: filter 6, low-pass 2,
 * droop angle 1, voltage PI 2, current PI 2.
 */
inline BlockModel build_gfmi(const InverterParams& p, const SteadyState& s) {
  if (p.kind != InverterKind::GFMI) throw Error("build_gfmi: '" + p.name + "' is not a GFMI");
  using detail::SignalPair;
  const double wb = p.omega_b;

  BlockModel model;
  {
    // states iL, vC, ig; inputs vm, v; outputs all states
    ss::StateSpaceBlock f;
    const auto I = ss::Matrix::Identity(2, 2);
    const auto J = detail::J2();
    f.A = ss::Matrix::Zero(6, 6);
    f.A.block(0, 0, 2, 2) = (wb / p.Lf) * (-p.Rf * I + p.Lf * J);
    f.A.block(0, 2, 2, 2) = -(wb / p.Lf) * I;
    f.A.block(2, 0, 2, 2) = (wb / p.Cf) * I;
    f.A.block(2, 2, 2, 2) = wb * J;
    f.A.block(2, 4, 2, 2) = -(wb / p.Cf) * I;
    f.A.block(4, 2, 2, 2) = (wb / p.Lg) * I;
    f.A.block(4, 4, 2, 2) = (wb / p.Lg) * (-p.Rg * I + p.Lg * J);
    f.B = ss::Matrix::Zero(6, 4);
    f.B.block(0, 0, 2, 2) = (wb / p.Lf) * I;
    f.B.block(4, 2, 2, 2) = -(wb / p.Lg) * I;
    f.C = ss::Matrix::Identity(6, 6);
    f.D = ss::Matrix::Zero(6, 4);
    f.inputs = {"filter.vm_d", "filter.vm_q", "filter.v_d", "filter.v_q"};
    f.outputs = {"filter.iL_d", "filter.iL_q", "filter.vC_d",
                 "filter.vC_q", "filter.ig_d", "filter.ig_q"};
    model.blocks.push_back(std::move(f));
  }
  {
    ss::StateSpaceBlock lpf;
    lpf.A = -p.omega_c * ss::Matrix::Identity(2, 2);
    lpf.B = p.omega_c * ss::Matrix::Identity(2, 2);
    lpf.C = ss::Matrix::Identity(2, 2);
    lpf.D = ss::Matrix::Zero(2, 2);
    lpf.inputs = {"lpf.p", "lpf.q"};
    lpf.outputs = {"lpf.p_f", "lpf.q_f"};
    model.blocks.push_back(std::move(lpf));
  }
  {
    ss::StateSpaceBlock angle;  // theta' = dw (rad/s)
    angle.A = ss::Matrix::Zero(1, 1);
    angle.B = ss::Matrix::Ones(1, 1);
    angle.C = ss::Matrix::Ones(1, 1);
    angle.D = ss::Matrix::Zero(1, 1);
    angle.inputs = {"droop.dw"};
    angle.outputs = {"droop.theta"};
    model.blocks.push_back(std::move(angle));
  }
  model.blocks.push_back(detail::pi_pair(p.kp_v, p.ki_v, "vc"));
  model.blocks.push_back(detail::pi_pair(p.kp_i, p.ki_i, "cc"));

  const auto stacked = ss::stack_blocks(model.blocks);
  ss::InterconnectionBuilder b(stacked, 2, 2);

  const cplx rot = std::polar(1.0, -s.theta0);
  const ss::Signal theta = b.output("droop.theta");
  const SignalPair v_s{b.external(0), b.external(1)};
  const SignalPair ig_s = detail::pair(b, "filter.ig_d", "filter.ig_q");
  const SignalPair iL_s = detail::pair(b, "filter.iL_d", "filter.iL_q");
  const SignalPair vC_s = detail::pair(b, "filter.vC_d", "filter.vC_q");

  // p = v.ig, q = vq*igd - vd*igq, both linearized at the terminal
  b.drive("lpf.p", s.Vd0 * ig_s.d + s.Vq0 * ig_s.q + s.Id0 * v_s.d + s.Iq0 * v_s.q);
  b.drive("lpf.q", s.Vq0 * ig_s.d - s.Vd0 * ig_s.q + s.Id0 * v_s.q - s.Iq0 * v_s.d);

  b.drive("droop.dw", (-wb * p.mp) * b.output("lpf.p_f"));
  const SignalPair v_ref{(-p.nq) * b.output("lpf.q_f"), ss::Signal{}};

  const SignalPair vC_c = detail::rotate(vC_s, s.theta0) + detail::angle_term(theta, s.vC * rot);
  const SignalPair iL_c = detail::rotate(iL_s, s.theta0) + detail::angle_term(theta, s.iL * rot);

  detail::drive(b, "vc.e_d", "vc.e_q", v_ref - vC_c);
  const SignalPair iL_ref =
      detail::pair(b, "vc.u_d", "vc.u_q") - detail::cross(p.decoupling * p.Cf, vC_c);
  detail::drive(b, "cc.e_d", "cc.e_q", iL_ref - iL_c);
  const SignalPair vm_c =
      detail::pair(b, "cc.u_d", "cc.u_q") - detail::cross(p.decoupling * p.Lf, iL_c);
  const SignalPair vm_s =
      detail::rotate(vm_c - detail::angle_term(theta, s.vm * rot), -s.theta0);
  detail::drive(b, "filter.vm_d", "filter.vm_q", vm_s);
  detail::drive(b, "filter.v_d", "filter.v_q", v_s);

  b.expose(0, -1.0 * ig_s.d);
  b.expose(1, -1.0 * ig_s.q);
  model.routing = b.interconnection();
  return model;
}

inline BlockModel build_blocks(const InverterParams& p, const SteadyState& s) {
  return p.kind == InverterKind::GFLI ? build_gfli(p, s) : build_gfmi(p, s);
}

/// Composite state-space model of one inverter at one operating point.
inline ss::CompositeSystem linearize(const InverterParams& params, const OperatingPoint& op) {
  params.validate();
  const auto model = build_blocks(params, steady_state(params, op));
  return ss::compose(ss::stack_blocks(model.blocks), model.routing);
}

/// Evaluates an already linearized model at f Hz (s = j*2*pi*f).
inline AdmittanceMatrix admittance_at(const ss::CompositeSystem& sys, double f_hz) {
  if (!std::isfinite(f_hz) || f_hz == 0.0) throw Error("admittance: frequency must be nonzero");
  const auto G = ss::frequency_response_nudged(sys, 2.0 * std::numbers::pi * f_hz);
  return {G(0, 0), G(0, 1), G(1, 0), G(1, 1), f_hz};
}

inline AdmittanceMatrix admittance(const InverterParams& params, const OperatingPoint& op,
                                   double f_hz) {
  return admittance_at(linearize(params, op), f_hz);
}

}  // namespace ibrkit
