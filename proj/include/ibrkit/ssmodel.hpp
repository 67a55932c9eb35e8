#pragma once

// State-space machinery for the component-connection method: subsystem
// blocks are stacked block-diagonally, wired together with four routing
// matrices, collapsed into one composite (A, B, C, D) and evaluated in the
// frequency domain.

#include <Eigen/Dense>

#include <complex>
#include <cstddef>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ibrkit/error.hpp"

namespace ibrkit::ss {

using Matrix = Eigen::MatrixXd;
using CMatrix = Eigen::MatrixXcd;

/// Reciprocal-condition threshold under which a linear solve is refused.
inline constexpr double kMinRcond = 1e-12;

/// Relative frequency shift applied once when a resolvent is singular.
inline constexpr double kResonanceNudge = 1e-9;

/**
 * One linear subsystem  x' = A x + B u,  y = C x + D u.
 *
 * A block with zero states is a static gain and only carries D. Port labels
 * name the entries of u and y; they are used by InterconnectionBuilder to
 * wire blocks by name.
 */
struct StateSpaceBlock {
  Matrix A, B, C, D;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;

  std::size_t n_states() const { return static_cast<std::size_t>(A.rows()); }
  std::size_t n_inputs() const { return static_cast<std::size_t>(D.cols()); }
  std::size_t n_outputs() const { return static_cast<std::size_t>(D.rows()); }

  /// Empty string when consistent, otherwise a description of the mismatch.
  std::string inconsistency() const {
    std::ostringstream os;
    if (A.rows() != A.cols()) {
      os << "A is " << A.rows() << "x" << A.cols() << ", not square";
    } else if (B.rows() != A.rows()) {
      os << "B has " << B.rows() << " rows, expected " << A.rows();
    } else if (C.cols() != A.rows()) {
      os << "C has " << C.cols() << " cols, expected " << A.rows();
    } else if (C.rows() != D.rows()) {
      os << "C has " << C.rows() << " rows but D has " << D.rows();
    } else if (B.cols() != D.cols()) {
      os << "B has " << B.cols() << " cols but D has " << D.cols();
    } else if (!inputs.empty() && inputs.size() != n_inputs()) {
      os << inputs.size() << " input labels for " << n_inputs() << " inputs";
    } else if (!outputs.empty() && outputs.size() != n_outputs()) {
      os << outputs.size() << " output labels for " << n_outputs() << " outputs";
    }
    return os.str();
  }
};

/// Builds a block with zero states (pure static gain D).
inline StateSpaceBlock static_gain(Matrix D, std::vector<std::string> inputs = {},
                                   std::vector<std::string> outputs = {}) {
  StateSpaceBlock b;
  b.A = Matrix(0, 0);
  b.B = Matrix(0, D.cols());
  b.C = Matrix(D.rows(), 0);
  b.D = std::move(D);
  b.inputs = std::move(inputs);
  b.outputs = std::move(outputs);
  return b;
}

/**
 * Routing of the stacked system:
 *   u     = L1 y + L2 u_ext
 *   y_ext = L3 y + L4 u_ext
 */
struct Interconnection {
  Matrix L1, L2, L3, L4;
};

struct CompositeSystem {
  Matrix A, B, C, D;

  std::size_t n_states() const { return static_cast<std::size_t>(A.rows()); }
  std::size_t n_ext_in() const { return static_cast<std::size_t>(D.cols()); }
  std::size_t n_ext_out() const { return static_cast<std::size_t>(D.rows()); }
};

/// Block-diagonal concatenation; port labels are kept in block order.
inline StateSpaceBlock stack_blocks(std::span<const StateSpaceBlock> blocks) {
  if (blocks.empty()) throw DimensionError("stack_blocks: empty block list");
  Eigen::Index n = 0, m = 0, p = 0;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (auto why = blocks[i].inconsistency(); !why.empty())
      throw DimensionError("stack_blocks: block " + std::to_string(i) + ": " + why);
    n += blocks[i].A.rows();
    m += blocks[i].D.cols();
    p += blocks[i].D.rows();
  }
  StateSpaceBlock out;
  out.A = Matrix::Zero(n, n);
  out.B = Matrix::Zero(n, m);
  out.C = Matrix::Zero(p, n);
  out.D = Matrix::Zero(p, m);
  Eigen::Index ni = 0, mi = 0, pi = 0;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const auto bn = b.A.rows(), bm = b.D.cols(), bp = b.D.rows();
    out.A.block(ni, ni, bn, bn) = b.A;
    out.B.block(ni, mi, bn, bm) = b.B;
    out.C.block(pi, ni, bp, bn) = b.C;
    out.D.block(pi, mi, bp, bm) = b.D;
    for (Eigen::Index k = 0; k < bm; ++k)
      out.inputs.push_back(b.inputs.empty() ? "b" + std::to_string(i) + ".u" + std::to_string(k)
                                            : b.inputs[static_cast<std::size_t>(k)]);
    for (Eigen::Index k = 0; k < bp; ++k)
      out.outputs.push_back(b.outputs.empty() ? "b" + std::to_string(i) + ".y" + std::to_string(k)
                                              : b.outputs[static_cast<std::size_t>(k)]);
    ni += bn;
    mi += bm;
    pi += bp;
  }
  return out;
}

inline StateSpaceBlock stack_blocks(const std::vector<StateSpaceBlock>& blocks) {
  return stack_blocks(std::span<const StateSpaceBlock>(blocks));
}

/**
 * Closes the interconnection around the stacked system.
 *
 * With F = (I - D L1)^-1:
 *   A_sys = A + B L1 F C          B_sys = B (L1 F D + I) L2
 *   C_sys = L3 F C                D_sys = L3 F D L2 + L4
 */
inline CompositeSystem compose(const StateSpaceBlock& stacked, const Interconnection& ic) {
  if (auto why = stacked.inconsistency(); !why.empty()) throw DimensionError("compose: " + why);
  const auto m = stacked.D.cols(), p = stacked.D.rows();
  const auto check = [](const Matrix& L, Eigen::Index r, Eigen::Index c, const char* name) {
    if (L.rows() != r || L.cols() != c) {
      std::ostringstream os;
      os << "compose: " << name << " is " << L.rows() << "x" << L.cols() << ", expected " << r
         << "x" << c;
      throw DimensionError(os.str());
    }
  };
  check(ic.L1, m, p, "L1");
  check(ic.L2, m, ic.L2.cols(), "L2");
  check(ic.L3, ic.L3.rows(), p, "L3");
  check(ic.L4, ic.L3.rows(), ic.L2.cols(), "L4");

  const Matrix loop = Matrix::Identity(p, p) - stacked.D * ic.L1;
  Matrix FC = Matrix::Zero(p, stacked.C.cols());
  Matrix FD = Matrix::Zero(p, m);
  if (p > 0) {
    Eigen::PartialPivLU<Matrix> lu(loop);
    if (!(lu.rcond() >= kMinRcond)) {
      const double smin = Eigen::JacobiSVD<Matrix>(loop).singularValues().minCoeff();
      std::ostringstream os;
      os << "compose: algebraic loop, I - D*L1 is singular (smallest singular value " << smin
         << ")";
      throw AlgebraicLoopError(os.str(), smin);
    }
    FC = lu.solve(stacked.C);
    FD = lu.solve(stacked.D);
  }
  CompositeSystem sys;
  sys.A = stacked.A + stacked.B * ic.L1 * FC;
  sys.B = stacked.B * (ic.L1 * FD + Matrix::Identity(m, m)) * ic.L2;
  sys.C = ic.L3 * FC;
  sys.D = ic.L3 * FD * ic.L2 + ic.L4;
  return sys;
}

/// G(jw) = C (jw I - A)^-1 B + D via an LU solve of the resolvent.
inline CMatrix frequency_response(const CompositeSystem& sys, double omega) {
  const auto n = sys.A.rows();
  CMatrix G = sys.D.cast<std::complex<double>>();
  if (n == 0) return G;
  CMatrix resolvent = -sys.A.cast<std::complex<double>>();
  resolvent.diagonal().array() += std::complex<double>(0.0, omega);
  Eigen::PartialPivLU<CMatrix> lu(resolvent);
  if (!(lu.rcond() >= kMinRcond)) {
    std::ostringstream os;
    os << "frequency_response: singular resolvent at omega = " << omega << " rad/s";
    throw SingularResolventError(os.str(), omega);
  }
  const CMatrix X = lu.solve(sys.B.cast<std::complex<double>>());
  G.noalias() += sys.C.cast<std::complex<double>>() * X;
  return G;
}

/// Retries once at omega*(1 + kResonanceNudge) when omega hits a lossless mode.
inline CMatrix frequency_response_nudged(const CompositeSystem& sys, double omega) {
  try {
    return frequency_response(sys, omega);
  } catch (const SingularResolventError&) {
    return frequency_response(sys, omega * (1.0 + kResonanceNudge));
  }
}

/// A linear combination of stacked-block outputs and external inputs.
struct Signal {
  std::map<std::size_t, double> outputs;
  std::map<std::size_t, double> externals;

  Signal& operator+=(const Signal& o) {
    for (auto [k, v] : o.outputs) outputs[k] += v;
    for (auto [k, v] : o.externals) externals[k] += v;
    return *this;
  }
  Signal& operator*=(double g) {
    for (auto& kv : outputs) kv.second *= g;
    for (auto& kv : externals) kv.second *= g;
    return *this;
  }
  friend Signal operator+(Signal a, const Signal& b) { return a += b; }
  friend Signal operator-(Signal a, Signal b) { return a += (b *= -1.0); }
  friend Signal operator*(double g, Signal s) { return s *= g; }
  friend Signal operator-(Signal s) { return s *= -1.0; }
};

/**
 * Fills L1..L4 by naming which signal drives each block input and each
 * external output. Inputs that are never driven stay at zero.
 */
class InterconnectionBuilder {
 public:
  InterconnectionBuilder(const StateSpaceBlock& stacked, std::size_t n_ext_in,
                         std::size_t n_ext_out)
      : inputs_(stacked.inputs), outputs_(stacked.outputs) {
    const auto m = static_cast<Eigen::Index>(inputs_.size());
    const auto p = static_cast<Eigen::Index>(outputs_.size());
    const auto mi = static_cast<Eigen::Index>(n_ext_in);
    const auto po = static_cast<Eigen::Index>(n_ext_out);
    ic_.L1 = Matrix::Zero(m, p);
    ic_.L2 = Matrix::Zero(m, mi);
    ic_.L3 = Matrix::Zero(po, p);
    ic_.L4 = Matrix::Zero(po, mi);
  }

  Signal output(const std::string& label) const {
    Signal s;
    s.outputs[index_of(outputs_, label, "output")] = 1.0;
    return s;
  }

  Signal external(std::size_t k) const {
    if (static_cast<Eigen::Index>(k) >= ic_.L2.cols())
      throw DimensionError("external input " + std::to_string(k) + " out of range");
    Signal s;
    s.externals[k] = 1.0;
    return s;
  }

  void drive(const std::string& input_label, const Signal& s) {
    const auto row = static_cast<Eigen::Index>(index_of(inputs_, input_label, "input"));
    add_row(ic_.L1, ic_.L2, row, s);
  }

  void expose(std::size_t k, const Signal& s) {
    if (static_cast<Eigen::Index>(k) >= ic_.L3.rows())
      throw DimensionError("external output " + std::to_string(k) + " out of range");
    add_row(ic_.L3, ic_.L4, static_cast<Eigen::Index>(k), s);
  }

  const Interconnection& interconnection() const { return ic_; }

 private:
  static std::size_t index_of(const std::vector<std::string>& labels, const std::string& label,
                              const char* kind) {
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label) return i;
    throw DimensionError(std::string("unknown ") + kind + " port '" + label + "'");
  }

  static void add_row(Matrix& internal, Matrix& ext, Eigen::Index row, const Signal& s) {
    for (auto [k, v] : s.outputs) internal(row, static_cast<Eigen::Index>(k)) += v;
    for (auto [k, v] : s.externals) {
      if (static_cast<Eigen::Index>(k) >= ext.cols())
        throw DimensionError("external input " + std::to_string(k) + " out of range");
      ext(row, static_cast<Eigen::Index>(k)) += v;
    }
  }

  std::vector<std::string> inputs_;
  std::vector<std::string> outputs_;
  Interconnection ic_;
};

}  // namespace ibrkit::ss
