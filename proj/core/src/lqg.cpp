#include "teamred/lqg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <unsupported/Eigen/KroneckerProduct>

#include "teamred/errors.hpp"

namespace teamred {
namespace {

Matrix matrix_from_json(const nlohmann::json& j) {
  if (j.is_number()) return Matrix::Constant(1, 1, j.get<double>());
  if (!j.is_array() || j.empty()) throw ConfigurationError("expected a matrix (array of rows)");
  if (!j[0].is_array()) {
    Matrix m(static_cast<Eigen::Index>(j.size()), 1);
    for (std::size_t r = 0; r < j.size(); ++r) m(static_cast<Eigen::Index>(r), 0) = j[r].get<double>();
    return m;
  }
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (j[r].size() != j[0].size()) throw ConfigurationError("ragged matrix rows");
    for (std::size_t c = 0; c < j[r].size(); ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
  }
  return m;
}

nlohmann::json matrix_to_json(const Matrix& m) {
  auto j = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    j.push_back(row);
  }
  return j;
}

std::size_t obs_dim(const LqgTeam& t, std::size_t k) { return static_cast<std::size_t>(t.H[k].rows()); }

// Rows of ŷ for the observed signals of DM i, stacked.
Matrix stacked_H(const LqgTeam& t, std::size_t i) {
  const auto obs = t.observed(i);
  std::size_t rows = 0;
  for (auto k : obs) rows += obs_dim(t, k);
  Matrix C(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(t.zeta_dim()));
  Eigen::Index at = 0;
  for (auto k : obs) {
    C.middleRows(at, t.H[k].rows()) = t.H[k];
    at += t.H[k].rows();
  }
  return C;
}

Matrix S_row(const LqgTeam& t, std::size_t i) {
  return t.S.middleRows(static_cast<Eigen::Index>(t.action_offset(i)), static_cast<Eigen::Index>(t.action_dims[i]));
}

Matrix R_block(const LqgTeam& t, std::size_t i, std::size_t j) {
  return t.R.block(static_cast<Eigen::Index>(t.action_offset(i)), static_cast<Eigen::Index>(t.action_offset(j)),
                   static_cast<Eigen::Index>(t.action_dims[i]), static_cast<Eigen::Index>(t.action_dims[j]));
}

GainSet empty_gains(const LqgTeam& t) {
  GainSet g;
  for (std::size_t i = 0; i < t.dms(); ++i) g.blocks.push_back(t.observed(i));
  return g;
}

}  // namespace

std::size_t LqgTeam::total_actions() const {
  std::size_t m = 0;
  for (auto d : action_dims) m += d;
  return m;
}

std::size_t LqgTeam::action_offset(std::size_t i) const {
  std::size_t m = 0;
  for (std::size_t k = 0; k < i; ++k) m += action_dims[k];
  return m;
}

std::vector<std::size_t> LqgTeam::direct_upstream(std::size_t i) const {
  std::vector<std::size_t> out;
  for (const auto& [key, m] : B)
    if (key.first == i) out.push_back(key.second);
  return out;
}

std::vector<std::size_t> LqgTeam::observed(std::size_t i) const {
  std::set<std::size_t> anc;
  std::vector<std::size_t> stack = direct_upstream(i);
  while (!stack.empty()) {
    const auto k = stack.back();
    stack.pop_back();
    if (anc.insert(k).second)
      for (auto j : direct_upstream(k)) stack.push_back(j);
  }
  std::vector<std::size_t> out(anc.begin(), anc.end());
  out.push_back(i);
  return out;
}

void LqgTeam::validate() const {
  const auto n = static_cast<Eigen::Index>(zeta_dim());
  if (n == 0 || sigma_zeta.cols() != n) throw ConfigurationError("Sigma_zeta must be square and nonempty");
  if ((sigma_zeta - sigma_zeta.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw ConfigurationError("Sigma_zeta not symmetric");
  if (Eigen::SelfAdjointEigenSolver<Matrix>(sigma_zeta).eigenvalues().minCoeff() <= 0.0)
    throw ConfigurationError("Sigma_zeta not positive definite");
  if (action_dims.size() != dms()) throw ConfigurationError("one action dimension per DM required");
  for (const auto& h : H)
    if (h.cols() != n) throw ConfigurationError("H_i must have as many columns as zeta");
  const auto M = static_cast<Eigen::Index>(total_actions());
  if (R.rows() != M || R.cols() != M) throw ConfigurationError("R dimension mismatch");
  if ((R - R.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw ConfigurationError("R not symmetric");
  if (Eigen::SelfAdjointEigenSolver<Matrix>(R).eigenvalues().minCoeff() <= 0.0)
    throw ConfigurationError("R not positive definite");
  if (Q.rows() != n || Q.cols() != n) throw ConfigurationError("Q dimension mismatch");
  if ((Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw ConfigurationError("Q not symmetric");
  if (Eigen::SelfAdjointEigenSolver<Matrix>(Q).eigenvalues().minCoeff() < -1e-12)
    throw ConfigurationError("Q not positive semidefinite");
  if (S.rows() != M || S.cols() != n) throw ConfigurationError("S dimension mismatch");
  for (const auto& [key, m] : B) {
    const auto [i, j] = key;
    if (i >= dms() || j >= i) throw ConfigurationError("B_ij requires j < i");
    if (m.rows() != H[i].rows() || m.cols() != static_cast<Eigen::Index>(action_dims[j]))
      throw ConfigurationError("B_ij dimension mismatch");
  }
}

LqgTeam LqgTeam::from_json(const nlohmann::json& j) {
  LqgTeam t;
  try {
    const std::size_t N = j.at("N").get<std::size_t>();
    t.sigma_zeta = matrix_from_json(j.at("Sigma_zeta"));
    for (const auto& h : j.at("H")) {
      Matrix m = matrix_from_json(h);
      if (m.cols() == 1 && t.sigma_zeta.rows() > 1 && m.rows() == t.sigma_zeta.rows()) m.transposeInPlace();
      t.H.push_back(m);
    }
    if (t.H.size() != N) throw ConfigurationError("H must have N entries");
    if (j.contains("dims") && j["dims"].contains("u")) {
      t.action_dims = j["dims"]["u"].get<std::vector<std::size_t>>();
    } else {
      t.action_dims.assign(N, 1);
    }
    if (j.contains("B"))
      for (const auto& [key, val] : j["B"].items()) {
        std::size_t i = 0, k = 0;
        if (std::sscanf(key.c_str(), "(%zu,%zu)", &i, &k) != 2 || i == 0 || k == 0)
          throw ConfigurationError("B keys look like \"(i,j)\" with 1-based indices");
        t.B[{i - 1, k - 1}] = matrix_from_json(val);
      }
    t.Q = matrix_from_json(j.at("Q"));
    t.R = matrix_from_json(j.at("R"));
    const auto M = static_cast<Eigen::Index>(t.total_actions());
    t.S = j.contains("S") ? matrix_from_json(j["S"]) : Matrix::Zero(M, t.sigma_zeta.rows());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError(std::string("lqg config: ") + e.what());
  }
  t.validate();
  return t;
}

nlohmann::json LqgTeam::to_json() const {
  nlohmann::json j;
  j["N"] = dms();
  j["dims"] = {{"zeta", zeta_dim()}, {"u", action_dims}};
  j["Sigma_zeta"] = matrix_to_json(sigma_zeta);
  j["H"] = nlohmann::json::array();
  for (const auto& h : H) j["H"].push_back(matrix_to_json(h));
  j["B"] = nlohmann::json::object();
  for (const auto& [key, m] : B)
    j["B"]["(" + std::to_string(key.first + 1) + "," + std::to_string(key.second + 1) + ")"] = matrix_to_json(m);
  j["Q"] = matrix_to_json(Q);
  j["R"] = matrix_to_json(R);
  j["S"] = matrix_to_json(S);
  return j;
}

Matrix GainSet::block(LqgForm form, std::size_t i, std::size_t k, const LqgTeam& team) const {
  const Matrix& full = form == LqgForm::S ? G.at(i) : K.at(i);
  Eigen::Index at = 0;
  for (auto b : blocks.at(i)) {
    const auto n = team.H[b].rows();
    if (b == k) return full.middleCols(at, n);
    at += n;
  }
  return Matrix::Zero(full.rows(), team.H[k].rows());
}

nlohmann::json GainSet::to_json(const LqgTeam& team) const {
  auto one = [&](LqgForm form, const char* name) {
    auto arr = nlohmann::json::array();
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      nlohmann::json e{{"dm", i + 1}};
      for (auto k : blocks[i])
        e["blocks"][std::string(name) + "_" + std::to_string(i + 1) + "^" + std::to_string(k + 1)] =
            matrix_to_json(block(form, i, k, team));
      arr.push_back(e);
    }
    return arr;
  };
  nlohmann::json j;
  if (!G.empty()) j["G"] = one(LqgForm::S, "G");
  if (!K.empty()) j["K"] = one(LqgForm::D, "K");
  return j;
}

StaticSolve solve_static_gains(const LqgTeam& team) {
  team.validate();
  const std::size_t N = team.dms();
  std::vector<Matrix> C(N);
  std::vector<Eigen::Index> offset(N + 1, 0);
  for (std::size_t i = 0; i < N; ++i) {
    C[i] = stacked_H(team, i);
    offset[i + 1] = offset[i] + static_cast<Eigen::Index>(team.action_dims[i]) * C[i].rows();
  }
  const Eigen::Index total = offset[N];
  Matrix A = Matrix::Zero(total, total);
  Vector rhs(total);
  const Matrix& Sig = team.sigma_zeta;
  // Row block i: Σ_j R_ij G_j (C_j Σ C_i') = -S_i Σ C_i'.
  for (std::size_t i = 0; i < N; ++i) {
    const auto mi = static_cast<Eigen::Index>(team.action_dims[i]);
    for (std::size_t j = 0; j < N; ++j) {
      const auto mj = static_cast<Eigen::Index>(team.action_dims[j]);
      const Matrix cov_ji = C[j] * Sig * C[i].transpose();
      const Matrix kron = Eigen::kroneckerProduct(cov_ji.transpose(), R_block(team, i, j));
      A.block(offset[i], offset[j], mi * C[i].rows(), mj * C[j].rows()) = kron;
    }
    const Matrix b = -S_row(team, i) * Sig * C[i].transpose();
    rhs.segment(offset[i], b.size()) = Eigen::Map<const Vector>(b.data(), b.size());
  }
  Eigen::FullPivLU<Matrix> lu(A);
  if (lu.rank() < total)
    throw NumericalError("static gain system is rank deficient (rank " + std::to_string(lu.rank()) + " of " +
                         std::to_string(total) + "); check Sigma_zeta, H and R");
  const Vector x = lu.solve(rhs);
  StaticSolve out;
  out.gains = empty_gains(team);
  for (std::size_t i = 0; i < N; ++i) {
    const auto mi = static_cast<Eigen::Index>(team.action_dims[i]);
    out.gains.G.push_back(Eigen::Map<const Matrix>(x.data() + offset[i], mi, C[i].rows()));
  }
  out.relative_residual = (A * x - rhs).norm() / (1.0 + rhs.norm() + A.norm() * x.norm());
  return out;
}

GainSet solve_static_gains_iterative(const LqgTeam& team, std::size_t max_iter, double tol) {
  team.validate();
  const std::size_t N = team.dms();
  const Matrix& Sig = team.sigma_zeta;
  std::vector<Matrix> C(N);
  GainSet g = empty_gains(team);
  for (std::size_t i = 0; i < N; ++i) {
    C[i] = stacked_H(team, i);
    g.G.push_back(Matrix::Zero(static_cast<Eigen::Index>(team.action_dims[i]), C[i].rows()));
  }
  for (std::size_t it = 0; it < max_iter; ++it) {
    double change = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      Matrix rhs = S_row(team, i) * Sig * C[i].transpose();
      for (std::size_t j = 0; j < N; ++j)
        if (j != i) rhs += R_block(team, i, j) * g.G[j] * C[j] * Sig * C[i].transpose();
      const Matrix cov_ii = C[i] * Sig * C[i].transpose();
      const Matrix left = R_block(team, i, i).ldlt().solve(-rhs);
      const Matrix next = cov_ii.transpose().ldlt().solve(left.transpose()).transpose();
      change = std::max(change, (next - g.G[i]).cwiseAbs().maxCoeff());
      g.G[i] = next;
    }
    if (change < tol) return g;
  }
  throw NumericalError("Gauss-Seidel gain iteration did not converge");
}

GainSet transport_gains_G_to_K(const LqgTeam& team, const GainSet& gains) {
  const std::size_t N = team.dms();
  GainSet out = gains;
  out.K.assign(N, Matrix());
  // K_i^m = G_i^m - Σ_{k∈O_i} Σ_{j∈↓k} G_i^k B_kj K_j^m, DMs in index order.
  for (std::size_t i = 0; i < N; ++i) {
    const auto obs = team.observed(i);
    const auto mi = static_cast<Eigen::Index>(team.action_dims[i]);
    std::vector<Matrix> blocks;
    for (auto m : obs) {
      Matrix km = gains.block(LqgForm::S, i, m, team);
      for (auto k : obs)
        for (auto j : team.direct_upstream(k))
          km -= gains.block(LqgForm::S, i, k, team) * team.B.at({k, j}) * out.block(LqgForm::D, j, m, team);
      blocks.push_back(km);
    }
    Eigen::Index cols = 0;
    for (const auto& b : blocks) cols += b.cols();
    Matrix K(mi, cols);
    Eigen::Index at = 0;
    for (const auto& b : blocks) {
      K.middleCols(at, b.cols()) = b;
      at += b.cols();
    }
    out.K[i] = K;
  }
  return out;
}

Matrix closed_loop_map(const LqgTeam& team, const GainSet& gains, LqgForm form) {
  const std::size_t N = team.dms();
  const auto M = static_cast<Eigen::Index>(team.total_actions());
  const auto n = static_cast<Eigen::Index>(team.zeta_dim());
  Matrix Mz = Matrix::Zero(M, n);
  // DMs act in index order; in the D form ŷ_k already contains upstream actions.
  std::vector<Matrix> yhat(N);  // ŷ_k as a map of ζ
  for (std::size_t i = 0; i < N; ++i) {
    yhat[i] = team.H[i];
    if (form == LqgForm::D)
      for (auto j : team.direct_upstream(i))
        yhat[i] += team.B.at({i, j}) *
                   Mz.middleRows(static_cast<Eigen::Index>(team.action_offset(j)),
                                 static_cast<Eigen::Index>(team.action_dims[j]));
    Matrix ui = Matrix::Zero(static_cast<Eigen::Index>(team.action_dims[i]), n);
    for (auto k : team.observed(i)) ui += gains.block(form, i, k, team) * yhat[k];
    Mz.middleRows(static_cast<Eigen::Index>(team.action_offset(i)), ui.rows()) = ui;
  }
  return Mz;
}

double exact_cost(const LqgTeam& team, const GainSet& gains, LqgForm form) {
  if ((form == LqgForm::S ? gains.G.size() : gains.K.size()) != team.dms())
    throw ConfigurationError("exact_cost: gains missing for the requested form");
  const Matrix Mz = closed_loop_map(team, gains, form);
  const Matrix A = team.Q + Mz.transpose() * team.R * Mz + Mz.transpose() * team.S + team.S.transpose() * Mz;
  return (A * team.sigma_zeta).trace();
}

TeamProblem lqg_problem(const LqgTeam& team, const std::string& label) {
  team.validate();
  TeamProblem p;
  p.label = label;
  const auto n = team.zeta_dim();
  const auto z = p.primitives.add("zeta", Distribution::gaussian(Vector::Zero(static_cast<Eigen::Index>(n)), team.sigma_zeta));
  for (std::size_t i = 0; i < team.dms(); ++i) {
    MeasurementMap m;
    m.dm = i;
    m.reads.push_back(primitive_ref(z));
    std::vector<Matrix> Bs;
    for (auto j : team.direct_upstream(i)) {
      m.reads.push_back(action_ref(j));
      Bs.push_back(team.B.at({i, j}));
    }
    m.dim = static_cast<std::size_t>(team.H[i].rows());
    const Matrix Hi = team.H[i];
    m.eval = [Hi, Bs](std::span<const Vector> v) {
      Vector y = Hi * v[0];
      for (std::size_t k = 0; k < Bs.size(); ++k) y += Bs[k] * v[k + 1];
      return y;
    };
    m.spec = {{"kind", "lqg"}, {"dm", i + 1}};
    p.measurements.push_back(std::move(m));
    std::vector<SignalRef> info;
    for (auto k : team.observed(i)) info.push_back(measurement_ref(k));
    p.info.push_back(info);
    p.action_spaces.push_back(ActionSpace::unbounded(team.action_dims[i]));
  }
  const Matrix Q = team.Q, R = team.R, S = team.S;
  std::vector<std::size_t> off;
  for (std::size_t i = 0; i < team.dms(); ++i) off.push_back(team.action_offset(i));
  const auto M = static_cast<Eigen::Index>(team.total_actions());
  auto stack = [M](std::span<const Vector> actions) {
    Vector u(M);
    Eigen::Index at = 0;
    for (const auto& a : actions) {
      u.segment(at, a.size()) = a;
      at += a.size();
    }
    return u;
  };
  p.cost.reads = {z};
  p.cost.eval = [Q, R, S, stack](std::span<const Vector> prims, std::span<const Vector> actions) {
    const Vector& zeta = prims[0];
    const Vector u = stack(actions);
    return zeta.dot(Q * zeta) + u.dot(R * u) + 2.0 * u.dot(S * zeta);
  };
  const auto dims = team.action_dims;
  p.cost.gradient = [R, S, stack, off, dims](std::span<const Vector> prims, std::span<const Vector> actions,
                                             std::size_t dm) {
    const Vector g = 2.0 * (R * stack(actions) + S * prims[0]);
    return Vector(g.segment(static_cast<Eigen::Index>(off[dm]), static_cast<Eigen::Index>(dims[dm])));
  };
  p.cost.nonnegative = false;
  p.cost.jointly_convex = true;
  p.cost.spec = {{"kind", "lqg-quadratic"}};
  return p;
}

InvertibleObservation lqg_inverse(const LqgTeam& team) {
  InvertibleObservation inv;
  for (std::size_t i = 0; i < team.dms(); ++i) {
    const Matrix Hi = team.H[i];
    std::vector<Matrix> Bs;
    const auto up = team.direct_upstream(i);
    for (auto j : up) Bs.push_back(team.B.at({i, j}));
    inv.dms.push_back(InvertibleObservation::additive(
        i, {0}, static_cast<std::size_t>(Hi.rows()), [Hi](std::span<const Vector> v) { return Vector(Hi * v[0]); },
        up, Bs));
  }
  return inv;
}

Policy lqg_policy(const LqgTeam& team, const GainSet& gains, LqgForm form) {
  std::vector<PolicyEntry> entries;
  for (std::size_t i = 0; i < team.dms(); ++i) {
    const Matrix& g = form == LqgForm::S ? gains.G.at(i) : gains.K.at(i);
    entries.push_back(PolicyEntry::affine(g, Vector::Zero(g.rows())));
  }
  return Policy(std::move(entries));
}

}  // namespace teamred
