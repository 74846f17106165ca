#pragma once

#include <cstddef>
#include <map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "teamred/model.hpp"
#include "teamred/reduction_dependent.hpp"

namespace teamred {

// ŷ_i = H_i ζ + Σ_{j∈↓i} B_ij u_j, cost ζ'Qζ + u'Ru + 2u'Sζ, ζ ~ N(0, Σ_ζ).
// DM i observes ŷ_k for every k upstream of i (transitively) and ŷ_i.
struct LqgTeam {
  Matrix sigma_zeta;
  std::vector<Matrix> H;
  std::map<std::pair<std::size_t, std::size_t>, Matrix> B;  // (i, j), j < i
  std::vector<std::size_t> action_dims;
  Matrix Q, R, S;  // S is M x n; zero when absent

  std::size_t dms() const { return H.size(); }
  std::size_t zeta_dim() const { return static_cast<std::size_t>(sigma_zeta.rows()); }
  std::size_t total_actions() const;
  std::size_t action_offset(std::size_t i) const;
  std::vector<std::size_t> direct_upstream(std::size_t i) const;  // ↓i
  std::vector<std::size_t> observed(std::size_t i) const;         // ancestors, then i
  void validate() const;

  static LqgTeam from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

enum class LqgForm { S, D };

struct GainSet {
  std::vector<std::vector<std::size_t>> blocks;  // observed signals per DM
  std::vector<Matrix> G;                         // static gains, m_i x Σ p_k
  std::vector<Matrix> K;                         // dynamic gains
  Matrix block(LqgForm form, std::size_t i, std::size_t k, const LqgTeam& team) const;
  nlohmann::json to_json(const LqgTeam& team) const;
};

struct StaticSolve {
  GainSet gains;
  double relative_residual = 0.0;
};

StaticSolve solve_static_gains(const LqgTeam& team);
// Block Gauss-Seidel on the same stationarity equations; cross-check only.
GainSet solve_static_gains_iterative(const LqgTeam& team, std::size_t max_iter = 10000, double tol = 1e-14);

GainSet transport_gains_G_to_K(const LqgTeam& team, const GainSet& gains);

// u = M ζ for the linear policy of the chosen form.
Matrix closed_loop_map(const LqgTeam& team, const GainSet& gains, LqgForm form);
double exact_cost(const LqgTeam& team, const GainSet& gains, LqgForm form);

// The team as a generic problem (D form) plus its additive decomposition.
TeamProblem lqg_problem(const LqgTeam& team, const std::string& label = "lqg");
InvertibleObservation lqg_inverse(const LqgTeam& team);
Policy lqg_policy(const LqgTeam& team, const GainSet& gains, LqgForm form);

}  // namespace teamred
