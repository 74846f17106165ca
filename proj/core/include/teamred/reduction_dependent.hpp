#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "teamred/model.hpp"
#include "teamred/monte_carlo.hpp"

namespace teamred {

// ŷ^D_i = g(h(ζ), u^up) with ŷ^S_i = h(ζ) and an analytic inverse in the first argument.
struct ObservationDecomposition {
  std::size_t dm = 0;
  std::vector<std::size_t> static_reads;  // primitive indices read by h
  std::size_t dim = 0;
  MeasurementEval h;
  std::vector<std::size_t> upstream;  // DMs whose actions enter g, in order
  std::function<Vector(const Vector& h, std::span<const Vector> u)> g;
  std::function<Vector(const Vector& y, std::span<const Vector> u)> g_inv;
  bool affine_in_actions = true;
  std::string kind;
};

struct InvertibleObservation {
  std::vector<ObservationDecomposition> dms;
  // Decomposition with no action mixing for a measurement that is already static.
  static ObservationDecomposition identity(const TeamProblem& problem, std::size_t dm);
  // g(h, u) = h + Σ_k B_k u^k.
  static ObservationDecomposition additive(std::size_t dm, std::vector<std::size_t> static_reads,
                                           std::size_t dim, MeasurementEval h,
                                           std::vector<std::size_t> upstream, std::vector<Matrix> mixing);
};

// Round-trip and consistency failures on sampled paths; empty when valid.
std::vector<std::string> validate_inverse(const TeamProblem& problem, const InvertibleObservation& inv,
                                          std::size_t samples = 64, std::uint64_t seed = 7);

enum class Form { D, S, DCS, CS };
std::string to_string(Form form);
Form form_from_string(const std::string& s);

struct FormTag {
  Form form = Form::D;
  // K_i per DM for control-sharing forms; defaults to ↓i.
  std::optional<std::vector<std::vector<std::size_t>>> sharing;
};

// The requested form of a dynamic problem. Static forms read h_i(ζ); control
// sharing appends the shared upstream actions at the end of I^i.
TeamProblem make_form(const TeamProblem& problem, const InvertibleObservation& inv, const FormTag& tag);

// Policy transport between a dynamic form and its static counterpart. The
// problem fixes the information layout (D or D-CS); actions present in I^i
// are read from the information instead of being recomputed.
Policy transport_policy_D_to_S(const TeamProblem& problem, const InvertibleObservation& inv,
                               const Policy& gamma_d);
Policy transport_policy_S_to_D(const TeamProblem& problem, const InvertibleObservation& inv,
                               const Policy& gamma_s);

// Replaces closures that are affine (probed) by affine entries.
Policy simplify_affine(const Policy& policy);

struct ConditionCResult {
  bool holds = true;
  double max_second_difference = 0.0;
  double scale = 0.0;
};

// Second differences of u^{↓i} ↦ γ^D_i(I^i rebuilt from h(ζ) and u^{↓i}).
ConditionCResult check_condition_C(const TeamProblem& problem, const InvertibleObservation& inv,
                                   const Policy& gamma_d, const MonteCarloPlan& plan);

}  // namespace teamred
