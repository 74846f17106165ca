#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "teamred/types.hpp"

namespace teamred {

// Box constraint on a DM's action; bounds may be infinite.
struct ActionSpace {
  Vector lower;
  Vector upper;

  static ActionSpace unbounded(std::size_t dim);
  static ActionSpace nonnegative(std::size_t dim);

  std::size_t dim() const { return static_cast<std::size_t>(lower.size()); }
  bool bounded() const;
  bool contains(const Vector& u, double tol = 0.0) const;
  Vector project(const Vector& u) const;
};

struct AffineMap {
  Matrix gain;  // out_dim x in_dim, columns follow the I^i concatenation
  Vector bias;
};

struct TabularMap {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::map<std::vector<double>, Vector> table;
};

struct ClosureMap {
  std::string label;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::function<Vector(const Vector&)> fn;
};

class PolicyEntry {
 public:
  enum class Kind { affine, tabular, closure };

  static PolicyEntry affine(Matrix gain, Vector bias);
  static PolicyEntry zero(std::size_t in_dim, std::size_t out_dim);
  static PolicyEntry constant(std::size_t in_dim, Vector value);
  static PolicyEntry tabular(std::size_t in_dim, std::size_t out_dim,
                             std::map<std::vector<double>, Vector> table);
  static PolicyEntry closure(std::string label, std::size_t in_dim,
                             std::size_t out_dim,
                             std::function<Vector(const Vector&)> fn);

  Vector operator()(const Vector& info) const;

  Kind kind() const;
  std::size_t in_dim() const;
  std::size_t out_dim() const;
  const AffineMap* as_affine() const { return std::get_if<AffineMap>(&rep_); }
  const TabularMap* as_tabular() const { return std::get_if<TabularMap>(&rep_); }
  const std::string& label() const;

  // Same map followed by projection onto the box.
  PolicyEntry clamped(const ActionSpace& box) const;
  bool is_clamped() const { return clamp_.has_value(); }

 private:
  using Rep = std::variant<AffineMap, TabularMap, ClosureMap>;
  explicit PolicyEntry(Rep rep) : rep_(std::move(rep)) {}

  Rep rep_;
  std::optional<ActionSpace> clamp_;
};

class Policy {
 public:
  Policy() = default;
  explicit Policy(std::vector<PolicyEntry> entries)
      : entries_(std::move(entries)) {}

  std::size_t size() const { return entries_.size(); }
  const PolicyEntry& operator[](std::size_t i) const { return entries_.at(i); }
  const std::vector<PolicyEntry>& entries() const { return entries_; }
  Policy with_entry(std::size_t i, PolicyEntry e) const;

 private:
  std::vector<PolicyEntry> entries_;
};

// Recovers an affine representation by probing at 0 and the unit vectors,
// then confirms on random points. Empty if the entry is not affine.
std::optional<AffineMap> affine_probe(const PolicyEntry& entry,
                                      double tol = 1e-9);

// {"entries": [{"dm", "kind", ...}]}; closures serialize as a marker.
nlohmann::json policy_to_json(const Policy& policy);
Policy policy_from_json(const nlohmann::json& j);

}  // namespace teamred
