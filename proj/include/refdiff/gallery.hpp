#pragma once

#include "refdiff/model.hpp"
#include "refdiff/operators.hpp"

#include <optional>
#include <string>

namespace refdiff {

struct ExampleSystem {
  std::string name;
  nlohmann::json params;
  DomainSpec domain;
  CoefficientField coef;
  bool well_posed = true;
  std::string condition;  // the example's parameter condition
  std::optional<Density> density;
};

ExampleSystem make_example(const std::string& name, const nlohmann::json& params = nlohmann::json::object());
Density closed_form_density(const std::string& name, const nlohmann::json& params = nlohmann::json::object());

/// θe^{-θx} on [0, ∞).
Density exp_density(double theta);
/// Π θ_i e^{-θ_i x_i}.
Density product_density(const Vec& theta);
Density uniform_density(int dim, double c);

/// Domain from the JSON produced by domain_to_json; smooth pieces are rebuilt from the builtin registry.
DomainSpec domain_from_json(const nlohmann::json& j);
/// Coefficients from {"drift": [...], "sigma": [[...]]} (constant fields only).
CoefficientField coef_from_json(const nlohmann::json& j, int dim);

}  // namespace refdiff
