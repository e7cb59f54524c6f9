#pragma once

#include <json.hpp>

#include <string>

#include "oqreps/linear_mdp.hpp"

namespace oqreps {

/// Instance file schema (JSON):
///
///   {
///     "format": "oqreps-linear-mdp", "version": 1,
///     "layers": [1, 3, 3, 1], "K": 2, "d": 4, "sigma": 1.414..., "R": 1.0,
///     "features": [[...], ...],   // per decision layer, (|X_h| K) x d, row-major
///     "measures": [[...], ...]    // per decision layer, d x |X_{h+1}|, row-major
///   }
///
/// Doubles are written in shortest round-trip form, so save/load is bit-exact
/// for finite values.
nlohmann::json instance_to_json(const LinearMdp& mdp);
LinearMdp instance_from_json(const nlohmann::json& j);

void save_instance(const LinearMdp& mdp, const std::string& path);
LinearMdp load_instance(const std::string& path);

}  // namespace oqreps
