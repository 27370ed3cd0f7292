#pragma once

#include <json.hpp>

#include "model/model.hpp"

namespace aotmem {

// Matrices serialize as {"rows": r, "cols": c, "data": [row-major entries]}.
nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

nlohmann::json config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);

// Field names: config, e, pos, heads[i].{W_QK | q,k}, heads[i].W_V,
// heads[i].W_O, W_U, mlp.{W_1,W_2}.
nlohmann::json params_to_json(const AoTParams& p);
AoTParams params_from_json(const nlohmann::json& j);

}  // namespace aotmem
