#include "model/model_json.hpp"

#include <string>

#include "common/error.hpp"

namespace aotmem {

using nlohmann::json;

namespace {

const json& field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw InvalidArgument(std::string("model json: missing field '") + key + "'");
  return *it;
}

}  // namespace

json matrix_to_json(const Matrix& m) {
  return json{{"rows", m.rows()}, {"cols", m.cols()},
              {"data", std::vector<double>(m.data().begin(), m.data().end())}};
}

Matrix matrix_from_json(const json& j) {
  try {
    const auto rows = field(j, "rows").get<std::size_t>();
    const auto cols = field(j, "cols").get<std::size_t>();
    auto data = field(j, "data").get<std::vector<double>>();
    if (data.size() != rows * cols)
      throw InvalidArgument("model json: matrix data length does not match its shape header");
    return Matrix(rows, cols, std::move(data));
  } catch (const json::exception& ex) {
    throw InvalidArgument(std::string("model json: bad matrix: ") + ex.what());
  }
}

json config_to_json(const ModelConfig& c) {
  return json{{"N", c.N},
              {"S", c.S},
              {"d", c.d},
              {"d_h", c.d_h},
              {"H", c.H},
              {"variant", std::string(to_string(c.variant))},
              {"mlp_width", c.mlp_width},
              {"qk_mode", std::string(to_string(c.qk_mode))}};
}

ModelConfig config_from_json(const json& j) {
  try {
    ModelConfig c;
    c.N = field(j, "N").get<int>();
    c.S = field(j, "S").get<int>();
    c.d = field(j, "d").get<int>();
    c.d_h = field(j, "d_h").get<int>();
    c.H = field(j, "H").get<int>();
    c.variant = parse_variant(j.value("variant", std::string("aot")));
    c.mlp_width = j.value("mlp_width", 0);
    c.qk_mode = parse_qk_mode(j.value("qk_mode", std::string("full")));
    c.validate();
    return c;
  } catch (const json::exception& ex) {
    throw InvalidArgument(std::string("model json: bad config: ") + ex.what());
  }
}

json params_to_json(const AoTParams& p) {
  json heads = json::array();
  for (const auto& h : p.heads) {
    json jh;
    if (h.is_rank1()) {
      jh["q"] = matrix_to_json(h.q);
      jh["k"] = matrix_to_json(h.k);
    } else {
      jh["W_QK"] = matrix_to_json(h.W_QK);
    }
    jh["W_V"] = matrix_to_json(h.W_V);
    jh["W_O"] = matrix_to_json(h.W_O);
    heads.push_back(std::move(jh));
  }
  json j{{"config", config_to_json(p.config)},
         {"e", matrix_to_json(p.e)},
         {"pos", matrix_to_json(p.pos)},
         {"heads", std::move(heads)},
         {"W_U", matrix_to_json(p.W_U)}};
  if (p.mlp) j["mlp"] = json{{"W_1", matrix_to_json(p.mlp->W_1)}, {"W_2", matrix_to_json(p.mlp->W_2)}};
  return j;
}

AoTParams params_from_json(const json& j) {
  AOTMEM_REQUIRE(j.is_object(), "model json: expected an object");
  AoTParams p;
  p.config = config_from_json(field(j, "config"));
  p.e = matrix_from_json(field(j, "e"));
  p.pos = matrix_from_json(field(j, "pos"));
  p.W_U = matrix_from_json(field(j, "W_U"));
  const json& heads = field(j, "heads");
  AOTMEM_REQUIRE(heads.is_array(), "model json: heads must be an array");
  for (const auto& jh : heads) {
    HeadParams h;
    if (jh.contains("W_QK")) {
      h.W_QK = matrix_from_json(jh["W_QK"]);
    } else {
      h.q = matrix_from_json(field(jh, "q"));
      h.k = matrix_from_json(field(jh, "k"));
    }
    h.W_V = matrix_from_json(field(jh, "W_V"));
    h.W_O = matrix_from_json(field(jh, "W_O"));
    p.heads.push_back(std::move(h));
  }
  if (j.contains("mlp")) {
    const json& m = j["mlp"];
    p.mlp = MlpParams{matrix_from_json(field(m, "W_1")), matrix_from_json(field(m, "W_2"))};
  }
  p.validate();
  return p;
}

}  // namespace aotmem
