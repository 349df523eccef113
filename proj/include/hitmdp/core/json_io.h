#pragma once

#include <string>

#include "hitmdp/core/hitmdp.h"
#include "json.hpp"

namespace hitmdp {

nlohmann::json table_to_json(const Table2& t);
nlohmann::json table_to_json(const Table3& t);
Table2 table2_from_json(const nlohmann::json& j);
Table3 table3_from_json(const nlohmann::json& j);

nlohmann::json to_json(const FiniteHiTMDP& mdp);
FiniteHiTMDP hitmdp_from_json(const nlohmann::json& j);

nlohmann::json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& j, int indent = 2);

}  // namespace hitmdp
