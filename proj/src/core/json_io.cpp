#include "hitmdp/core/json_io.h"

#include <fstream>
#include <stdexcept>

namespace hitmdp {

using nlohmann::json;

json table_to_json(const Table2& t) {
  json j = json::array();
  for (std::size_t i = 0; i < t.rows(); ++i)
    j.push_back(std::vector<double>(t.row(i), t.row(i) + t.cols()));
  return j;
}

json table_to_json(const Table3& t) {
  json j = json::array();
  for (std::size_t i = 0; i < t.dim0(); ++i) {
    json m = json::array();
    for (std::size_t k = 0; k < t.dim1(); ++k)
      m.push_back(std::vector<double>(t.row(i, k), t.row(i, k) + t.dim2()));
    j.push_back(std::move(m));
  }
  return j;
}

Table2 table2_from_json(const json& j) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    throw std::invalid_argument("expected a 2-d array");
  Table2 t(j.size(), j[0].size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (j[i].size() != t.cols()) throw std::invalid_argument("ragged 2-d array");
    for (std::size_t k = 0; k < t.cols(); ++k) t(i, k) = j[i][k].get<double>();
  }
  return t;
}

Table3 table3_from_json(const json& j) {
  if (!j.is_array() || j.empty() || !j[0].is_array() || j[0].empty())
    throw std::invalid_argument("expected a 3-d array");
  Table3 t(j.size(), j[0].size(), j[0][0].size());
  for (std::size_t i = 0; i < t.dim0(); ++i) {
    if (j[i].size() != t.dim1()) throw std::invalid_argument("ragged 3-d array");
    for (std::size_t k = 0; k < t.dim1(); ++k) {
      if (j[i][k].size() != t.dim2()) throw std::invalid_argument("ragged 3-d array");
      for (std::size_t l = 0; l < t.dim2(); ++l) t(i, k, l) = j[i][k][l].get<double>();
    }
  }
  return t;
}

json to_json(const FiniteHiTMDP& mdp) {
  json j;
  j["n_states"] = mdp.n_states;
  j["n_options"] = mdp.n_options;
  j["n_actions"] = mdp.n_actions;
  j["transition"] = table_to_json(mdp.transition);
  j["reward"] = table_to_json(mdp.reward);
  j["discount"] = mdp.discount;
  j["initial"] = table_to_json(mdp.initial);
  if (mdp.regularizer_mode == RegularizerMode::MutualInfo) j["regularizer_mode"] = "mutual_info";
  return j;
}

FiniteHiTMDP hitmdp_from_json(const json& j) {
  FiniteHiTMDP m;
  m.n_states = j.at("n_states").get<int>();
  m.n_options = j.at("n_options").get<int>();
  m.n_actions = j.at("n_actions").get<int>();
  m.transition = table3_from_json(j.at("transition"));
  m.reward = table2_from_json(j.at("reward"));
  m.discount = j.at("discount").get<double>();
  m.initial = table2_from_json(j.at("initial"));
  if (j.contains("regularizer_mode")) {
    auto mode = j["regularizer_mode"].get<std::string>();
    if (mode == "mutual_info") m.regularizer_mode = RegularizerMode::MutualInfo;
    else if (mode == "zero") m.regularizer_mode = RegularizerMode::Zero;
    else throw std::invalid_argument("unknown regularizer_mode: " + mode);
  }
  m.validate();
  return m;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return json::parse(in);
}

void write_json_file(const std::string& path, const json& j, int indent) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(indent) << "\n";
}

}  // namespace hitmdp
