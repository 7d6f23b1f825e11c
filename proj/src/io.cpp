#include "bellman/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace bellman {

std::string dataset_csv_string(const TransitionDataset& data) {
  std::string out = "s0,a0,y0,s1\n";
  char buf[128];
  for (int i = 0; i < data.n(); ++i) {
    const Transition& t = data[i];
    std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%d\n", t.s0, t.a0, t.y0, t.s1);
    out += buf;
  }
  return out;
}

std::string alphabet_sidecar_json(const TransitionDataset& data) {
  nlohmann::json j;
  j["num_states"] = data.alphabet().size();
  j["num_actions"] = data.num_actions();
  if (data.alphabet().is_grid()) j["state_dims"] = data.alphabet().grid_dims();
  return j.dump(2);
}

void save_dataset_csv(const TransitionDataset& data, const std::string& csv_path,
                      const std::string& sidecar_path) {
  write_text_file(csv_path, dataset_csv_string(data));
  write_text_file(sidecar_path, alphabet_sidecar_json(data));
}

TransitionDataset load_dataset_csv(const std::string& csv_path,
                                   const std::string& sidecar_path) {
  nlohmann::json j = nlohmann::json::parse(read_text_file(sidecar_path));
  StateAlphabet alphabet;
  if (j.contains("state_dims"))
    alphabet = StateAlphabet::grid(j["state_dims"].get<std::vector<int>>());
  else
    alphabet = StateAlphabet::indexed(j.at("num_states").get<int>());
  const int num_actions = j.at("num_actions").get<int>();

  std::istringstream in(read_text_file(csv_path));
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty dataset file " + csv_path);
  if (line.size() && line.back() == '\r') line.pop_back();
  if (line != "s0,a0,y0,s1")
    throw std::runtime_error("unexpected dataset header in " + csv_path + ": " + line);
  std::vector<Transition> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Transition t;
    if (std::sscanf(line.c_str(), "%d,%d,%lf,%d", &t.s0, &t.a0, &t.y0, &t.s1) != 4)
      throw std::runtime_error("malformed dataset row: " + line);
    records.push_back(t);
  }
  return TransitionDataset(std::move(alphabet), num_actions, std::move(records));
}

std::string sidecar_path_for(const std::string& csv_path) {
  return csv_path + ".alphabet.json";
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace bellman
