#pragma once

#include <string>

#include "bellman/types.hpp"

namespace bellman {

/// Dataset CSV with header `s0,a0,y0,s1` plus a JSON sidecar describing the
/// state alphabet and action count.
void save_dataset_csv(const TransitionDataset& data, const std::string& csv_path,
                      const std::string& sidecar_path);

std::string dataset_csv_string(const TransitionDataset& data);
std::string alphabet_sidecar_json(const TransitionDataset& data);

TransitionDataset load_dataset_csv(const std::string& csv_path,
                                   const std::string& sidecar_path);

/// Default sidecar path convention: `<csv>.alphabet.json`.
std::string sidecar_path_for(const std::string& csv_path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace bellman
