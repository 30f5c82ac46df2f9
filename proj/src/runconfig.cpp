// Copyright (c) 2026 gifnet-cpp authors
// SPDX-License-Identifier: Apache-2.0

#include "gifnet/runconfig.hpp"

#include <fstream>
#include <stdexcept>

namespace gifnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw std::invalid_argument("config: bad value '" + value + "' for " + key);
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) bad_value(key, value);
    return v;
  } catch (const std::invalid_argument&) {
    bad_value(key, value);
  } catch (const std::out_of_range&) {
    bad_value(key, value);
  }
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) bad_value(key, value);
    return static_cast<uint64_t>(v);
  } catch (const std::invalid_argument&) {
    bad_value(key, value);
  } catch (const std::out_of_range&) {
    bad_value(key, value);
  }
}

float parse_float(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const float v = std::stof(value, &used);
    if (used != value.size()) bad_value(key, value);
    return v;
  } catch (const std::invalid_argument&) {
    bad_value(key, value);
  } catch (const std::out_of_range&) {
    bad_value(key, value);
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value);
}

}  // namespace

void apply_config_entry(RunConfig& rc, const std::string& key,
                        const std::string& value) {
  if (key == "arch.base_channels") rc.arch.base_channels = parse_int(key, value);
  else if (key == "arch.enc_layers") rc.arch.enc_layers = parse_int(key, value);
  else if (key == "arch.branch_layers") rc.arch.branch_layers = parse_int(key, value);
  else if (key == "arch.embed_dim") rc.arch.embed_dim = parse_int(key, value);
  else if (key == "arch.heads") rc.arch.heads = parse_int(key, value);
  else if (key == "arch.window") rc.arch.window = parse_int(key, value);
  else if (key == "arch.mlp_ratio") rc.arch.mlp_ratio = parse_float(key, value);
  else if (key == "train.steps") rc.train.steps = parse_int(key, value);
  else if (key == "train.batch") rc.train.batch = parse_int(key, value);
  else if (key == "train.crop") rc.train.crop = parse_int(key, value);
  else if (key == "train.lr") rc.train.lr = parse_float(key, value);
  else if (key == "train.clip_norm") rc.train.clip_norm = parse_float(key, value);
  else if (key == "train.seed") rc.train.seed = parse_u64(key, value);
  else if (key == "train.alternation") rc.train.alternation = parse_alternation(value);
  else if (key == "train.checkpoint_every")
    rc.train.checkpoint_every = parse_int(key, value);
  else if (key == "train.multi_task") rc.train.multi_task = parse_bool(key, value);
  else if (key == "train.use_cfgm") rc.train.use_cfgm = parse_bool(key, value);
  else if (key == "train.use_rec") rc.train.use_rec = parse_bool(key, value);
  else if (key == "train.saliency") rc.train.saliency = parse_saliency_backend(value);
  else if (key == "train.raw_softmax") rc.train.raw_softmax = parse_bool(key, value);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument(path + ": cannot open config file");

  RunConfig rc;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": expected key = value");
    apply_config_entry(rc, trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
  }
  return rc;
}

std::string config_schema_text() {
  return
      "arch.base_channels int    arch.enc_layers int     arch.branch_layers int\n"
      "arch.embed_dim int        arch.heads int          arch.window int\n"
      "arch.mlp_ratio float\n"
      "train.steps int           train.batch int         train.crop int\n"
      "train.lr float            train.clip_norm float   train.seed uint\n"
      "train.alternation per-step|per-epoch              train.checkpoint_every int\n"
      "train.multi_task bool     train.use_cfgm bool     train.use_rec bool\n"
      "train.saliency spatial-grad|classifier-grad       train.raw_softmax bool\n";
}

}  // namespace gifnet
