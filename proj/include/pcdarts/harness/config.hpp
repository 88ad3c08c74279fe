// Copyright 2026 The pcdarts Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <array>
#include <filesystem>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "pcdarts/data/dataset.hpp"
#include "pcdarts/engine/search.hpp"

namespace pcdarts {

/// Bad or unreadable configuration; maps to the usage exit code.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  std::string source = "synthetic";  // synthetic | cifar10
  std::string cifar_dir;
  SyntheticSpec synthetic;
  Normalization norm;
};

struct RunConfig {
  DataConfig data;
  SearchConfig search;
  std::string precision = "float";  // float | double
};

namespace detail {

inline std::string unquote(std::string v) {
  const auto b = v.find_first_not_of(" \t");
  const auto e = v.find_last_not_of(" \t");
  v = b == std::string::npos ? "" : v.substr(b, e - b + 1);
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front())
    v = v.substr(1, v.size() - 2);
  return v;
}

class ConfigReader {
 public:
  explicit ConfigReader(const boost::property_tree::ptree& pt) : pt_(pt) {}

  std::string str(const std::string& key, const std::string& def) {
    seen_.insert(key);
    auto v = pt_.get_optional<std::string>(key);
    return v ? unquote(*v) : def;
  }
  template <class N>
  N num(const std::string& key, N def) {
    const std::string raw = str(key, "");
    if (raw.empty()) return def;
    std::istringstream is(raw);
    N out{};
    is >> out;
    if (is.fail() || !is.eof() || (std::is_unsigned_v<N> && raw.front() == '-'))
      throw ConfigError("config: key '" + key + "' has invalid value '" + raw + "'");
    return out;
  }
  bool flag(const std::string& key, bool def) {
    const std::string raw = str(key, "");
    if (raw.empty()) return def;
    if (raw == "true" || raw == "1") return true;
    if (raw == "false" || raw == "0") return false;
    throw ConfigError("config: key '" + key + "' expects true/false, got '" + raw + "'");
  }
  std::array<double, 3> triple(const std::string& key, std::array<double, 3> def) {
    const std::string raw = str(key, "");
    if (raw.empty()) return def;
    std::array<double, 3> out{};
    std::string s = raw;
    for (char& c : s)
      if (c == ',' || c == '[' || c == ']') c = ' ';
    std::istringstream is(s);
    for (auto& x : out)
      if (!(is >> x)) throw ConfigError("config: key '" + key + "' needs three numbers, got '" + raw + "'");
    return out;
  }

  /// Every key present in the file must have been consumed.
  void reject_unknown() const {
    for (const auto& [section, body] : pt_) {
      if (body.empty()) {
        throw ConfigError("config: key '" + section + "' must live in a [section]");
      }
      for (const auto& [key, value] : body) {
        const std::string full = section + "." + key;
        if (!seen_.count(full)) throw ConfigError("config: unknown key '" + full + "'");
      }
    }
  }

 private:
  const boost::property_tree::ptree& pt_;
  std::set<std::string> seen_;
};

}  // namespace detail

/// Parses the TOML-style config text (sections of key = value lines).
inline RunConfig parse_config(const std::string& text, const std::string& origin = "<string>") {
  boost::property_tree::ptree pt;
  try {
    std::istringstream is(text);
    boost::property_tree::read_ini(is, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config '" + origin + "': " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  detail::ConfigReader r(pt);
  RunConfig c;
  auto& d = c.data;
  d.source = r.str("data.source", d.source);
  if (d.source != "synthetic" && d.source != "cifar10")
    throw ConfigError("config: data.source must be synthetic or cifar10, got '" + d.source + "'");
  d.cifar_dir = r.str("data.cifar_dir", d.cifar_dir);
  d.synthetic.classes = r.num("data.classes", d.synthetic.classes);
  d.synthetic.resolution = r.num("data.resolution", d.synthetic.resolution);
  d.synthetic.count = r.num("data.count", d.synthetic.count);
  d.synthetic.noise = r.num("data.noise", d.synthetic.noise);
  d.synthetic.seed = r.num("data.seed", d.synthetic.seed);
  d.norm.mean = r.triple("data.mean", d.norm.mean);
  d.norm.stddev = r.triple("data.std", d.norm.stddev);

  auto& s = c.search;
  s.augment.enabled = r.flag("data.augment", s.augment.enabled);
  s.augment.pad = r.num("data.augment_pad", s.augment.pad);
  s.augment.flip = r.flag("data.augment_flip", s.augment.flip);

  s.net.k = r.num("search.k", s.net.k);
  s.net.nodes = r.num("search.nodes", s.net.nodes);
  s.net.cells = r.num("search.cells", s.net.cells);
  s.net.init_channels = r.num("search.init_channels", s.net.init_channels);
  s.net.stem_multiplier = r.num("search.stem_multiplier", s.net.stem_multiplier);
  s.net.partial_connection = r.flag("search.partial_connection", s.net.partial_connection);
  s.net.edge_normalization = r.flag("search.edge_normalization", s.net.edge_normalization);
  const std::string mask = r.str("search.mask_mode", "efficient");
  if (mask == "efficient") {
    s.net.mask_mode = MaskMode::kEfficient;
  } else if (mask == "random") {
    s.net.mask_mode = MaskMode::kRandom;
  } else {
    throw ConfigError("config: search.mask_mode must be efficient or random, got '" + mask + "'");
  }
  s.epochs = r.num("search.epochs", s.epochs);
  s.warm_up_epochs = r.num("search.warm_up_epochs", s.warm_up_epochs);
  s.batch_size = r.num("search.batch_size", s.batch_size);
  s.seed = r.num("search.seed", s.seed);
  c.precision = r.str("search.precision", c.precision);
  if (c.precision != "float" && c.precision != "double")
    throw ConfigError("config: search.precision must be float or double, got '" + c.precision + "'");

  s.w_lr = r.num("weights.lr", s.w_lr);
  s.w_momentum = r.num("weights.momentum", s.w_momentum);
  s.w_weight_decay = r.num("weights.weight_decay", s.w_weight_decay);
  s.w_grad_clip = r.num("weights.grad_clip", s.w_grad_clip);

  s.a_lr = r.num("arch.lr", s.a_lr);
  s.a_beta1 = r.num("arch.beta1", s.a_beta1);
  s.a_beta2 = r.num("arch.beta2", s.a_beta2);
  s.a_weight_decay = r.num("arch.weight_decay", s.a_weight_decay);

  s.derive.keep_zero = r.flag("derive.keep_zero", s.derive.keep_zero);
  const std::string score = r.str("derive.edge_score", "max");
  if (score == "max") {
    s.derive.score = EdgeScore::kMax;
  } else if (score == "sum") {
    s.derive.score = EdgeScore::kSum;
  } else {
    throw ConfigError("config: derive.edge_score must be max or sum, got '" + score + "'");
  }
  r.reject_unknown();
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

/// The resolved configuration as recorded in manifests.
inline nlohmann::ordered_json config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  const auto& d = c.data;
  const auto& s = c.search;
  j["data"] = {{"source", d.source},
               {"cifar_dir", d.cifar_dir},
               {"classes", d.synthetic.classes},
               {"resolution", d.synthetic.resolution},
               {"count", d.synthetic.count},
               {"noise", d.synthetic.noise},
               {"seed", d.synthetic.seed},
               {"mean", d.norm.mean},
               {"std", d.norm.stddev},
               {"augment", s.augment.enabled},
               {"augment_pad", s.augment.pad},
               {"augment_flip", s.augment.flip}};
  j["search"] = {{"k", s.net.k},
                 {"nodes", s.net.nodes},
                 {"cells", s.net.cells},
                 {"init_channels", s.net.init_channels},
                 {"stem_multiplier", s.net.stem_multiplier},
                 {"partial_connection", s.net.partial_connection},
                 {"edge_normalization", s.net.edge_normalization},
                 {"mask_mode", s.net.mask_mode == MaskMode::kEfficient ? "efficient" : "random"},
                 {"epochs", s.epochs},
                 {"warm_up_epochs", s.warm_up_epochs},
                 {"batch_size", s.batch_size},
                 {"seed", s.seed},
                 {"precision", c.precision}};
  j["weights"] = {{"lr", s.w_lr},
                  {"momentum", s.w_momentum},
                  {"weight_decay", s.w_weight_decay},
                  {"grad_clip", s.w_grad_clip}};
  j["arch"] = {{"lr", s.a_lr},
               {"beta1", s.a_beta1},
               {"beta2", s.a_beta2},
               {"weight_decay", s.a_weight_decay}};
  j["derive"] = {{"keep_zero", s.derive.keep_zero},
                 {"edge_score", s.derive.score == EdgeScore::kMax ? "max" : "sum"}};
  return j;
}

/// Loads the dataset named by the config.
inline Dataset load_dataset(const DataConfig& d) {
  if (d.source == "cifar10") {
    if (d.cifar_dir.empty()) throw ConfigError("config: data.cifar_dir is required for cifar10");
    return read_cifar10(d.cifar_dir, d.norm, true);
  }
  return make_synthetic(d.synthetic);
}

}  // namespace pcdarts
