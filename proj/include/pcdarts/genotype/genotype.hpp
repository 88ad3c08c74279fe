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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcdarts/nas/operations.hpp"
#include "pcdarts/search/arch_params.hpp"

namespace pcdarts {

class GenotypeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One kept edge: operation name and predecessor node index.
struct GenotypeEdge {
  std::string op;
  std::size_t from = 0;
  bool operator==(const GenotypeEdge&) const = default;
};

/// Two entries per intermediate node, in node order, for each cell type.
struct Genotype {
  std::vector<GenotypeEdge> normal, reduce;
  std::vector<std::size_t> concat;

  /// Node count N implied by the entry count (2 inputs + intermediates).
  std::size_t nodes() const { return normal.size() / 2 + 2; }
  const std::vector<GenotypeEdge>& cell(CellType t) const {
    return t == CellType::kNormal ? normal : reduce;
  }
  bool operator==(const Genotype&) const = default;
};

inline std::vector<std::size_t> default_concat(std::size_t nodes) {
  std::vector<std::size_t> c;
  for (std::size_t j = 2; j < nodes; ++j) c.push_back(j);
  return c;
}

enum class EdgeScore { kMax, kSum };

struct DeriveOptions {
  bool edge_normalization = true;
  bool keep_zero = false;
  EdgeScore score = EdgeScore::kMax;
};

namespace detail {

inline std::vector<double> softmax_span(const double* v, std::size_t n) {
  double mx = v[0];
  for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, v[k]);
  std::vector<double> p(n);
  double s = 0;
  for (std::size_t k = 0; k < n; ++k) s += (p[k] = std::exp(v[k] - mx));
  for (auto& e : p) e /= s;
  return p;
}

}  // namespace detail

/// Derives one cell. `alpha` is row-major (edges x ops), `beta` one logit per
/// edge (ignored unless edge normalisation is on). Per node, the two edges
/// with the largest score survive, each with its best admissible op; ties go
/// to the lower predecessor, then to the earlier op. Entries are emitted in
/// survival order.
inline std::vector<GenotypeEdge> derive_cell(const std::vector<double>& alpha,
                                             const std::vector<double>& beta,
                                             std::size_t nodes, const OperationSet& ops,
                                             const DeriveOptions& opts = {}) {
  if (nodes < 3) throw GenotypeError("derive: need at least 3 nodes, got " + std::to_string(nodes));
  const std::size_t E = num_edges(nodes), O = ops.size();
  if (alpha.size() != E * O)
    throw GenotypeError("derive: alpha has " + std::to_string(alpha.size()) + " entries, expected " +
                        std::to_string(E) + "x" + std::to_string(O));
  if (opts.edge_normalization && beta.size() != E)
    throw GenotypeError("derive: beta has " + std::to_string(beta.size()) + " entries, expected " +
                        std::to_string(E));
  bool any_admissible = false;
  for (auto k : ops) any_admissible |= opts.keep_zero || k != OpKind::kZero;
  if (!any_admissible) throw GenotypeError("derive: operation set has no admissible op");

  std::vector<GenotypeEdge> out;
  for (std::size_t j = 2; j < nodes; ++j) {
    const std::size_t off = edge_offset(j);
    std::vector<double> coef(j, 1.0);
    if (opts.edge_normalization) coef = detail::softmax_span(beta.data() + off, j);
    struct Cand {
      double score;
      std::size_t i, op;
    };
    std::vector<Cand> cands;
    for (std::size_t i = 0; i < j; ++i) {
      const auto w = detail::softmax_span(alpha.data() + (off + i) * O, O);
      std::size_t best = O;
      double sum = 0;
      for (std::size_t o = 0; o < O; ++o) {
        if (!opts.keep_zero && ops[o] == OpKind::kZero) continue;
        sum += w[o];
        if (best == O || w[o] > w[best]) best = o;
      }
      const double s = opts.score == EdgeScore::kMax ? w[best] * coef[i] : sum * coef[i];
      cands.push_back({s, i, best});
    }
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Cand& a, const Cand& b) { return a.score > b.score; });
    const std::size_t keep = std::min<std::size_t>(2, cands.size());
    for (std::size_t r = 0; r < keep; ++r)
      out.push_back({std::string(op_name(ops[cands[r].op])), cands[r].i});
  }
  return out;
}

template <class T>
std::vector<double> to_doubles(const Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

template <class T>
Genotype derive(const ArchParams<T>& arch, std::size_t nodes, const OperationSet& ops,
                const DeriveOptions& opts = {}) {
  if (arch.nodes != nodes || arch.num_ops != ops.size())
    throw GenotypeError("derive: arch params built for " + std::to_string(arch.nodes) +
                        " nodes / " + std::to_string(arch.num_ops) + " ops, asked for " +
                        std::to_string(nodes) + " nodes / " + std::to_string(ops.size()) + " ops");
  Genotype g;
  g.normal = derive_cell(to_doubles(arch.alpha_normal), to_doubles(arch.beta_normal), nodes, ops, opts);
  g.reduce = derive_cell(to_doubles(arch.alpha_reduce), to_doubles(arch.beta_reduce), nodes, ops, opts);
  g.concat = default_concat(nodes);
  return g;
}

struct Violation {
  std::string code;
  std::string detail;
};

/// Structural checks; an empty result means the genotype is valid for N nodes.
inline std::vector<Violation> validate(const Genotype& g, std::size_t nodes,
                                       bool allow_zero = false) {
  std::vector<Violation> v;
  if (nodes < 3) {
    v.push_back({"too-few-nodes", "N=" + std::to_string(nodes)});
    return v;
  }
  const std::size_t want = 2 * (nodes - 2);
  for (auto t : {CellType::kNormal, CellType::kReduce}) {
    const std::string cell = t == CellType::kNormal ? "normal" : "reduce";
    const auto& entries = g.cell(t);
    if (entries.size() != want) {
      v.push_back({"wrong-arity", cell + ": " + std::to_string(entries.size()) +
                                      " entries, expected " + std::to_string(want)});
    }
    for (std::size_t e = 0; e < entries.size(); ++e) {
      const std::size_t j = 2 + e / 2;
      const auto& en = entries[e];
      const std::string where = cell + " node " + std::to_string(j);
      auto kind = op_from_name(en.op);
      if (!kind) {
        v.push_back({"unknown-op", where + ": '" + en.op + "'"});
      } else if (*kind == OpKind::kZero && !allow_zero) {
        v.push_back({"excluded-op", where + ": '" + en.op + "'"});
      }
      if (en.from >= j) {
        v.push_back({"bad-predecessor", where + ": predecessor " + std::to_string(en.from) +
                                            " is not below " + std::to_string(j)});
      }
      if (e % 2 == 1 && entries[e - 1].from == en.from) {
        v.push_back({"duplicate-predecessor", where + ": predecessor " + std::to_string(en.from) +
                                                  " used twice"});
      }
    }
  }
  if (g.concat.empty()) v.push_back({"bad-concat", "empty concat list"});
  for (std::size_t k = 0; k < g.concat.size(); ++k) {
    if (g.concat[k] < 2 || g.concat[k] >= nodes)
      v.push_back({"bad-concat", "node " + std::to_string(g.concat[k]) + " is not intermediate"});
    else if (k > 0 && g.concat[k] <= g.concat[k - 1])
      v.push_back({"bad-concat", "concat list not strictly increasing"});
  }
  return v;
}

inline std::string describe(const std::vector<Violation>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : "; ") + x.code + " (" + x.detail + ")";
  return s;
}

inline nlohmann::ordered_json genotype_to_json(const Genotype& g) {
  nlohmann::ordered_json j;
  auto cell = [](const std::vector<GenotypeEdge>& c) {
    auto a = nlohmann::ordered_json::array();
    for (const auto& e : c) a.push_back({e.op, e.from});
    return a;
  };
  j["normal"] = cell(g.normal);
  j["reduce"] = cell(g.reduce);
  j["concat"] = g.concat;
  return j;
}

/// Canonical file text: one line per key, entries as [op, predecessor].
inline std::string genotype_json_text(const Genotype& g) {
  auto cell = [](const std::vector<GenotypeEdge>& c) {
    std::string s = "[";
    for (std::size_t e = 0; e < c.size(); ++e)
      s += (e ? ", [" : "[") + nlohmann::json(c[e].op).dump() + ", " + std::to_string(c[e].from) + "]";
    return s + "]";
  };
  std::string concat = "[";
  for (std::size_t k = 0; k < g.concat.size(); ++k)
    concat += (k ? ", " : "") + std::to_string(g.concat[k]);
  return "{\n  \"normal\": " + cell(g.normal) + ",\n  \"reduce\": " + cell(g.reduce) +
         ",\n  \"concat\": " + concat + "]\n}\n";
}

inline Genotype genotype_from_json(const nlohmann::json& j) {
  try {
    Genotype g;
    for (const char* key : {"normal", "reduce"}) {
      if (!j.contains(key) || !j[key].is_array())
        throw GenotypeError(std::string("genotype json: missing array '") + key + "'");
      auto& dst = std::string(key) == "normal" ? g.normal : g.reduce;
      for (const auto& e : j[key]) {
        if (!e.is_array() || e.size() != 2 || !e[0].is_string() || !e[1].is_number_unsigned())
          throw GenotypeError(std::string("genotype json: '") + key +
                              "' entries must be [op_name, predecessor]");
        dst.push_back({e[0].get<std::string>(), e[1].get<std::size_t>()});
      }
    }
    if (j.contains("concat")) {
      g.concat = j["concat"].get<std::vector<std::size_t>>();
    } else {
      g.concat = default_concat(g.normal.size() / 2 + 2);
    }
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw GenotypeError(std::string("genotype json: ") + e.what());
  }
}

inline Genotype load_genotype(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw GenotypeError("cannot open genotype file '" + path.string() + "'");
  try {
    return genotype_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw GenotypeError("genotype file '" + path.string() + "': " + e.what());
  }
}

/// Graphviz text with one cluster per cell type.
inline std::string to_dot(const Genotype& g) {
  std::ostringstream os;
  os << "digraph genotype {\n"
        "  rankdir=LR;\n"
        "  node [shape=box, style=filled, fontname=\"Helvetica\"];\n";
  for (auto t : {CellType::kNormal, CellType::kReduce}) {
    const std::string cell = t == CellType::kNormal ? "normal" : "reduce";
    const auto& entries = g.cell(t);
    const std::size_t inter = entries.size() / 2;
    auto id = [&](std::size_t node) {
      if (node == 0) return "\"" + cell + "_c_{k-2}\"";
      if (node == 1) return "\"" + cell + "_c_{k-1}\"";
      return "\"" + cell + "_" + std::to_string(node - 2) + "\"";
    };
    os << "  subgraph cluster_" << cell << " {\n"
       << "    label=\"" << cell << "\";\n"
       << "    " << id(0) << " [label=\"c_{k-2}\", fillcolor=darkseagreen2];\n"
       << "    " << id(1) << " [label=\"c_{k-1}\", fillcolor=darkseagreen2];\n";
    for (std::size_t n = 0; n < inter; ++n)
      os << "    " << id(n + 2) << " [label=\"" << n << "\", fillcolor=lightblue];\n";
    os << "    \"" << cell << "_c_{k}\" [label=\"c_{k}\", fillcolor=palegoldenrod];\n";
    for (std::size_t e = 0; e < entries.size(); ++e)
      os << "    " << id(entries[e].from) << " -> " << id(2 + e / 2) << " [label=\""
         << entries[e].op << "\"];\n";
    for (auto c : g.concat) os << "    " << id(c) << " -> \"" << cell << "_c_{k}\";\n";
    os << "  }\n";
  }
  os << "}\n";
  return os.str();
}

/// Parameters and multiply-accumulates of one network part.
struct CostPart {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
};

inline constexpr std::uint64_t kMobileMacLimit = 600'000'000;

struct CostReport {
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  std::size_t resolution = 0;
  bool mobile = false;  // macs <= 600M at the evaluated resolution
  std::vector<CostPart> parts;
};

enum class EvalLayout { kCifar, kImageNet };

struct CostConfig {
  std::size_t init_channels = 36;
  std::size_t cells = 20;
  std::size_t classes = 10;
  std::size_t resolution = 32;
  std::size_t in_channels = 3;
  std::size_t stem_multiplier = 3;
  EvalLayout layout = EvalLayout::kCifar;
};

namespace cost {

struct Acc {
  std::uint64_t params = 0, macs = 0;
  void conv(std::size_t cin, std::size_t cout, std::size_t k, std::size_t groups,
            std::size_t out_h, std::size_t out_w) {
    const std::uint64_t p = static_cast<std::uint64_t>(k) * k * (cin / groups) * cout;
    params += p;
    macs += p * out_h * out_w;
  }
  void bn(std::size_t c) { params += 2 * c; }  // affine
  void add(const Acc& o) {
    params += o.params;
    macs += o.macs;
  }
};

inline std::size_t out_extent(std::size_t in, std::size_t k, std::size_t stride,
                              std::size_t pad, std::size_t dil = 1) {
  return (in + 2 * pad - dil * (k - 1) - 1) / stride + 1;
}

inline Acc factorized_reduce(std::size_t cin, std::size_t cout, std::size_t h, std::size_t w) {
  Acc a;
  const std::size_t oh = out_extent(h, 1, 2, 0), ow = out_extent(w, 1, 2, 0);
  a.conv(cin, cout - cout / 2, 1, 1, oh, ow);
  if (cout / 2 > 0) a.conv(cin, cout / 2, 1, 1, out_extent(h - 1, 1, 2, 0), out_extent(w - 1, 1, 2, 0));
  a.bn(cout);
  return a;
}

inline Acc relu_conv_bn(std::size_t cin, std::size_t cout, std::size_t h, std::size_t w) {
  Acc a;
  a.conv(cin, cout, 1, 1, h, w);
  a.bn(cout);
  return a;
}

/// Cost of one op at evaluation time (affine BN; pools carry no BN).
inline Acc op(OpKind kind, std::size_t c, std::size_t stride, std::size_t h, std::size_t w) {
  Acc a;
  auto dw_pw = [&](std::size_t k, std::size_t s, std::size_t pad, std::size_t dil,
                   std::size_t ih, std::size_t iw) {
    const std::size_t oh = out_extent(ih, k, s, pad, dil), ow = out_extent(iw, k, s, pad, dil);
    a.conv(c, c, k, c, oh, ow);
    a.conv(c, c, 1, 1, oh, ow);
    a.bn(c);
    return std::pair{oh, ow};
  };
  switch (kind) {
    case OpKind::kSepConv3x3:
    case OpKind::kSepConv5x5: {
      const std::size_t k = kind == OpKind::kSepConv3x3 ? 3 : 5;
      auto [oh, ow] = dw_pw(k, stride, k / 2, 1, h, w);
      dw_pw(k, 1, k / 2, 1, oh, ow);
      break;
    }
    case OpKind::kDilConv3x3:
    case OpKind::kDilConv5x5: {
      const std::size_t k = kind == OpKind::kDilConv3x3 ? 3 : 5;
      dw_pw(k, stride, 2 * (k / 2), 2, h, w);
      break;
    }
    case OpKind::kSkipConnect:
      if (stride == 2) a = factorized_reduce(c, c, h, w);
      break;
    default:
      break;
  }
  return a;
}

}  // namespace cost

/// Parameter and multiply-add counts of the evaluation network built from
/// `g`. BN, ReLU and pooling count zero multiply-adds; BN is affine.
inline CostReport count_costs(const Genotype& g, const CostConfig& cfg) {
  const auto violations = validate(g, g.nodes());
  if (!violations.empty()) throw GenotypeError("cost: invalid genotype: " + describe(violations));
  if (cfg.cells == 0 || cfg.init_channels == 0 || cfg.resolution == 0)
    throw GenotypeError("cost: cells, channels and resolution must be positive");
  CostReport rep;
  rep.resolution = cfg.resolution;
  std::size_t h = cfg.resolution, w = cfg.resolution;
  std::size_t c_pp, c_p, c = cfg.init_channels;
  std::size_t h_pp, w_pp;  // extent of s0
  bool reduction_prev;
  if (cfg.layout == EvalLayout::kCifar) {
    cost::Acc stem;
    const std::size_t sc = cfg.stem_multiplier * cfg.init_channels;
    stem.conv(cfg.in_channels, sc, 3, 1, h, w);
    stem.bn(sc);
    rep.parts.push_back({"stem", stem.params, stem.macs});
    c_pp = c_p = sc;
    h_pp = h;
    w_pp = w;
    reduction_prev = false;
  } else {
    // stem0: conv s2 -> C/2, BN, ReLU, conv s2 -> C, BN; stem1: ReLU, conv s2, BN
    cost::Acc s0, s1;
    std::size_t h1 = cost::out_extent(h, 3, 2, 1), w1 = cost::out_extent(w, 3, 2, 1);
    s0.conv(cfg.in_channels, c / 2, 3, 1, h1, w1);
    s0.bn(c / 2);
    std::size_t h2 = cost::out_extent(h1, 3, 2, 1), w2 = cost::out_extent(w1, 3, 2, 1);
    s0.conv(c / 2, c, 3, 1, h2, w2);
    s0.bn(c);
    std::size_t h3 = cost::out_extent(h2, 3, 2, 1), w3 = cost::out_extent(w2, 3, 2, 1);
    s1.conv(c, c, 3, 1, h3, w3);
    s1.bn(c);
    rep.parts.push_back({"stem0", s0.params, s0.macs});
    rep.parts.push_back({"stem1", s1.params, s1.macs});
    c_pp = c_p = c;
    h_pp = h2;
    w_pp = w2;
    h = h3;
    w = w3;
    reduction_prev = true;
  }
  for (std::size_t l = 0; l < cfg.cells; ++l) {
    const bool reduction = is_reduction_cell(l, cfg.cells);
    if (reduction) c *= 2;
    cost::Acc cell;
    cell.add(reduction_prev ? cost::factorized_reduce(c_pp, c, h_pp, w_pp)
                            : cost::relu_conv_bn(c_pp, c, h_pp, w_pp));
    cell.add(cost::relu_conv_bn(c_p, c, h, w));
    const auto& entries = reduction ? g.reduce : g.normal;
    for (std::size_t e = 0; e < entries.size(); ++e) {
      const std::size_t stride = reduction && entries[e].from < 2 ? 2 : 1;
      cell.add(cost::op(*op_from_name(entries[e].op), c, stride, h, w));
    }
    rep.parts.push_back({"cell" + std::to_string(l), cell.params, cell.macs});
    const std::size_t oh = reduction ? cost::out_extent(h, 3, 2, 1) : h;
    const std::size_t ow = reduction ? cost::out_extent(w, 3, 2, 1) : w;
    h_pp = h;
    w_pp = w;
    h = oh;
    w = ow;
    c_pp = c_p;
    c_p = g.concat.size() * c;
    reduction_prev = reduction;
  }
  cost::Acc cls;
  cls.params = static_cast<std::uint64_t>(c_p) * cfg.classes + cfg.classes;
  cls.macs = static_cast<std::uint64_t>(c_p) * cfg.classes;
  rep.parts.push_back({"classifier", cls.params, cls.macs});
  for (const auto& p : rep.parts) {
    rep.params += p.params;
    rep.macs += p.macs;
  }
  rep.mobile = rep.macs <= kMobileMacLimit;
  return rep;
}

inline nlohmann::ordered_json cost_to_json(const CostReport& r) {
  nlohmann::ordered_json j;
  j["params"] = r.params;
  j["params_millions"] = static_cast<double>(r.params) / 1e6;
  j["macs"] = r.macs;
  j["macs_millions"] = static_cast<double>(r.macs) / 1e6;
  j["resolution"] = r.resolution;
  j["mobile_setting"] = r.mobile;
  auto parts = nlohmann::ordered_json::array();
  for (const auto& p : r.parts) parts.push_back({{"name", p.name}, {"params", p.params}, {"macs", p.macs}});
  j["parts"] = parts;
  return j;
}

}  // namespace pcdarts
