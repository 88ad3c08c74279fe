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
// Command-line front end: search, derive, ablate, cost.
//
// Exit codes: 0 ok, 1 runtime failure, 2 usage error. Every error is a single
// line on stderr starting with "error:".

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pcdarts/harness/experiment.hpp"

namespace {

namespace fs = std::filesystem;
using namespace pcdarts;

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

struct SearchArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k, epochs;
  bool no_pc = false, no_en = false;
};

int cmd_search(const SearchArgs& a) {
  RunConfig rc = load_config(a.config);
  if (a.seed) rc.search.seed = *a.seed;
  if (a.k) rc.search.net.k = *a.k;
  if (a.epochs) rc.search.epochs = *a.epochs;
  if (a.no_pc) rc.search.net.partial_connection = false;
  if (a.no_en) rc.search.net.edge_normalization = false;
  try {
    rc.search.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const Dataset data = load_dataset(rc.data);
  auto outcome = search_to_dir(rc, data, a.out);
  if (outcome.aborted) {
    std::cerr << "error: search aborted: " << one_line(outcome.message) << "\n";
    return kRuntime;
  }
  std::cout << genotype_json_text(outcome.genotype);
  return kOk;
}

struct DeriveArgs {
  std::string arch, out;
  std::size_t nodes = 0;
  bool keep_zero = false, no_en = false, sum_score = false;
};

int cmd_derive(const DeriveArgs& a) {
  const auto named = load_checkpoint(a.arch);
  const auto arch = arch_params_from_named<double>(named, a.nodes);
  if (arch.num_ops != kAllOps.size()) {
    throw GenotypeError("arch checkpoint has " + std::to_string(arch.num_ops) +
                        " ops per edge, the operation set has " + std::to_string(kAllOps.size()));
  }
  DeriveOptions opts;
  opts.keep_zero = a.keep_zero;
  opts.edge_normalization = !a.no_en;
  opts.score = a.sum_score ? EdgeScore::kSum : EdgeScore::kMax;
  const Genotype g = derive(arch, a.nodes, default_operation_set(), opts);
  fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_text(out, genotype_json_text(g));
  fs::path dot = out;
  dot.replace_extension(".dot");
  write_text(dot, to_dot(g));
  std::cout << genotype_json_text(g);
  return kOk;
}

struct AblateArgs {
  std::string config, sweep, out;
  std::size_t jobs = 1;
};

int cmd_ablate(const AblateArgs& a) {
  const RunConfig rc = load_config(a.config);
  const Sweep sweep = parse_sweep(a.sweep);
  auto res = ablate(rc, sweep, a.out, a.jobs);
  std::cout << summary_csv(res.rows);
  return kOk;
}

struct CostArgs {
  std::string genotype;
  std::size_t cells = 20, channels = 36, resolution = 32, classes = 10;
  std::string layout = "cifar";
};

int cmd_cost(const CostArgs& a) {
  const Genotype g = load_genotype(a.genotype);
  const auto v = validate(g, g.nodes());
  if (!v.empty()) throw GenotypeError("invalid genotype: " + describe(v));
  CostConfig cfg;
  cfg.cells = a.cells;
  cfg.init_channels = a.channels;
  cfg.resolution = a.resolution;
  cfg.classes = a.classes;
  cfg.layout = a.layout == "imagenet" ? EvalLayout::kImageNet : EvalLayout::kCifar;
  std::cout << cost_to_json(count_costs(g, cfg)).dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Partially-connected differentiable architecture search"};
  app.require_subcommand(1);

  SearchArgs sa;
  auto* search = app.add_subcommand("search", "run a search and write its artifacts");
  search->add_option("--config", sa.config, "config file")->required();
  search->add_option("--out", sa.out, "output directory")->required();
  search->add_option("--seed", sa.seed, "random seed (overrides config)");
  search->add_option("--k", sa.k, "channel sampling divisor K")->check(CLI::PositiveNumber);
  search->add_option("--epochs", sa.epochs, "epochs (overrides config)")->check(CLI::PositiveNumber);
  search->add_flag("--no-pc", sa.no_pc, "disable partial channel connections");
  search->add_flag("--no-en", sa.no_en, "disable edge normalization");

  DeriveArgs da;
  auto* der = app.add_subcommand("derive", "derive a genotype from an arch checkpoint");
  der->add_option("--arch", da.arch, "arch.pcnt checkpoint")->required()->check(CLI::ExistingFile);
  der->add_option("--nodes", da.nodes, "nodes per cell N")->required()->check(CLI::Range(3, 64));
  der->add_option("--out", da.out, "genotype JSON path (DOT written alongside)")->required();
  der->add_flag("--keep-zero", da.keep_zero, "allow the zero op in the derived cell");
  der->add_flag("--no-en", da.no_en, "ignore edge-normalization coefficients");
  der->add_flag("--sum-score", da.sum_score, "score edges by summed op weights");

  AblateArgs aa;
  auto* abl = app.add_subcommand("ablate", "run a sweep and write a summary");
  abl->add_option("--config", aa.config, "config file")->required();
  abl->add_option("--sweep", aa.sweep, "k=1,2,4,8 | seeds=0..4 | nodes=5,6,7 | epochs=50,75,100,125")
      ->required();
  abl->add_option("--out", aa.out, "output directory")->required();
  abl->add_option("--jobs", aa.jobs, "concurrent runs")->check(CLI::PositiveNumber);

  CostArgs ca;
  auto* cost = app.add_subcommand("cost", "parameter and multiply-add counts of a genotype");
  cost->add_option("--genotype", ca.genotype, "genotype JSON")->required();
  cost->add_option("--cells", ca.cells, "cells L")->check(CLI::PositiveNumber);
  cost->add_option("--channels", ca.channels, "initial channels C0")->check(CLI::PositiveNumber);
  cost->add_option("--resolution", ca.resolution, "input resolution")->check(CLI::PositiveNumber);
  cost->add_option("--classes", ca.classes, "classes")->check(CLI::PositiveNumber);
  cost->add_option("--layout", ca.layout, "evaluation layout")->check(CLI::IsMember({"cifar", "imagenet"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return kUsage;
  }

  try {
    if (*search) return cmd_search(sa);
    if (*der) return cmd_derive(da);
    if (*abl) return cmd_ablate(aa);
    if (*cost) return cmd_cost(ca);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return kRuntime;
  }
  return kUsage;
}
