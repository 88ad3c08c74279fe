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

#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "pcdarts/core/checkpoint.hpp"
#include "pcdarts/engine/search.hpp"
#include "pcdarts/genotype/genotype.hpp"
#include "pcdarts/harness/config.hpp"
#include "pcdarts/harness/report.hpp"

namespace pcdarts {

namespace fs = std::filesystem;

/// Fixed artifact names of a search run directory.
inline const std::vector<std::string>& search_artifacts() {
  static const std::vector<std::string> names{"manifest.json", "weights.pcnt", "arch.pcnt",
                                              "log.csv",       "genotype.json", "cell.dot",
                                              "snapshots.json"};
  return names;
}

struct RunOutcome {
  Genotype genotype;
  SearchLog log;
  bool aborted = false;
  std::string message;
};

template <class T>
RunOutcome search_to_dir_t(const RunConfig& rc, const Dataset& data, const fs::path& out,
                           const std::string& command) {
  fs::create_directories(out);
  RunManifest m;
  m.command = command;
  m.config = config_to_json(rc);
  m.seed = rc.search.seed;
  m.started_utc = utc_timestamp();
  m.extra["dataset"] = {{"name", data.name}, {"count", data.count()}, {"classes", data.classes}};
  m.write(out);

  std::ofstream csv(out / "log.csv", std::ios::binary);
  if (!csv) throw std::runtime_error("cannot write '" + (out / "log.csv").string() + "'");
  SearchLog header_only;
  csv << header_only.csv() << std::flush;
  auto on_epoch = [&](const EpochRecord& r) {
    SearchLog one;
    one.records.push_back(r);
    const auto text = one.csv();
    csv << text.substr(text.find('\n') + 1) << std::flush;
  };

  SearchResult<T> res;
  try {
    res = run_search<T>(rc.search, data, on_epoch);
  } catch (const std::exception& e) {
    m.status = "failed";
    m.message = e.what();
    m.finished_utc = utc_timestamp();
    m.artifacts = {"manifest.json", "log.csv"};
    m.write(out);
    throw;
  }
  csv.close();
  save_checkpoint((out / "weights.pcnt").string(), res.weights);
  save_checkpoint((out / "arch.pcnt").string(), res.arch.to_named());
  write_text(out / "genotype.json", genotype_json_text(res.genotype));
  write_text(out / "cell.dot", to_dot(res.genotype));
  write_text(out / "snapshots.json", res.log.snapshots().dump(2) + "\n");
  m.status = res.aborted ? "aborted" : "ok";
  m.message = res.abort_reason;
  m.finished_utc = utc_timestamp();
  m.artifacts = search_artifacts();
  m.extra["steps"] = {{"weight", res.sgd_steps}, {"arch", res.adam_steps}};
  if (!res.log.records.empty()) {
    const auto& last = res.log.records.back();
    m.extra["final"] = {{"w_acc", last.w_acc}, {"a_acc", last.a_acc}, {"w_loss", last.w_loss},
                        {"a_loss", last.a_loss}};
  }
  m.write(out);
  return {res.genotype, res.log, res.aborted, res.abort_reason};
}

/// Runs one search and writes the full artifact set into `out`.
inline RunOutcome search_to_dir(const RunConfig& rc, const Dataset& data, const fs::path& out,
                                const std::string& command = "search") {
  return rc.precision == "double" ? search_to_dir_t<double>(rc, data, out, command)
                                  : search_to_dir_t<float>(rc, data, out, command);
}

struct Sweep {
  std::string axis;  // k | seeds | nodes | epochs
  std::vector<std::uint64_t> values;
};

/// Parses "axis=v1,v2,..." or "axis=a..b".
inline Sweep parse_sweep(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) throw ConfigError("sweep '" + spec + "': expected axis=values");
  Sweep s;
  s.axis = spec.substr(0, eq);
  if (s.axis != "k" && s.axis != "seeds" && s.axis != "nodes" && s.axis != "epochs")
    throw ConfigError("sweep '" + spec + "': axis must be one of k, seeds, nodes, epochs");
  const std::string body = spec.substr(eq + 1);
  auto number = [&](const std::string& t) {
    if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos)
      throw ConfigError("sweep '" + spec + "': '" + t + "' is not a non-negative integer");
    return static_cast<std::uint64_t>(std::stoull(t));
  };
  const auto dots = body.find("..");
  if (dots != std::string::npos) {
    const auto lo = number(body.substr(0, dots)), hi = number(body.substr(dots + 2));
    if (hi < lo) throw ConfigError("sweep '" + spec + "': empty range");
    for (auto v = lo; v <= hi; ++v) s.values.push_back(v);
  } else {
    std::size_t start = 0;
    while (true) {
      const auto comma = body.find(',', start);
      s.values.push_back(number(body.substr(start, comma - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  return s;
}

/// Configuration of one sweep point.
inline RunConfig apply_sweep_point(RunConfig rc, const std::string& axis, std::uint64_t v) {
  if (axis == "k") {
    rc.search.net.k = v;
  } else if (axis == "seeds") {
    rc.search.seed = v;
  } else if (axis == "nodes") {
    rc.search.net.nodes = v;
  } else {
    rc.search.epochs = v;
  }
  try {
    rc.search.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("sweep point " + axis + "=" + std::to_string(v) + ": " + e.what());
  }
  return rc;
}

struct AblationResult {
  std::vector<SummaryRow> rows;
  SweepReport dispersion;
};

/// Runs every sweep point (up to `jobs` concurrently), each into
/// out/runs/<axis>-<value>/, then writes summary.csv, scatter.svg,
/// dispersion.json and manifest.json at the top level.
inline AblationResult ablate(const RunConfig& rc, const Sweep& sweep, const fs::path& out,
                             std::size_t jobs = 1) {
  std::vector<RunConfig> points;
  for (auto v : sweep.values) points.push_back(apply_sweep_point(rc, sweep.axis, v));
  fs::create_directories(out / "runs");
  RunManifest m;
  m.command = "ablate";
  m.config = config_to_json(rc);
  m.seed = rc.search.seed;
  m.started_utc = utc_timestamp();
  m.extra["sweep"] = {{"axis", sweep.axis}, {"values", sweep.values}};
  m.write(out);

  const Dataset data = load_dataset(rc.data);
  std::vector<SummaryRow> rows(points.size());
  std::vector<SeedRun> runs(points.size());
  std::vector<std::exception_ptr> errors(points.size());
  jobs = std::max<std::size_t>(jobs, 1);
  for (std::size_t start = 0; start < points.size(); start += jobs) {
    std::vector<std::thread> pool;
    for (std::size_t i = start; i < std::min(points.size(), start + jobs); ++i) {
      pool.emplace_back([&, i] {
        const std::string tag = sweep.axis + "-" + std::to_string(sweep.values[i]);
        try {
          auto o = search_to_dir(points[i], data, out / "runs" / tag, "ablate");
          auto& row = rows[i];
          row.axis = sweep.axis;
          row.value = std::to_string(sweep.values[i]);
          row.status = o.aborted ? "aborted" : "ok";
          auto& run = runs[i];
          run.seed = points[i].search.seed;
          run.genotype = o.genotype;
          run.aborted = o.aborted;
          for (const auto& r : o.log.records) {
            row.seconds += r.seconds;
            row.peak_act_elems = std::max(row.peak_act_elems, r.peak_act_elems);
          }
          if (!o.log.records.empty()) {
            row.w_acc = o.log.records.back().w_acc;
            row.a_acc = o.log.records.back().a_acc;
          }
          run.w_acc = row.w_acc;
          run.a_acc = row.a_acc;
          run.seconds = row.seconds;
          run.peak_act_elems = row.peak_act_elems;
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i]) continue;
    m.status = "failed";
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      m.message = sweep.axis + "=" + std::to_string(sweep.values[i]) + ": " + e.what();
    }
    m.finished_utc = utc_timestamp();
    m.write(out);
    std::rethrow_exception(errors[i]);
  }

  AblationResult res;
  res.rows = rows;
  res.dispersion = summarize_runs(runs);
  write_text(out / "summary.csv", summary_csv(rows));
  write_text(out / "scatter.svg", scatter_svg(rows, "cost vs accuracy, sweep over " + sweep.axis));
  nlohmann::ordered_json disp;
  disp["axis"] = sweep.axis;
  disp["jaccard_mean"] = res.dispersion.jaccard_mean;
  disp["jaccard_min"] = res.dispersion.jaccard_min;
  disp["a_acc_mean"] = res.dispersion.a_acc_mean;
  disp["a_acc_std"] = res.dispersion.a_acc_std;
  auto entries = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < runs.size(); ++i)
    entries.push_back({{"value", sweep.values[i]},
                       {"a_acc", runs[i].a_acc},
                       {"w_acc", runs[i].w_acc},
                       {"aborted", runs[i].aborted},
                       {"genotype", genotype_to_json(runs[i].genotype)}});
  disp["runs"] = entries;
  write_text(out / "dispersion.json", disp.dump(2) + "\n");
  m.status = "ok";
  m.finished_utc = utc_timestamp();
  m.artifacts = {"manifest.json", "summary.csv", "scatter.svg", "dispersion.json", "runs/"};
  m.write(out);
  return res;
}

}  // namespace pcdarts
