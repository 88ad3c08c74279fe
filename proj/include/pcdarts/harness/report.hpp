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
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>
#include <json.hpp>

namespace pcdarts {

/// Git blob id of `content`: sha1("blob <len>\0" + content), hex.
inline std::string git_blob_hash(const std::string& content) {
  const std::string data = "blob " + std::to_string(content.size()) + std::string(1, '\0') + content;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), md, &len, EVP_sha1(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

/// Record tying every artifact of a run directory to one resolved config.
struct RunManifest {
  std::string command;
  nlohmann::ordered_json config;
  std::uint64_t seed = 0;
  std::string started_utc, finished_utc;
  std::string status = "running";  // running | ok | aborted | failed
  std::string message;
  std::vector<std::string> artifacts;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();

  std::string config_hash() const { return git_blob_hash(config.dump(2) + "\n"); }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["tool"] = "pcdarts";
    j["command"] = command;
    j["status"] = status;
    if (!message.empty()) j["message"] = message;
    j["seed"] = seed;
    j["config_hash"] = config_hash();
    j["started_utc"] = started_utc;
    j["finished_utc"] = finished_utc;
    j["artifacts"] = artifacts;
    for (const auto& [k, v] : extra.items()) j[k] = v;
    j["config"] = config;
    return j;
  }

  void write(const std::filesystem::path& dir) const {
    write_text(dir / "manifest.json", to_json().dump(2) + "\n");
  }
};

/// One row of an ablation summary.
struct SummaryRow {
  std::string axis;
  std::string value;
  double w_acc = 0, a_acc = 0;
  std::size_t peak_act_elems = 0;
  double seconds = 0;
  std::string status = "ok";
};

inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os.precision(9);
  os << "axis,value,w_acc,a_acc,peak_act_elems,seconds,status\n";
  for (const auto& r : rows)
    os << r.axis << ',' << r.value << ',' << r.w_acc << ',' << r.a_acc << ',' << r.peak_act_elems
       << ',' << r.seconds << ',' << r.status << '\n';
  return os.str();
}

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

inline std::string fmt(double v, int prec = 3) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

}  // namespace detail

/// Cost (peak activation elements) against arch-split accuracy, one labelled
/// point per run.
inline std::string scatter_svg(const std::vector<SummaryRow>& rows, const std::string& title) {
  const double W = 640, H = 420, L = 80, R = 30, T = 50, B = 60;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (!rows.empty()) {
    xmin = xmax = static_cast<double>(rows[0].peak_act_elems);
    ymin = ymax = rows[0].a_acc;
    for (const auto& r : rows) {
      xmin = std::min(xmin, static_cast<double>(r.peak_act_elems));
      xmax = std::max(xmax, static_cast<double>(r.peak_act_elems));
      ymin = std::min(ymin, r.a_acc);
      ymax = std::max(ymax, r.a_acc);
    }
  }
  auto pad = [](double& lo, double& hi) {
    const double span = hi - lo;
    const double p = span > 0 ? 0.08 * span : std::max(std::abs(hi) * 0.05, 0.01);
    lo -= p;
    hi += p;
  };
  pad(xmin, xmax);
  pad(ymin, ymax);
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n"
     << "  <rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n"
     << "  <text x=\"" << W / 2 << "\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
     << detail::xml_escape(title) << "</text>\n"
     << "  <line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n"
     << "  <line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = xmin + (xmax - xmin) * t / 4, yv = ymin + (ymax - ymin) * t / 4;
    os << "  <text x=\"" << px(xv) << "\" y=\"" << H - B + 18
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << detail::fmt(xv)
       << "</text>\n"
       << "  <text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << detail::fmt(yv)
       << "</text>\n";
  }
  os << "  <text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 16
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">peak activation elements</text>\n"
     << "  <text x=\"18\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
     << "font-size=\"13\" transform=\"rotate(-90 18 " << (T + H - B) / 2 << ")\">arch-split accuracy</text>\n";
  for (const auto& r : rows) {
    const double x = px(static_cast<double>(r.peak_act_elems)), y = py(r.a_acc);
    os << "  <circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"5\" fill=\"steelblue\"/>\n"
       << "  <text x=\"" << x + 8 << "\" y=\"" << y - 6
       << "\" font-family=\"sans-serif\" font-size=\"11\">" << detail::xml_escape(r.axis + "=" + r.value)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace pcdarts
