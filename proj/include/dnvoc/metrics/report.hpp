// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Per-utterance scoring and corpus aggregation. Column order follows the
// usual VoiceBank+DEMAND tables: PESQ CSIG CBAK COVL SSNR STOI.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <future>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dnvoc/metrics/pesq.hpp"
#include "dnvoc/metrics/quality.hpp"
#include "dnvoc/metrics/stoi.hpp"
#include "json.hpp"

namespace dnvoc::metrics {

struct Scores {
  std::optional<double> pesq, csig, cbak, covl, ssnr, stoi;
  std::optional<double> llr, wss;
  std::vector<std::string> notes;  // why a value is unavailable

  static constexpr const char* kColumns[6] = {"PESQ", "CSIG", "CBAK", "COVL", "SSNR", "STOI"};
  std::array<std::optional<double>, 6> columns() const { return {pesq, csig, cbak, covl, ssnr, stoi}; }
};

struct MetricsConfig {
  SsnrConfig ssnr;  // framing of the reported SSNR column
  LlrConfig llr;
  int workers = 0;  // 0: hardware concurrency

  static MetricsConfig reference() {
    MetricsConfig c;
    c.ssnr = SsnrConfig::reference();
    return c;
  }
};

// Composites always use the reference SSNR framing, which their regressions
// were fitted on, independent of the reported SSNR framing.
inline Scores score_pair(const dsp::Waveform& ref, const dsp::Waveform& deg, const MetricsConfig& cfg,
                         PesqAdapter* pesq = nullptr) {
  detail::check_pair(ref, deg, "metrics");
  Scores s;
  auto attempt = [&](const char* name, auto fn) {
    try {
      fn();
    } catch (const Error& e) {
      s.notes.push_back(std::string(name) + ": " + e.what());
    }
  };
  attempt("ssnr", [&] { s.ssnr = ssnr(ref, deg, cfg.ssnr); });
  attempt("stoi", [&] { s.stoi = stoi(ref, deg); });
  attempt("llr", [&] { s.llr = llr(ref, deg, cfg.llr); });
  attempt("wss", [&] { s.wss = wss(ref, deg); });
  if (pesq && pesq->configured())
    attempt("pesq", [&] { s.pesq = (*pesq)(ref, deg); });
  else
    s.notes.push_back("pesq: adapter not configured (set " + std::string(kPesqEnv) + ")");
  if (s.pesq && s.llr && s.wss) {
    attempt("composite", [&] {
      const auto c = composite(*s.pesq, *s.llr, *s.wss, ssnr(ref, deg, SsnrConfig::reference()));
      s.csig = c.csig;
      s.cbak = c.cbak;
      s.covl = c.covl;
    });
  }
  return s;
}

struct MetricsReport {
  std::string system;
  std::vector<std::pair<std::string, Scores>> rows;  // manifest order
  nlohmann::json provenance = nlohmann::json::object();

  // Unweighted mean over utterances where the metric is available; nullopt
  // when no utterance has it.
  std::array<std::optional<double>, 6> means() const {
    std::array<std::optional<double>, 6> out;
    for (int c = 0; c < 6; ++c) {
      double sum = 0;
      std::size_t n = 0;
      for (const auto& [_, s] : rows)
        if (const auto v = s.columns()[c]) {
          sum += *v;
          ++n;
        }
      if (n) out[c] = sum / static_cast<double>(n);
    }
    return out;
  }

  nlohmann::json to_json() const {
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json("unavailable"); };
    nlohmann::json utt = nlohmann::json::array();
    for (const auto& [id, s] : rows) {
      nlohmann::json r{{"id", id}};
      const auto cols = s.columns();
      for (int c = 0; c < 6; ++c) r[Scores::kColumns[c]] = opt(cols[c]);
      r["LLR"] = opt(s.llr);
      r["WSS"] = opt(s.wss);
      if (!s.notes.empty()) r["notes"] = s.notes;
      utt.push_back(std::move(r));
    }
    nlohmann::json mean;
    const auto m = means();
    for (int c = 0; c < 6; ++c) mean[Scores::kColumns[c]] = opt(m[c]);
    return {{"system", system}, {"utterances", utt}, {"mean", mean}, {"count", rows.size()}, {"provenance", provenance}};
  }
};

using TableRow = std::pair<std::string, std::array<std::optional<double>, 6>>;

// Markdown table, two decimals, "n/a" for unavailable.
inline std::string render_table(const std::vector<TableRow>& rows) {
  std::string s = "| System |";
  for (const char* c : Scores::kColumns) s += std::string(" ") + c + " |";
  s += "\n|---|---|---|---|---|---|---|\n";
  for (const auto& [name, vals] : rows) {
    s += "| " + name + " |";
    for (const auto& v : vals) {
      char buf[32];
      if (v)
        std::snprintf(buf, sizeof buf, " %.2f |", *v);
      else
        std::snprintf(buf, sizeof buf, " n/a |");
      s += buf;
    }
    s += "\n";
  }
  return s;
}

inline std::string render_table(const MetricsReport& r) { return render_table({{r.system, r.means()}}); }

// Scores every (id, ref, deg) triple; results keep the input order.
struct ScoredInput {
  std::string id;
  dsp::Waveform ref, deg;
};

inline MetricsReport score_corpus(const std::string& system, const std::vector<ScoredInput>& items,
                                  const MetricsConfig& cfg, PesqAdapter* pesq = nullptr) {
  if (items.empty()) throw InputError("metrics: empty split");
  MetricsReport r;
  r.system = system;
  r.rows.resize(items.size());
  const int workers =
      cfg.workers > 0 ? cfg.workers : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  auto run = [&](std::size_t w) {
    for (std::size_t i = w; i < items.size(); i += static_cast<std::size_t>(workers))
      r.rows[i] = {items[i].id, score_pair(items[i].ref, items[i].deg, cfg, pesq)};
  };
  std::vector<std::future<void>> fut;
  for (int w = 1; w < workers; ++w) fut.push_back(std::async(std::launch::async, run, w));
  run(0);
  for (auto& f : fut) f.get();
  r.provenance = {{"ssnr_frame_ms", cfg.ssnr.frame_ms},
                  {"ssnr_overlap", cfg.ssnr.overlap},
                  {"ssnr_silence_db", std::isinf(cfg.ssnr.silence_db) ? nlohmann::json("off") : nlohmann::json(cfg.ssnr.silence_db)},
                  {"llr_order", cfg.llr.order},
                  {"pesq", pesq && pesq->configured() ? pesq->command() : std::string("unavailable")}};
  return r;
}

}  // namespace dnvoc::metrics
