// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Paired clean/noisy corpora in the VoiceBank+DEMAND layout: manifests,
// ingestion at 16 kHz, training crops and SNR-exact mixing.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dnvoc/data/resample.hpp"
#include "dnvoc/dsp/wav.hpp"
#include "json.hpp"

namespace dnvoc::data {

namespace fs = std::filesystem;

enum class Split { kTrain, kTest };

inline const char* to_string(Split s) { return s == Split::kTrain ? "train" : "test"; }
inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  throw InputError("manifest: unknown split '" + s + "'");
}

struct UtterancePair {
  std::string id;
  std::string clean_path;
  std::string noisy_path;
  double duration = 0;  // seconds, from the clean file header
  Split split = Split::kTrain;

  bool operator==(const UtterancePair&) const = default;
};

// VoiceBank ids look like p232_001; the prefix before '_' names the speaker.
inline std::string speaker_of(const std::string& id) { return id.substr(0, id.find('_')); }

struct Manifest {
  std::vector<UtterancePair> pairs;
  int sample_rate = 16000;
  std::vector<std::string> warnings;  // orphans and other skipped files

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(std::count_if(pairs.begin(), pairs.end(), [&](const auto& p) { return p.split == s; }));
  }

  std::vector<UtterancePair> split(Split s) const {
    std::vector<UtterancePair> out;
    for (const auto& p : pairs)
      if (p.split == s) out.push_back(p);
    return out;
  }

  // Throws if a speaker appears in both splits.
  void check_speaker_disjoint() const {
    std::set<std::string> train, test;
    for (const auto& p : pairs) (p.split == Split::kTrain ? train : test).insert(speaker_of(p.id));
    for (const auto& s : train)
      if (test.count(s)) throw InputError("manifest: speaker " + s + " appears in both splits");
  }
};

inline void to_json(nlohmann::json& j, const UtterancePair& p) {
  j = nlohmann::json{{"id", p.id},
                     {"clean_path", p.clean_path},
                     {"noisy_path", p.noisy_path},
                     {"duration", p.duration},
                     {"split", to_string(p.split)}};
}

inline void from_json(const nlohmann::json& j, UtterancePair& p) {
  p.id = j.at("id").get<std::string>();
  p.clean_path = j.at("clean_path").get<std::string>();
  p.noisy_path = j.at("noisy_path").get<std::string>();
  p.duration = j.at("duration").get<double>();
  p.split = split_from_string(j.at("split").get<std::string>());
}

using WarnFn = std::function<void(const std::string&)>;

// Pairs WAV files by basename. Output is sorted by id; unmatched files are
// excluded and reported through `warn` and Manifest::warnings.
inline Manifest build_manifest(const fs::path& clean_dir, const fs::path& noisy_dir, Split split,
                               const WarnFn& warn = {}) {
  auto list = [](const fs::path& dir) {
    std::map<std::string, fs::path> m;
    if (!fs::is_directory(dir)) throw IoError("manifest: not a directory: " + dir.string());
    for (const auto& e : fs::directory_iterator(dir)) {
      if (!e.is_regular_file()) continue;
      auto ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (ext == ".wav") m[e.path().stem().string()] = e.path();
    }
    return m;
  };
  const auto clean = list(clean_dir), noisy = list(noisy_dir);
  Manifest out;
  auto note = [&](const std::string& msg) {
    out.warnings.push_back(msg);
    if (warn) warn(msg);
  };
  for (const auto& [id, cp] : clean) {
    auto it = noisy.find(id);
    if (it == noisy.end()) {
      note("orphan clean file (no noisy match): " + cp.string());
      continue;
    }
    const auto info = dsp::read_wav_info(cp);
    out.pairs.push_back({id, cp.string(), it->second.string(),
                         static_cast<double>(info.frames) / info.sample_rate, split});
  }
  for (const auto& [id, np] : noisy)
    if (!clean.count(id)) note("orphan noisy file (no clean match): " + np.string());
  if (out.pairs.empty())
    throw InputError("manifest: no matching clean/noisy pairs in " + clean_dir.string() + " and " +
                     noisy_dir.string());
  return out;
}

// Standard VoiceBank+DEMAND directory names under `root`. Either split may be
// absent, but not both.
inline Manifest build_voicebank_manifest(const fs::path& root, const WarnFn& warn = {}) {
  Manifest out;
  const std::pair<const char*, const char*> dirs[] = {{"clean_trainset_28spk_wav", "noisy_trainset_28spk_wav"},
                                                      {"clean_testset_wav", "noisy_testset_wav"}};
  for (int s = 0; s < 2; ++s) {
    const auto c = root / dirs[s].first, n = root / dirs[s].second;
    if (!fs::is_directory(c) || !fs::is_directory(n)) continue;
    auto m = build_manifest(c, n, s == 0 ? Split::kTrain : Split::kTest, warn);
    out.pairs.insert(out.pairs.end(), m.pairs.begin(), m.pairs.end());
    out.warnings.insert(out.warnings.end(), m.warnings.begin(), m.warnings.end());
  }
  if (out.pairs.empty()) throw InputError("manifest: no VoiceBank+DEMAND split found under " + root.string());
  std::stable_sort(out.pairs.begin(), out.pairs.end(), [](const auto& a, const auto& b) {
    return a.split != b.split ? a.split == Split::kTrain : a.id < b.id;
  });
  out.check_speaker_disjoint();
  return out;
}

inline std::string manifest_to_jsonl(const Manifest& m) {
  std::string s;
  for (const auto& p : m.pairs) s += nlohmann::json(p).dump() + "\n";
  return s;
}

// Audio paths are stored relative to the manifest's directory.
inline void write_manifest(const fs::path& path, const Manifest& m) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto base = fs::absolute(path).parent_path();
  Manifest rel = m;
  for (auto& p : rel.pairs)
    for (auto* s : {&p.clean_path, &p.noisy_path})
      *s = fs::absolute(*s).lexically_normal().lexically_proximate(base).string();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("manifest: cannot write " + path.string());
  f << manifest_to_jsonl(rel);
}

// Relative paths in the file are resolved against the manifest's directory.
inline Manifest read_manifest(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("manifest: cannot open " + path.string());
  Manifest m;
  std::string line;
  int lineno = 0;
  const auto base = path.parent_path();
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto p = nlohmann::json::parse(line).get<UtterancePair>();
      for (auto* s : {&p.clean_path, &p.noisy_path})
        if (fs::path(*s).is_relative()) *s = (base / *s).lexically_normal().string();
      m.pairs.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("manifest: " + path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (m.pairs.empty()) throw InputError("manifest: no records in " + path.string());
  return m;
}

struct PairAudio {
  dsp::Waveform clean, noisy;
};

// Both sides resampled to target_rate and truncated to the shorter length.
inline PairAudio ingest(const UtterancePair& p, int target_rate = 16000) {
  auto c = resample(dsp::read_wav(p.clean_path), target_rate);
  auto n = resample(dsp::read_wav(p.noisy_path), target_rate);
  const auto len = std::min(c.size(), n.size());
  if (len == 0) throw InputError("ingest: empty audio for " + p.id);
  c.samples.resize(len);
  n.samples.resize(len);
  return {std::move(c), std::move(n)};
}

struct IngestResult {
  std::vector<std::optional<PairAudio>> audio;  // aligned with the input order
  std::vector<std::pair<std::string, std::string>> errors;  // (id, message)
};

// Per-file failures are collected; the batch continues.
inline IngestResult ingest_all(const std::vector<UtterancePair>& pairs, int target_rate = 16000, int workers = 0) {
  if (workers <= 0) workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  IngestResult r;
  r.audio.resize(pairs.size());
  std::vector<std::string> err(pairs.size());
  auto run = [&](std::size_t w) {
    for (std::size_t i = w; i < pairs.size(); i += static_cast<std::size_t>(workers)) {
      try {
        r.audio[i] = ingest(pairs[i], target_rate);
      } catch (const std::exception& e) {
        err[i] = e.what();
      }
    }
  };
  std::vector<std::future<void>> fut;
  for (int w = 1; w < workers; ++w) fut.push_back(std::async(std::launch::async, run, w));
  run(0);
  for (auto& f : fut) f.get();
  for (std::size_t i = 0; i < pairs.size(); ++i)
    if (!r.audio[i]) r.errors.emplace_back(pairs[i].id, err[i]);
  return r;
}

struct Segment {
  dsp::Waveform clean, noisy;
  std::size_t offset = 0;
};

// Same crop for both sides; short clips are zero-padded on the right.
// The offset is drawn as rng() mod range so it does not depend on the
// standard library's distribution implementation.
inline Segment random_segment(const dsp::Waveform& clean, const dsp::Waveform& noisy, std::size_t seg_len,
                              std::uint64_t seed) {
  if (seg_len == 0) throw InputError("random_segment: seg_len must be positive");
  if (clean.size() != noisy.size()) throw MismatchError("random_segment: clean and noisy lengths differ");
  Segment s;
  s.clean.sample_rate = clean.sample_rate;
  s.noisy.sample_rate = noisy.sample_rate;
  if (clean.size() > seg_len) {
    std::mt19937_64 rng(seed);
    s.offset = static_cast<std::size_t>(rng() % (clean.size() - seg_len + 1));
  }
  auto crop = [&](const dsp::Waveform& w) {
    std::vector<double> v(seg_len, 0.0);
    const auto n = std::min(seg_len, w.size() - s.offset);
    std::copy_n(w.samples.begin() + static_cast<std::ptrdiff_t>(s.offset), n, v.begin());
    return v;
  };
  s.clean.samples = crop(clean);
  s.noisy.samples = crop(noisy);
  return s;
}

inline double power(const std::vector<double>& x) {
  long double acc = 0;
  for (double v : x) acc += static_cast<long double>(v) * v;
  return static_cast<double>(acc / static_cast<long double>(x.size()));
}

// clean + g * noise with g chosen so 10 log10(P_clean / P_noise) = snr_db over
// the whole clip. Noise shorter than the clean clip is tiled. snr_db = +inf
// returns the clean clip.
inline dsp::Waveform synth_mix(const dsp::Waveform& clean, const dsp::Waveform& noise, double snr_db) {
  clean.validate();
  noise.validate();
  if (clean.sample_rate != noise.sample_rate) throw MismatchError("synth_mix: sample rates differ");
  if (std::isnan(snr_db) || snr_db == -std::numeric_limits<double>::infinity())
    throw InputError("synth_mix: snr_db must be a number or +inf");
  const double pc = power(clean.samples);
  if (pc <= 0) throw InputError("synth_mix: silent clean clip, SNR undefined");
  if (std::isinf(snr_db)) return clean;
  std::vector<double> n(clean.size());
  for (std::size_t i = 0; i < n.size(); ++i) n[i] = noise.samples[i % noise.size()];
  const double pn = power(n);
  if (pn <= 0) throw InputError("synth_mix: silent noise clip");
  const double g = std::sqrt(pc / (pn * std::pow(10.0, snr_db / 10.0)));
  dsp::Waveform out{clean.samples, clean.sample_rate};
  for (std::size_t i = 0; i < n.size(); ++i) out.samples[i] += g * n[i];
  return out;
}

}  // namespace dnvoc::data
