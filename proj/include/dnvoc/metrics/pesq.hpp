// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// PESQ is not reimplemented. The adapter runs an external command
//   <command> <ref.f64> <deg.f64> <sample_rate>
// which must print the wideband MOS-LQO on stdout. Signals are passed as raw
// little-endian float64 so nothing is requantized. tools/pesq_wb.py wraps the
// `pesq` Python package in this form.

#pragma once

#include <unistd.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>

#include "dnvoc/dsp/types.hpp"

namespace dnvoc::metrics {

inline constexpr const char* kPesqEnv = "DNVOC_PESQ_CMD";

inline std::uint64_t content_hash(const dsp::Waveform& a, const dsp::Waveform& b) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto* w : {&a, &b}) {
    const std::uint64_t n = w->size();
    mix(&n, sizeof n);
    mix(&w->sample_rate, sizeof w->sample_rate);
    mix(w->samples.data(), w->samples.size() * sizeof(double));
  }
  return h;
}

class PesqAdapter {
 public:
  PesqAdapter() = default;
  explicit PesqAdapter(std::string command) : command_(std::move(command)) {}
  PesqAdapter(PesqAdapter&& o) noexcept : command_(std::move(o.command_)), cache_(std::move(o.cache_)) {}
  PesqAdapter& operator=(PesqAdapter&& o) noexcept {
    command_ = std::move(o.command_);
    cache_ = std::move(o.cache_);
    return *this;
  }

  // Reads DNVOC_PESQ_CMD; unset or empty leaves the adapter unconfigured.
  static PesqAdapter from_env() {
    const char* c = std::getenv(kPesqEnv);
    return PesqAdapter(c ? c : "");
  }

  bool configured() const { return !command_.empty(); }
  const std::string& command() const { return command_; }

  // nullopt when unconfigured. Tool failures throw IoError.
  std::optional<double> operator()(const dsp::Waveform& ref, const dsp::Waveform& deg) {
    if (!configured()) return std::nullopt;
    if (ref.size() != deg.size() || ref.sample_rate != deg.sample_rate)
      throw MismatchError("pesq: reference and degraded signals differ in length or rate");
    const auto key = content_hash(ref, deg);
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    const double v = run(ref, deg, key);
    std::lock_guard<std::mutex> lock(mu_);
    cache_[key] = v;
    return v;
  }

  std::size_t cache_size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.size();
  }

 private:
  double run(const dsp::Waveform& ref, const dsp::Waveform& deg, std::uint64_t key) const {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path();
    const std::string stem = "dnvoc_pesq_" + std::to_string(::getpid()) + "_" + std::to_string(key);
    const auto rp = dir / (stem + "_ref.f64"), dp = dir / (stem + "_deg.f64");
    auto dump = [](const fs::path& p, const dsp::Waveform& w) {
      std::ofstream f(p, std::ios::binary);
      f.write(reinterpret_cast<const char*>(w.samples.data()),
              static_cast<std::streamsize>(w.samples.size() * sizeof(double)));
      if (!f) throw IoError("pesq: cannot write " + p.string());
    };
    dump(rp, ref);
    dump(dp, deg);
    const std::string cmd = command_ + " '" + rp.string() + "' '" + dp.string() + "' " +
                            std::to_string(ref.sample_rate) + " 2>&1";
    std::string out;
    int status = -1;
    if (FILE* p = ::popen(cmd.c_str(), "r")) {
      std::array<char, 256> buf{};
      while (std::fgets(buf.data(), buf.size(), p)) out += buf.data();
      status = ::pclose(p);
    }
    fs::remove(rp);
    fs::remove(dp);
    char* end = nullptr;
    const double v = std::strtod(out.c_str(), &end);
    if (status != 0 || end == out.c_str() || !std::isfinite(v))
      throw IoError("pesq: external command failed (" + command_ + "): " + out.substr(0, 300));
    return v;
  }

  std::string command_;
  mutable std::mutex mu_;
  std::map<std::uint64_t, double> cache_;
};

}  // namespace dnvoc::metrics
