// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Checkpoint layout for a stem S:
//   S.gen.bin   generator weights (+ optimizer state)
//   S.disc.bin  discriminator weights (+ optimizer state), optional
//   S.json      step, stage, configs, config hash, rng state
// Weights are stored raw in the training scalar type, so a reload is
// bit-identical on the same platform.

#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "dnvoc/core/errors.hpp"
#include "dnvoc/core/nn.hpp"
#include "dnvoc/dsp/mel.hpp"
#include "dnvoc/training/optim.hpp"
#include "json.hpp"

namespace dnvoc::dsp {

inline void to_json(nlohmann::json& j, const StftConfig& c) {
  j = {{"n_fft", c.n_fft},   {"win_length", c.win_length},   {"hop_length", c.hop_length},
       {"window", to_string(c.window)}, {"sample_rate", c.sample_rate}, {"center", c.center}};
}

inline void from_json(const nlohmann::json& j, StftConfig& c) {
  StftConfig d;
  c.n_fft = j.value("n_fft", d.n_fft);
  c.win_length = j.value("win_length", d.win_length);
  c.hop_length = j.value("hop_length", d.hop_length);
  c.window = window_from_string(j.value("window", to_string(d.window)));
  c.sample_rate = j.value("sample_rate", d.sample_rate);
  c.center = j.value("center", d.center);
}

inline void to_json(nlohmann::json& j, const MelConfig& m) {
  j = {{"n_mels", m.n_mels}, {"f_min", m.f_min}, {"f_max", m.f_max}};
}

inline void from_json(const nlohmann::json& j, MelConfig& m) {
  MelConfig d;
  m.n_mels = j.value("n_mels", d.n_mels);
  m.f_min = j.value("f_min", d.f_min);
  m.f_max = j.value("f_max", d.f_max);
}

}  // namespace dnvoc::dsp

namespace dnvoc::training {

inline constexpr const char* kCheckpointFormat = "dnvoc-checkpoint/1";

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : s) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Hash of everything that fixes the shape and meaning of the weights.
// nlohmann::json keeps object keys sorted, so dump() is canonical.
inline std::string config_hash(const std::string& stage, const nlohmann::json& model, const nlohmann::json& stft) {
  return hex64(fnv1a(nlohmann::json{{"stage", stage}, {"model", model}, {"stft", stft}}.dump()));
}

namespace detail {

inline constexpr char kMagic[8] = {'D', 'N', 'V', 'O', 'C', 'P', 'R', 'M'};

template <typename V>
void put(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename V>
V get(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw CheckpointError("checkpoint truncated");
  return v;
}

}  // namespace detail

template <typename T>
void save_params(const std::filesystem::path& path, const nn::ParamSet<T>& ps, const AdamW<T>* opt = nullptr) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint " + path.string());
    os.write(detail::kMagic, sizeof detail::kMagic);
    detail::put<std::uint32_t>(os, 1);
    detail::put<std::uint32_t>(os, sizeof(T));
    detail::put<std::uint64_t>(os, ps.items().size());
    for (const auto& [name, p] : ps.items()) {
      detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(p.rank()));
      for (int d : p.shape()) detail::put<std::int32_t>(os, d);
      os.write(reinterpret_cast<const char*>(p.value().data()), static_cast<std::streamsize>(p.numel() * sizeof(T)));
    }
    detail::put<std::uint8_t>(os, opt ? 1 : 0);
    if (opt) opt->save(os);
    if (!os) throw IoError("short write on checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

// Names, order and shapes must match the freshly built model exactly.
template <typename T>
void load_params(const std::filesystem::path& path, nn::ParamSet<T>& ps, AdamW<T>* opt = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::string(magic, 8) != std::string(detail::kMagic, 8))
    throw CheckpointError(path.string() + " is not a dnvoc weight file");
  if (detail::get<std::uint32_t>(is) != 1) throw CheckpointError("unsupported weight file version");
  if (detail::get<std::uint32_t>(is) != sizeof(T))
    throw CheckpointError("weight file scalar type differs from the model's");
  const auto n = detail::get<std::uint64_t>(is);
  if (n != ps.items().size())
    throw CheckpointError("weight file has " + std::to_string(n) + " tensors, model has " +
                          std::to_string(ps.items().size()));
  for (auto& [name, p] : ps.items()) {
    std::string got(detail::get<std::uint32_t>(is), '\0');
    is.read(got.data(), static_cast<std::streamsize>(got.size()));
    if (got != name) throw CheckpointError("weight file tensor '" + got + "' where '" + name + "' expected");
    const auto rank = detail::get<std::uint32_t>(is);
    ad::Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(detail::get<std::int32_t>(is));
    if (shape != p.shape())
      throw CheckpointError("tensor " + name + ": shape " + ad::shape_str(shape) + " vs model " +
                            ad::shape_str(p.shape()));
    auto v = p.mutable_value();
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
    if (!is) throw CheckpointError("weight file truncated in " + name);
  }
  const bool has_opt = detail::get<std::uint8_t>(is) != 0;
  if (opt) {
    if (!has_opt) throw CheckpointError("weight file carries no optimizer state");
    opt->load(is);
  }
}

struct CheckpointPaths {
  std::filesystem::path stem;
  std::filesystem::path gen() const { return stem.string() + ".gen.bin"; }
  std::filesystem::path disc() const { return stem.string() + ".disc.bin"; }
  std::filesystem::path meta() const { return stem.string() + ".json"; }

  // Accepts the stem or any of the three file names.
  static CheckpointPaths from(const std::filesystem::path& p) {
    std::string s = p.string();
    for (const char* suffix : {".gen.bin", ".disc.bin", ".json"}) {
      const std::string x = suffix;
      if (s.size() > x.size() && s.compare(s.size() - x.size(), x.size(), x) == 0) {
        s.resize(s.size() - x.size());
        break;
      }
    }
    return {s};
  }
};

inline nlohmann::json read_meta(const CheckpointPaths& paths) {
  std::ifstream f(paths.meta());
  if (!f) throw CheckpointError("missing checkpoint metadata " + paths.meta().string());
  try {
    auto j = nlohmann::json::parse(f);
    if (j.value("format", "") != kCheckpointFormat) throw CheckpointError("unknown checkpoint format");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt checkpoint metadata " + paths.meta().string() + ": " + e.what());
  }
}

inline void write_meta(const CheckpointPaths& paths, const nlohmann::json& j) {
  const auto tmp = paths.meta().string() + ".tmp";
  {
    std::ofstream f(tmp);
    if (!f) throw IoError("cannot write " + paths.meta().string());
    f << j.dump(1) << "\n";
  }
  std::filesystem::rename(tmp, paths.meta());
}

// Refuses a checkpoint whose stage or config hash differs from what the
// caller is about to build.
inline void require_binding(const nlohmann::json& meta, const std::string& stage, const std::string& expected_hash,
                            const std::string& where) {
  if (meta.value("stage", "") != stage)
    throw CheckpointError(where + ": checkpoint is for stage '" + meta.value("stage", "?") + "', expected '" + stage +
                          "'");
  if (meta.value("config_hash", "") != expected_hash)
    throw CheckpointError(where + ": checkpoint config hash " + meta.value("config_hash", "?") +
                          " does not match the requested configuration (" + expected_hash + ")");
}

}  // namespace dnvoc::training
