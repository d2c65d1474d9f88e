// Copyright 2026 The dnvoc Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// AdamW with decoupled weight decay, plus per-epoch exponential lr decay.

#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <vector>

#include "dnvoc/core/errors.hpp"
#include "dnvoc/core/nn.hpp"

namespace dnvoc::training {

struct AdamWConfig {
  double beta1 = 0.8;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

template <typename T>
class AdamW {
 public:
  AdamW(nn::ParamSet<T>& ps, AdamWConfig cfg = {}) : ps_(&ps), cfg_(cfg) {
    for (const auto& [_, p] : ps.items()) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  // Moments are kept in double whatever T is.
  void step(double lr) {
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1 - std::pow(b2, static_cast<double>(t_));
    auto& items = ps_->items();
    for (std::size_t i = 0; i < items.size(); ++i) {
      auto& p = items[i].second;
      auto w = p.mutable_value();
      const auto g = p.grad();
      if (g.size() != w.size()) continue;  // never reached by backward
      auto& m = m_[i];
      auto& v = v_[i];
      const double decay = 1 - lr * cfg_.weight_decay;
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = g[k];
        m[k] = b1 * m[k] + (1 - b1) * gk;
        v[k] = b2 * v[k] + (1 - b2) * gk * gk;
        const double upd = (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
        w[k] = static_cast<T>(static_cast<double>(w[k]) * decay - lr * upd);
      }
    }
  }

  std::uint64_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

  void save(std::ostream& os) const {
    const std::uint64_t n = m_.size();
    os.write(reinterpret_cast<const char*>(&t_), sizeof t_);
    os.write(reinterpret_cast<const char*>(&n), sizeof n);
    for (std::size_t i = 0; i < m_.size(); ++i) {
      const std::uint64_t len = m_[i].size();
      os.write(reinterpret_cast<const char*>(&len), sizeof len);
      os.write(reinterpret_cast<const char*>(m_[i].data()), static_cast<std::streamsize>(len * sizeof(double)));
      os.write(reinterpret_cast<const char*>(v_[i].data()), static_cast<std::streamsize>(len * sizeof(double)));
    }
  }

  void load(std::istream& is) {
    std::uint64_t t = 0, n = 0;
    is.read(reinterpret_cast<char*>(&t), sizeof t);
    is.read(reinterpret_cast<char*>(&n), sizeof n);
    if (!is || n != m_.size()) throw CheckpointError("optimizer state does not match the parameter set");
    for (std::size_t i = 0; i < m_.size(); ++i) {
      std::uint64_t len = 0;
      is.read(reinterpret_cast<char*>(&len), sizeof len);
      if (!is || len != m_[i].size()) throw CheckpointError("optimizer state: tensor size mismatch");
      is.read(reinterpret_cast<char*>(m_[i].data()), static_cast<std::streamsize>(len * sizeof(double)));
      is.read(reinterpret_cast<char*>(v_[i].data()), static_cast<std::streamsize>(len * sizeof(double)));
    }
    if (!is) throw CheckpointError("optimizer state truncated");
    t_ = t;
  }

 private:
  nn::ParamSet<T>* ps_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

// lr_init * gamma^epoch
inline double lr_at(double lr_init, double gamma, std::uint64_t epoch) {
  return lr_init * std::pow(gamma, static_cast<double>(epoch));
}

}  // namespace dnvoc::training
