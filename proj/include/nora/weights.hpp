/*
   Copyright 2026 The nora-sbl Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/
#pragma once

#include <string_view>

#include "nora/core.hpp"
#include "nora/pilots.hpp"
#include "nora/scenario.hpp"

namespace nora {

/// Connectivity pattern of a weighting matrix. Every trainable scalar sits on
/// one nonzero of the pattern, so the support never leaves the factor graph.
enum class MaskKind {
  ScalarToEdge,  // 1 x E: a scalar broadcast onto every edge
  ObsToEdge,     // (N*Lt) x E: observation n feeds the edges touching n
  EdgeToVar,     // E x (K*dc): edges aggregate into their variable
  VarDiag,       // (K*dc) x (K*dc), diagonal
  VarToUser,     // (K*dc) x K: variables aggregate into their user
  EdgeToObs,     // E x (N*Lt): edges aggregate into their observation
  ObsDiag,       // (N*Lt) x (N*Lt), diagonal
  ScalarToObs,   // 1 x (N*Lt)
  ObsToScalar,   // (N*Lt) x 1
};

/// The weighting matrices of one iteration block, in layer order.
enum WeightId : int {
  // layer 2, variance branch
  kLamToA1v, kVdToA1v,
  // layer 2, mean branch
  kYToA1m, kMdToA1m, kLamToA1m, kVdToA1m,
  // layer 3
  kA1vToVq, kA1mToMq, kHToQ,
  // layer 4
  kGamma, kOneToH, kVGammaToH,
  // layer 5
  kMhToGamma, kVhToGamma,
  // layer 7
  kA2vToVd, kA2mToMd, kYToD, kMdToMd, kLamToD, kVdToMd,
  // layer 8
  kLamToZ, kVdToVz, kYLamToZ, kMvToZ,
  // layer 9
  kMzToLam, kYToLam, kVzToLam,
  kNumWeights
};

struct WeightInfo {
  std::string_view name;
  MaskKind kind;
};

inline constexpr std::array<WeightInfo, kNumWeights> kWeightInfo{{
    {"W_lam_A1v", MaskKind::ScalarToEdge},
    {"W_vd_A1v", MaskKind::ObsToEdge},
    {"W_y_A1m", MaskKind::ObsToEdge},
    {"W_md_A1m", MaskKind::ObsToEdge},
    {"W_lam_A1m", MaskKind::ScalarToEdge},
    {"W_vd_A1m", MaskKind::ObsToEdge},
    {"W_A1v_vQ", MaskKind::EdgeToVar},
    {"W_A1m_mQ", MaskKind::EdgeToVar},
    {"W_h_Q", MaskKind::VarDiag},
    {"W_gamma", MaskKind::VarDiag},
    {"W_1_h", MaskKind::VarDiag},
    {"W_vgamma_h", MaskKind::VarDiag},
    {"W_mh_gamma", MaskKind::VarToUser},
    {"W_vh_gamma", MaskKind::VarToUser},
    {"W_A2v_vd", MaskKind::EdgeToObs},
    {"W_A2m_md", MaskKind::EdgeToObs},
    {"W_y_d", MaskKind::ObsDiag},
    {"W_md_md", MaskKind::ObsDiag},
    {"W_lam_d", MaskKind::ScalarToObs},
    {"W_vd_md", MaskKind::ObsDiag},
    {"W_lam_z", MaskKind::ScalarToObs},
    {"W_vd_vz", MaskKind::ObsDiag},
    {"W_ylam_z", MaskKind::ObsDiag},
    {"W_mv_z", MaskKind::ObsDiag},
    {"W_mz_lam", MaskKind::ObsDiag},
    {"W_y_lam", MaskKind::ObsDiag},
    {"W_vz_lam", MaskKind::ObsToScalar},
}};

struct WeightDims {
  std::size_t E = 0, vars = 0, users = 0, obs = 0;

  static WeightDims of(const SystemConfig& cfg) {
    const auto d = derived_dims(cfg);
    return {static_cast<std::size_t>(d.E), static_cast<std::size_t>(cfg.K) * cfg.dc, static_cast<std::size_t>(cfg.K),
            static_cast<std::size_t>(cfg.N) * cfg.Lt};
  }
  static WeightDims of(const ExpandedPilot& P) {
    return {P.num_edges(), static_cast<std::size_t>(P.num_vars()), static_cast<std::size_t>(P.K),
            static_cast<std::size_t>(P.num_obs())};
  }

  std::size_t count(MaskKind k) const {
    switch (k) {
      case MaskKind::ScalarToEdge:
      case MaskKind::ObsToEdge:
      case MaskKind::EdgeToVar:
      case MaskKind::EdgeToObs: return E;
      case MaskKind::VarDiag:
      case MaskKind::VarToUser: return vars;
      case MaskKind::ObsDiag:
      case MaskKind::ScalarToObs:
      case MaskKind::ObsToScalar: return obs;
    }
    return 0;
  }
  /// Rows x cols of the dense weighting matrix (input nodes x output nodes).
  std::pair<std::size_t, std::size_t> dense_shape(MaskKind k) const {
    switch (k) {
      case MaskKind::ScalarToEdge: return {1, E};
      case MaskKind::ObsToEdge: return {obs, E};
      case MaskKind::EdgeToVar: return {E, vars};
      case MaskKind::VarDiag: return {vars, vars};
      case MaskKind::VarToUser: return {vars, users};
      case MaskKind::EdgeToObs: return {E, obs};
      case MaskKind::ObsDiag: return {obs, obs};
      case MaskKind::ScalarToObs: return {1, obs};
      case MaskKind::ObsToScalar: return {obs, 1};
    }
    return {0, 0};
  }
  std::size_t per_block() const {
    std::size_t s = 0;
    for (const auto& info : kWeightInfo) s += count(info.kind);
    return s;
  }
};

/// (row, col) of the dense nonzero that parameter `i` of a matrix occupies.
inline std::pair<std::size_t, std::size_t> mask_position(MaskKind kind, std::size_t i, const ExpandedPilot& P) {
  const int dc = P.dc;
  switch (kind) {
    case MaskKind::ScalarToEdge: return {0, i};
    case MaskKind::ObsToEdge: return {static_cast<std::size_t>(P.edge_obs[i]), i};
    case MaskKind::EdgeToVar: return {i, static_cast<std::size_t>(P.edge_var[i])};
    case MaskKind::VarDiag: return {i, i};
    case MaskKind::VarToUser: return {i, i / static_cast<std::size_t>(dc)};
    case MaskKind::EdgeToObs: return {i, static_cast<std::size_t>(P.edge_obs[i])};
    case MaskKind::ObsDiag: return {i, i};
    case MaskKind::ScalarToObs: return {0, i};
    case MaskKind::ObsToScalar: return {i, 0};
  }
  return {0, 0};
}

using DenseMatrix = std::vector<std::vector<double>>;

struct BlockWeights {
  std::array<std::vector<double>, kNumWeights> w;

  std::vector<double>& operator[](WeightId id) { return w[static_cast<std::size_t>(id)]; }
  const std::vector<double>& operator[](WeightId id) const { return w[static_cast<std::size_t>(id)]; }

  bool operator==(const BlockWeights&) const = default;

  /// Dense weighting matrix with zeros off the connectivity mask.
  DenseMatrix to_dense(WeightId id, const ExpandedPilot& P) const {
    const auto kind = kWeightInfo[static_cast<std::size_t>(id)].kind;
    const auto [rows, cols] = WeightDims::of(P).dense_shape(kind);
    DenseMatrix D(rows, std::vector<double>(cols, 0.0));
    const auto& v = (*this)[id];
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto [r, c] = mask_position(kind, i, P);
      D[r][c] = v[i];
    }
    return D;
  }

  /// Loads matrix `id` from a dense matrix; any nonzero off the mask is a
  /// MaskError.
  void set_from_dense(WeightId id, const DenseMatrix& D, const ExpandedPilot& P) {
    const auto kind = kWeightInfo[static_cast<std::size_t>(id)].kind;
    const auto dims = WeightDims::of(P);
    const auto [rows, cols] = dims.dense_shape(kind);
    if (D.size() != rows || std::any_of(D.begin(), D.end(), [c = cols](const auto& r) { return r.size() != c; }))
      throw DimensionError("set_from_dense: wrong dense shape for " + std::string(kWeightInfo[id].name));
    std::vector<std::vector<char>> on(rows, std::vector<char>(cols, 0));
    std::vector<double> v(dims.count(kind));
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto [r, c] = mask_position(kind, i, P);
      on[r][c] = 1;
      v[i] = D[r][c];
    }
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        if (!on[r][c] && D[r][c] != 0.0)
          throw MaskError("set_from_dense: " + std::string(kWeightInfo[id].name) + " has a nonzero at (" +
                          std::to_string(r) + ", " + std::to_string(c) + ") outside the connectivity mask");
    (*this)[id] = std::move(v);
  }
};

/// Trainable weights of the unfolded network, untied across blocks.
class WeightSet {
 public:
  WeightSet() = default;

  /// Every matrix of every block filled with `value` on its mask.
  WeightSet(const WeightDims& dims, int blocks, double value = 1.0) : dims_(dims) {
    if (blocks < 0) throw DimensionError("WeightSet: negative block count");
    blocks_.resize(static_cast<std::size_t>(blocks));
    for (auto& b : blocks_)
      for (std::size_t i = 0; i < kNumWeights; ++i) b.w[i].assign(dims.count(kWeightInfo[i].kind), value);
  }

  /// Takes ownership of raw per-block arrays; shapes must match `dims`.
  WeightSet(const WeightDims& dims, std::vector<BlockWeights> blocks) : dims_(dims), blocks_(std::move(blocks)) {
    for (const auto& b : blocks_)
      for (std::size_t i = 0; i < kNumWeights; ++i)
        if (b.w[i].size() != dims.count(kWeightInfo[i].kind))
          throw MaskError("WeightSet: " + std::string(kWeightInfo[i].name) + " has " + std::to_string(b.w[i].size()) +
                          " parameters, its mask has " + std::to_string(dims.count(kWeightInfo[i].kind)));
  }

  const WeightDims& dims() const { return dims_; }
  int num_blocks() const { return static_cast<int>(blocks_.size()); }
  BlockWeights& block(int l) { return blocks_[static_cast<std::size_t>(l)]; }
  const BlockWeights& block(int l) const { return blocks_[static_cast<std::size_t>(l)]; }
  std::size_t num_params() const { return dims_.per_block() * blocks_.size(); }

  bool same_shape(const WeightSet& o) const {
    return dims_.E == o.dims_.E && dims_.vars == o.dims_.vars && dims_.users == o.dims_.users &&
           dims_.obs == o.dims_.obs && blocks_.size() == o.blocks_.size();
  }

  /// Flat access in (block, matrix, index) order.
  double& flat(std::size_t i) { return locate(i); }
  double flat(std::size_t i) const { return const_cast<WeightSet*>(this)->locate(i); }

  template <class F>
  void for_each_array(F&& f) {
    for (auto& b : blocks_)
      for (auto& v : b.w) f(v);
  }
  template <class F>
  void for_each_array(F&& f) const {
    for (const auto& b : blocks_)
      for (const auto& v : b.w) f(v);
  }

  bool operator==(const WeightSet& o) const { return same_shape(o) && blocks_ == o.blocks_; }

 private:
  double& locate(std::size_t i) {
    const std::size_t per = dims_.per_block();
    auto& b = blocks_.at(i / per);
    i %= per;
    for (auto& v : b.w) {
      if (i < v.size()) return v[i];
      i -= v.size();
    }
    throw DimensionError("WeightSet::flat: index out of range");
  }

  WeightDims dims_;
  std::vector<BlockWeights> blocks_;
};

using GradSet = WeightSet;

/// All-ones weights for cfg.Nit blocks; the network then reproduces MP-BSBL.
inline WeightSet init_weights(const SystemConfig& cfg) { return WeightSet(WeightDims::of(cfg), cfg.Nit, 1.0); }

/// FNV-1a over the raw parameter bytes.
inline std::uint64_t weights_checksum(const WeightSet& ws) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  ws.for_each_array([&h](const std::vector<double>& v) {
    const auto* p = reinterpret_cast<const unsigned char*>(v.data());
    for (std::size_t i = 0; i < v.size() * sizeof(double); ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  });
  return h;
}

// ---------------------------------------------------------------------------
// Checkpoint weight section: "WSET1", version u8, fingerprint u64, Nit u32,
// then per block per matrix: name length u32, name bytes, count u64, f64s.
// ---------------------------------------------------------------------------

inline constexpr char kWeightMagic[5] = {'W', 'S', 'E', 'T', '1'};
inline constexpr std::uint8_t kWeightVersion = 1;

inline void write_weight_section(std::ostream& out, const WeightSet& ws, std::uint64_t fingerprint) {
  using namespace detail;
  put_bytes(out, kWeightMagic, sizeof kWeightMagic);
  put(out, kWeightVersion);
  put(out, fingerprint);
  put(out, static_cast<std::uint32_t>(ws.num_blocks()));
  for (int l = 0; l < ws.num_blocks(); ++l)
    for (std::size_t i = 0; i < kNumWeights; ++i) {
      const auto name = kWeightInfo[i].name;
      put(out, static_cast<std::uint32_t>(name.size()));
      put_bytes(out, name.data(), name.size());
      const auto& v = ws.block(l).w[i];
      put(out, static_cast<std::uint64_t>(v.size()));
      put_bytes(out, v.data(), v.size() * sizeof(double));
    }
}

inline WeightSet read_weight_section(std::istream& in, const SystemConfig& cfg) {
  using namespace detail;
  char magic[5];
  get_bytes(in, magic, sizeof magic);
  if (!std::equal(std::begin(magic), std::end(magic), std::begin(kWeightMagic)))
    throw FormatError("checkpoint: bad magic");
  if (get<std::uint8_t>(in) != kWeightVersion) throw FormatError("checkpoint: unsupported version");
  if (get<std::uint64_t>(in) != config_fingerprint(cfg))
    throw FingerprintError("checkpoint was trained under a different configuration");
  const auto blocks = get<std::uint32_t>(in);
  const auto dims = WeightDims::of(cfg);
  std::vector<BlockWeights> bw(blocks);
  for (auto& b : bw)
    for (std::size_t i = 0; i < kNumWeights; ++i) {
      const auto len = get<std::uint32_t>(in);
      if (len > 256) throw FormatError("checkpoint: implausible name length");
      std::string name(len, '\0');
      get_bytes(in, name.data(), len);
      if (name != kWeightInfo[i].name)
        throw FormatError("checkpoint: expected " + std::string(kWeightInfo[i].name) + ", found " + name);
      const auto count = get<std::uint64_t>(in);
      if (count != dims.count(kWeightInfo[i].kind))
        throw FormatError("checkpoint: parameter count mismatch for " + name);
      b.w[i].resize(count);
      get_bytes(in, b.w[i].data(), count * sizeof(double));
    }
  return WeightSet(dims, std::move(bw));
}

/// Weights-only checkpoint (trailing optimizer flag 0).
inline void save_weights(const WeightSet& ws, const SystemConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_weight_section(out, ws, config_fingerprint(cfg));
  detail::put(out, std::uint8_t{0});
  if (!out) throw IoError("write failed: " + path);
}

/// Reads the weights of any checkpoint; an optimizer section, if present, is
/// left unread.
inline WeightSet load_weights(const std::string& path, const SystemConfig& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  WeightSet ws = read_weight_section(in, cfg);
  const auto flag = detail::get<std::uint8_t>(in);
  if (flag > 1) throw FormatError("checkpoint: bad optimizer flag");
  return ws;
}

}  // namespace nora
