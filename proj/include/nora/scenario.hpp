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

#include <bit>
#include <cstdio>
#include <random>

#include "nora/core.hpp"
#include "nora/pilots.hpp"

namespace nora {

/// Noise variance for a given SNR in dB, with unit-power pilots and
/// unit-variance channel coefficients.
inline double snr_to_noise_var(double snr_db) { return std::pow(10.0, -snr_db / 10.0); }

/// One random-access realisation.
struct Scenario {
  double snr_db = 0.0;
  double noise_var = 1.0;
  std::vector<std::uint8_t> alpha;  // [K]
  std::vector<cplx> h_bar;          // [K*dc], block k zero iff alpha[k] == 0
  std::vector<cplx> y;              // [N*Lt]

  std::vector<int> active_set() const {
    std::vector<int> s;
    for (std::size_t k = 0; k < alpha.size(); ++k)
      if (alpha[k]) s.push_back(static_cast<int>(k));
    return s;
  }
  bool operator==(const Scenario&) const = default;
};

/// Child seed for sample `index` of a run seeded with `master` (splitmix64 of
/// the master seed offset by the golden-ratio stride times index + 1).
inline std::uint64_t child_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <class Rng>
cplx complex_gaussian(Rng& rng, double variance) {
  std::normal_distribution<double> g(0.0, std::sqrt(variance / 2.0));
  const double re = g(rng);
  const double im = g(rng);
  return {re, im};
}

/// Draws activity, channel and noise, then forms y = Pbar*h + w. Noise
/// variance is overridden when `noise_var_override` is positive.
template <class Rng>
Scenario sample_scenario(const SystemConfig& cfg, const ExpandedPilot& P, double snr_db, Rng& rng,
                         double noise_var_override = -1.0) {
  if (P.K != cfg.K || P.N != cfg.N || P.Lt != cfg.Lt || P.dc != cfg.dc)
    throw DimensionError("sample_scenario: pilot matrix does not match config");
  Scenario s;
  s.snr_db = snr_db;
  s.noise_var = noise_var_override > 0.0 ? noise_var_override : snr_to_noise_var(snr_db);
  std::bernoulli_distribution active(cfg.Pa);
  s.alpha.resize(static_cast<std::size_t>(cfg.K));
  for (auto& a : s.alpha) a = active(rng) ? 1 : 0;
  s.h_bar.assign(static_cast<std::size_t>(cfg.K) * cfg.dc, cplx{});
  for (int k = 0; k < cfg.K; ++k) {
    if (!s.alpha[static_cast<std::size_t>(k)]) continue;
    for (int d = 0; d < cfg.dc; ++d) s.h_bar[static_cast<std::size_t>(k) * cfg.dc + d] = complex_gaussian(rng, 1.0);
  }
  s.y = P.apply(s.h_bar);
  for (auto& v : s.y) v += complex_gaussian(rng, s.noise_var);
  return s;
}

/// Sample `index` of a reproducible stream: its own generator is seeded from
/// the master seed, so samples can be drawn in any order or in parallel.
inline Scenario sample_indexed(const SystemConfig& cfg, const ExpandedPilot& P, double snr_db,
                               std::uint64_t master_seed, std::uint64_t index) {
  std::mt19937_64 rng(child_seed(master_seed, index));
  return sample_scenario(cfg, P, snr_db, rng);
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct Dataset {
  int K = 0, N = 0, Lt = 0, dc = 0;
  std::uint64_t cfg_fingerprint = 0;
  std::vector<Scenario> samples;

  bool operator==(const Dataset&) const = default;

  void check_matches(const SystemConfig& cfg) const {
    if (cfg_fingerprint != config_fingerprint(cfg) || K != cfg.K || N != cfg.N || Lt != cfg.Lt || dc != cfg.dc)
      throw FingerprintError("dataset was generated under a different configuration");
  }
};

/// `count` samples per SNR point, SNR points in order.
inline Dataset generate_dataset(const SystemConfig& cfg, const ExpandedPilot& P, const std::vector<double>& snr_list,
                                std::size_t count, std::uint64_t seed) {
  Dataset ds{cfg.K, cfg.N, cfg.Lt, cfg.dc, config_fingerprint(cfg), {}};
  ds.samples.reserve(snr_list.size() * count);
  std::uint64_t index = 0;
  for (double snr : snr_list)
    for (std::size_t i = 0; i < count; ++i) ds.samples.push_back(sample_indexed(cfg, P, snr, seed, index++));
  return ds;
}

/// `count` samples in total, each at an SNR drawn uniformly from `snr_list`.
inline Dataset generate_mixed_dataset(const SystemConfig& cfg, const ExpandedPilot& P,
                                      const std::vector<double>& snr_list, std::size_t count, std::uint64_t seed) {
  if (snr_list.empty()) throw DimensionError("generate_mixed_dataset: empty SNR list");
  Dataset ds{cfg.K, cfg.N, cfg.Lt, cfg.dc, config_fingerprint(cfg), {}};
  ds.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::mt19937_64 rng(child_seed(seed, i));
    std::uniform_int_distribution<std::size_t> pick(0, snr_list.size() - 1);
    const double snr = snr_list[pick(rng)];
    ds.samples.push_back(sample_scenario(cfg, P, snr, rng));
  }
  return ds;
}

namespace detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline void put_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
template <class T>
void put(std::ostream& out, T v) {
  put_bytes(out, &v, sizeof v);
}
inline void get_bytes(std::istream& in, void* p, std::size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw FormatError("unexpected end of file");
}
template <class T>
T get(std::istream& in) {
  T v{};
  get_bytes(in, &v, sizeof v);
  return v;
}
inline void put_complex(std::ostream& out, const std::vector<cplx>& v) {
  for (const auto& c : v) {
    put(out, c.real());
    put(out, c.imag());
  }
}
inline void get_complex(std::istream& in, std::vector<cplx>& v, std::size_t n) {
  v.resize(n);
  for (auto& c : v) {
    const double re = get<double>(in);
    const double im = get<double>(in);
    c = {re, im};
  }
}

}  // namespace detail

inline constexpr char kDatasetMagic[5] = {'N', 'O', 'R', 'A', '1'};
inline constexpr std::uint8_t kDatasetVersion = 1;

/// Layout (little-endian): "NORA1", version u8, K N Lt dc as u32, sample
/// count u64, fingerprint u64; per sample snr_db f64, K activity bytes, K*dc
/// complex channel values, N*Lt complex observations (f64 re, f64 im).
inline void write_dataset(const Dataset& ds, std::ostream& out) {
  using namespace detail;
  put_bytes(out, kDatasetMagic, sizeof kDatasetMagic);
  put(out, kDatasetVersion);
  for (int v : {ds.K, ds.N, ds.Lt, ds.dc}) put(out, static_cast<std::uint32_t>(v));
  put(out, static_cast<std::uint64_t>(ds.samples.size()));
  put(out, ds.cfg_fingerprint);
  const std::size_t nh = static_cast<std::size_t>(ds.K) * ds.dc;
  const std::size_t ny = static_cast<std::size_t>(ds.N) * ds.Lt;
  for (const auto& s : ds.samples) {
    if (s.alpha.size() != static_cast<std::size_t>(ds.K) || s.h_bar.size() != nh || s.y.size() != ny)
      throw DimensionError("write_dataset: sample shape does not match header");
    put(out, s.snr_db);
    put_bytes(out, s.alpha.data(), s.alpha.size());
    put_complex(out, s.h_bar);
    put_complex(out, s.y);
  }
}

inline Dataset read_dataset(std::istream& in) {
  using namespace detail;
  char magic[5];
  get_bytes(in, magic, sizeof magic);
  if (!std::equal(std::begin(magic), std::end(magic), std::begin(kDatasetMagic)))
    throw FormatError("dataset: bad magic");
  if (get<std::uint8_t>(in) != kDatasetVersion) throw FormatError("dataset: unsupported version");
  Dataset ds;
  ds.K = static_cast<int>(get<std::uint32_t>(in));
  ds.N = static_cast<int>(get<std::uint32_t>(in));
  ds.Lt = static_cast<int>(get<std::uint32_t>(in));
  ds.dc = static_cast<int>(get<std::uint32_t>(in));
  const auto count = get<std::uint64_t>(in);
  ds.cfg_fingerprint = get<std::uint64_t>(in);
  if (ds.K < 1 || ds.N < 1 || ds.Lt < 1 || ds.dc < 1) throw FormatError("dataset: bad dimensions");
  const std::size_t nh = static_cast<std::size_t>(ds.K) * ds.dc;
  const std::size_t ny = static_cast<std::size_t>(ds.N) * ds.Lt;
  for (std::uint64_t i = 0; i < count; ++i) {
    Scenario s;
    s.snr_db = get<double>(in);
    s.noise_var = snr_to_noise_var(s.snr_db);
    s.alpha.resize(static_cast<std::size_t>(ds.K));
    get_bytes(in, s.alpha.data(), s.alpha.size());
    get_complex(in, s.h_bar, nh);
    get_complex(in, s.y, ny);
    ds.samples.push_back(std::move(s));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("dataset: trailing bytes");
  return ds;
}

inline void write_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_dataset(ds, out);
  if (!out) throw IoError("write failed: " + path);
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_dataset(in);
}

/// Reads a dataset and checks it against the consumer's configuration.
inline Dataset read_dataset(const std::string& path, const SystemConfig& cfg) {
  Dataset ds = read_dataset(path);
  ds.check_matches(cfg);
  return ds;
}

}  // namespace nora
