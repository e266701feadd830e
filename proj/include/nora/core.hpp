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

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nora {

using cplx = std::complex<double>;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "Error"; }
};

#define NORA_DEFINE_ERROR(Name)                                   \
  struct Name : Error {                                           \
    using Error::Error;                                           \
    const char* kind() const noexcept override { return #Name; }  \
  }

NORA_DEFINE_ERROR(DimensionError);
NORA_DEFINE_ERROR(CapacityError);
NORA_DEFINE_ERROR(ConstructionError);
NORA_DEFINE_ERROR(NumericalError);
NORA_DEFINE_ERROR(IoError);
NORA_DEFINE_ERROR(FormatError);
NORA_DEFINE_ERROR(FingerprintError);
NORA_DEFINE_ERROR(ConfigError);
NORA_DEFINE_ERROR(MaskError);
NORA_DEFINE_ERROR(CacheMismatchError);
NORA_DEFINE_ERROR(SingularityError);
NORA_DEFINE_ERROR(DegenerateSampleError);
NORA_DEFINE_ERROR(UsageError);

#undef NORA_DEFINE_ERROR

// ---------------------------------------------------------------------------
// System configuration
// ---------------------------------------------------------------------------

/// Dimensions, priors and thresholds of one grant-free random-access setup.
/// Defaults reproduce the crowded reference system (110 users on 8
/// subcarriers, length-11 pilots, spreading degree 4).
struct SystemConfig {
  int K = 110;             ///< potential users
  int N = 8;               ///< subcarriers
  int Lt = 11;             ///< pilot length in symbols
  int dc = 4;              ///< occupied subcarriers per user
  double Pa = 0.1;         ///< per-user activation probability
  double gamma_th = 0.1;   ///< a user is active iff 1/gamma_hat > gamma_th
  double a = 1e-4;         ///< Gamma prior shape
  double b = 1e-4;         ///< Gamma prior rate
  int Nit = 10;            ///< iteration blocks
  double lambda0 = 1e3;    ///< initial noise precision estimate
  double eps_v = 1e-12;    ///< variance floor
  std::uint64_t graph_seed = 7;

  bool operator==(const SystemConfig&) const = default;
};

/// Small configuration used for fast experiments and the training tests.
inline SystemConfig desk_config() {
  SystemConfig cfg;
  cfg.K = 20;
  cfg.N = 4;
  cfg.Lt = 5;
  cfg.dc = 2;
  cfg.Nit = 5;
  return cfg;
}

struct DerivedDims {
  int dr = 0;                     ///< users per subcarrier
  std::int64_t E = 0;             ///< factor-graph edges, Lt*dc*K
  std::array<std::int64_t, 9> layer_len{};  ///< output length of layers 1..9

  bool operator==(const DerivedDims&) const = default;
};

inline void validate_config(const SystemConfig& cfg) {
  auto fail = [](const std::string& what) { throw DimensionError("invalid config: " + what); };
  if (cfg.K < 1) fail("K >= 1 violated");
  if (cfg.N < 1) fail("N >= 1 violated");
  if (cfg.Lt < 1) fail("Lt >= 1 violated");
  if (cfg.dc < 1 || cfg.dc > cfg.N) fail("1 <= dc <= N violated");
  if (!(cfg.Pa >= 0.0 && cfg.Pa <= 1.0)) fail("0 <= Pa <= 1 violated");
  if (cfg.Nit < 1) fail("Nit >= 1 violated");
  if (!(cfg.gamma_th > 0.0)) fail("gamma_th > 0 violated");
  if (!(cfg.a > 0.0) || !(cfg.b > 0.0)) fail("a, b > 0 violated");
  if (!(cfg.lambda0 > 0.0)) fail("lambda0 > 0 violated");
  if (!(cfg.eps_v > 0.0)) fail("eps_v > 0 violated");
  if ((static_cast<std::int64_t>(cfg.K) * cfg.dc) % cfg.N != 0)
    fail("K*dc = " + std::to_string(static_cast<std::int64_t>(cfg.K) * cfg.dc) +
         " not divisible by N = " + std::to_string(cfg.N));
}

inline DerivedDims derived_dims(const SystemConfig& cfg) {
  validate_config(cfg);
  DerivedDims d;
  const std::int64_t K = cfg.K, N = cfg.N, Lt = cfg.Lt, dc = cfg.dc;
  d.dr = static_cast<int>(K * dc / N);
  d.E = Lt * dc * K;
  d.layer_len = {N * Lt, d.E, dc * K, dc * K, K, d.E, N * Lt, N * Lt, 1};
  return d;
}

// 64-bit FNV-1a over the fields that shape the data and the network topology.
inline std::uint64_t config_fingerprint(const SystemConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  mix(static_cast<std::uint64_t>(cfg.K));
  mix(static_cast<std::uint64_t>(cfg.N));
  mix(static_cast<std::uint64_t>(cfg.Lt));
  mix(static_cast<std::uint64_t>(cfg.dc));
  std::uint64_t pa_bits = 0;
  static_assert(sizeof(double) == sizeof(std::uint64_t));
  std::memcpy(&pa_bits, &cfg.Pa, sizeof pa_bits);
  mix(pa_bits);
  mix(cfg.graph_seed);
  return h;
}

// ---------------------------------------------------------------------------
// Config file: flat key=value, '#' starts a comment. Missing keys keep the
// defaults above; unknown keys are rejected.
// ---------------------------------------------------------------------------

inline SystemConfig parse_config(const std::string& text) {
  SystemConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const char* ws = " \t\r\n";
      s.erase(0, s.find_first_not_of(ws));
      s.erase(s.find_last_not_of(ws) + 1);
      return s;
    };
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      std::size_t used = 0;
      auto as_int = [&] { int v = std::stoi(val, &used); return v; };
      auto as_real = [&] { double v = std::stod(val, &used); return v; };
      if (key == "K") cfg.K = as_int();
      else if (key == "N") cfg.N = as_int();
      else if (key == "Lt") cfg.Lt = as_int();
      else if (key == "dc") cfg.dc = as_int();
      else if (key == "Pa") cfg.Pa = as_real();
      else if (key == "gamma_th") cfg.gamma_th = as_real();
      else if (key == "a") cfg.a = as_real();
      else if (key == "b") cfg.b = as_real();
      else if (key == "Nit") cfg.Nit = as_int();
      else if (key == "lambda0") cfg.lambda0 = as_real();
      else if (key == "eps_v") cfg.eps_v = as_real();
      else if (key == "graph_seed") cfg.graph_seed = std::stoull(val, &used);
      else throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
      if (used != val.size())
        throw ConfigError("config line " + std::to_string(lineno) + ": trailing characters in value of '" + key + "'");
    } catch (const std::logic_error&) {
      throw ConfigError("config line " + std::to_string(lineno) + ": bad value for '" + key + "'");
    }
  }
  return cfg;
}

inline SystemConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

inline std::string format_config(const SystemConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  out << "K=" << cfg.K << "\nN=" << cfg.N << "\nLt=" << cfg.Lt << "\ndc=" << cfg.dc
      << "\nPa=" << cfg.Pa << "\ngamma_th=" << cfg.gamma_th << "\na=" << cfg.a << "\nb=" << cfg.b
      << "\nNit=" << cfg.Nit << "\nlambda0=" << cfg.lambda0 << "\neps_v=" << cfg.eps_v
      << "\ngraph_seed=" << cfg.graph_seed << "\n";
  return out.str();
}

}  // namespace nora
