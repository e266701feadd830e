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
#include <gtest/gtest.h>

#include "nora/core.hpp"

using namespace nora;

TEST(Config, DefaultIsValid) {
  SystemConfig cfg;
  EXPECT_EQ(cfg.K, 110);
  EXPECT_EQ(cfg.N, 8);
  EXPECT_EQ(cfg.Lt, 11);
  EXPECT_EQ(cfg.dc, 4);
  EXPECT_DOUBLE_EQ(cfg.Pa, 0.1);
  EXPECT_DOUBLE_EQ(cfg.gamma_th, 0.1);
  EXPECT_NO_THROW(validate_config(cfg));
}

TEST(Config, MinimalIsValid) {
  SystemConfig cfg;
  cfg.K = cfg.N = cfg.Lt = cfg.dc = 1;
  cfg.Pa = 0.0;
  EXPECT_NO_THROW(validate_config(cfg));
}

TEST(Config, RowDegreeMustBeIntegral) {
  SystemConfig cfg;
  cfg.dc = 3;  // 330 % 8 != 0
  EXPECT_THROW(validate_config(cfg), DimensionError);
}

TEST(Config, RangeChecks) {
  auto bad = [](auto mutate) {
    SystemConfig cfg;
    mutate(cfg);
    EXPECT_THROW(validate_config(cfg), DimensionError);
  };
  bad([](SystemConfig& c) { c.K = 0; });
  bad([](SystemConfig& c) { c.N = 0; });
  bad([](SystemConfig& c) { c.Lt = 0; });
  bad([](SystemConfig& c) { c.dc = 0; });
  bad([](SystemConfig& c) { c.dc = 9; });
  bad([](SystemConfig& c) { c.Pa = 1.5; });
  bad([](SystemConfig& c) { c.Pa = -0.1; });
  bad([](SystemConfig& c) { c.Nit = 0; });
  bad([](SystemConfig& c) { c.eps_v = 0.0; });
}

TEST(DerivedDims, DefaultConfig) {
  const DerivedDims d = derived_dims(SystemConfig{});
  EXPECT_EQ(d.dr, 55);
  EXPECT_EQ(d.E, 4840);
  const std::array<std::int64_t, 9> expect{88, 4840, 440, 440, 110, 4840, 88, 88, 1};
  EXPECT_EQ(d.layer_len, expect);
}

TEST(DerivedDims, OrthogonalAssignment) {
  SystemConfig cfg;
  cfg.K = cfg.N = 6;
  cfg.dc = 1;
  EXPECT_EQ(derived_dims(cfg).dr, 1);
}

TEST(DerivedDims, Pure) {
  const SystemConfig cfg = desk_config();
  EXPECT_EQ(derived_dims(cfg), derived_dims(cfg));
}

TEST(Fingerprint, TracksDataShapingFields) {
  const SystemConfig base;
  SystemConfig other = base;
  other.Nit = 3;
  other.gamma_th = 0.5;
  EXPECT_EQ(config_fingerprint(base), config_fingerprint(other));
  other = base;
  other.K = 20;
  other.N = 4;
  EXPECT_NE(config_fingerprint(base), config_fingerprint(other));
  other = base;
  other.graph_seed = 8;
  EXPECT_NE(config_fingerprint(base), config_fingerprint(other));
  other = base;
  other.Pa = 0.2;
  EXPECT_NE(config_fingerprint(base), config_fingerprint(other));
}

TEST(ConfigFile, RoundTrip) {
  SystemConfig cfg = desk_config();
  cfg.Pa = 0.15;
  cfg.gamma_th = 0.07;
  cfg.graph_seed = 12345678901ULL;
  EXPECT_EQ(parse_config(format_config(cfg)), cfg);
}

TEST(ConfigFile, CommentsAndDefaults) {
  const SystemConfig cfg = parse_config("# desk\n  K = 20 \nN=4\n\nLt=5 # pilots\ndc=2\n");
  EXPECT_EQ(cfg.K, 20);
  EXPECT_EQ(cfg.N, 4);
  EXPECT_EQ(cfg.Lt, 5);
  EXPECT_EQ(cfg.dc, 2);
  EXPECT_EQ(cfg.Nit, SystemConfig{}.Nit);
}

TEST(ConfigFile, Errors) {
  EXPECT_THROW(parse_config("Kx=3\n"), ConfigError);
  EXPECT_THROW(parse_config("K=abc\n"), ConfigError);
  EXPECT_THROW(parse_config("K=3x\n"), ConfigError);
  EXPECT_THROW(parse_config("K 3\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/nora.cfg"), IoError);
}

TEST(Errors, KindNames) {
  try {
    throw FingerprintError("x");
  } catch (const Error& e) {
    EXPECT_STREQ(e.kind(), "FingerprintError");
  }
}
