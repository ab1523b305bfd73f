// Copyright 2026 The resalign-toy Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "resalign/config.hpp"
#include "resalign/errors.hpp"
#include "resalign/io.hpp"
#include "resalign/pipeline.hpp"
#include "support.hpp"

using namespace resalign;
using namespace resalign::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "resalign-unit";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
  ParamVector p = random_vector(37, 1);
  p[3] = -0.0;
  p[4] = std::numeric_limits<double>::denorm_min();
  p[5] = std::nextafter(1.0, 2.0);
  const Checkpoint c{"arch-x", "sched-y", p};
  const std::string bytes = encode_checkpoint(c);
  CHECK(bytes.size() == 6 + 4 + 6 + 8 + 4 + 7 + 8 * 37);
  CHECK(bytes.substr(0, 6) == "RSALN1");
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back.arch == c.arch);
  CHECK(back.schedule == c.schedule);
  REQUIRE(back.params.size() == 37);
  CHECK(std::memcmp(back.params.data(), p.data(), 8 * 37) == 0);

  const fs::path path = scratch("rt.ckpt");
  write_checkpoint(path, c);
  CHECK(read_file(path) == bytes);
  CHECK(read_checkpoint(path).params == p);
}

TEST_CASE("checkpoint corruption and compatibility") {
  const Checkpoint c{"a", "s", random_vector(4, 2)};
  std::string bytes = encode_checkpoint(c);
  std::string bad = bytes;
  bad[0] = 'X';
  try {
    decode_checkpoint(bad);
    FAIL("expected a header error");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("header") != std::string::npos);
  }
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), CheckpointError);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), CheckpointError);
  CHECK_THROWS_AS(decode_checkpoint(""), CheckpointError);

  require_compatible(c, "a", "s", 4);
  CHECK_THROWS_AS(require_compatible(c, "b", "s", 4), CheckpointError);
  CHECK_THROWS_AS(require_compatible(c, "a", "t", 4), CheckpointError);
  CHECK_THROWS_AS(require_compatible(c, "a", "s", 5), CheckpointError);

  // A checkpoint from another architecture is rejected on load.
  const Fixture& f = fixture();
  Architecture other = f.testbed.net.arch();
  other.hidden = {8};
  const fs::path path = scratch("other.ckpt");
  write_checkpoint(path, Checkpoint{other.descriptor(), f.testbed.schedule.descriptor(),
                                    ParamVector::Zero(other.param_count())});
  CHECK_THROWS_AS(load_params(f.testbed, path), CheckpointError);
  CHECK_THROWS_AS(read_checkpoint(scratch("missing.ckpt")), Error);
}

TEST_CASE("report formatting round trips") {
  const std::vector<ReportRow> rows = {
      {"r:x", "eval", 0, "harmful_fraction", 0.1, 1.0 / 3.0, 18446744073709551615ull},
      {"r:x", "resilience", 200, "auc", -2.5e-300, 0.0, 0}};
  const std::string text = format_report(rows);
  CHECK(text.rfind(std::string(kReportHeader) + "\n", 0) == 0);
  const auto back = parse_report(text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].std_error == 1.0 / 3.0);
  CHECK(back[0].seed == 18446744073709551615ull);
  CHECK(back[1].value == -2.5e-300);
  CHECK(format_report(back) == text);
  CHECK_THROWS(format_report({{"a,b", "eval", 0, "m", 0, 0, 0}}));
  CHECK(format_short(0.1) == "0.1");
  CHECK(std::stod(format_real(0.1)) == 0.1);
}

TEST_CASE("report golden file") {
  // Small pinned-seed pipeline; its CSV must not drift.
  RunConfig c = small_config(2024);
  c.run_id = "golden";
  c.pretrain.steps = 30;
  c.unlearn.outer_steps = 2;
  c.attack.steps = 4;
  c.eval.checkpoints = {0, 2, 4};
  Testbed tb = build_testbed(c);
  const ParamVector base = train_base(c, tb);
  const auto [theta, rec] = unlearn(c, tb, base, Method::kResalign);
  std::vector<ReportRow> rows = unlearn_rows(c, "resalign", rec);
  const auto more = eval_rows(c, evaluate_model(c, tb, theta, "resalign"));
  rows.insert(rows.end(), more.begin(), more.end());
  const std::string text = format_report(rows);

  const fs::path golden = fs::path(RESALIGN_GOLDEN_DIR) / "report.csv";
  if (std::getenv("RESALIGN_UPDATE_GOLDEN") != nullptr) write_file_atomic(golden, text);
  REQUIRE(fs::exists(golden));
  CHECK(read_file(golden) == text);
}

TEST_CASE("manifest and atomic writes") {
  const fs::path dir = scratch("manifest-dir");
  fs::remove_all(dir);
  fs::create_directories(dir);
  append_manifest(dir, "a.csv", "eval x");
  append_manifest(dir, "b.ckpt", "unlearn y");
  CHECK(read_file(dir / "MANIFEST") == "a.csv\teval x\nb.ckpt\tunlearn y\n");
  write_file_atomic(dir / "f.txt", "one");
  write_file_atomic(dir / "f.txt", "two");
  CHECK(read_file(dir / "f.txt") == "two");
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir)) files += e.is_regular_file() ? 1 : 0;
  CHECK(files == 2);
}

TEST_CASE("config text round trip") {
  RunConfig c = small_config(99);
  c.unlearn.fixed_config = FinetuneConfig{OptimizerKind::kSgd, 1e-4, 7, LossKind::kPriorPreservation, {true, 3}, 10, 0};
  c.unlearn.hypergrad.form = IterationForm::kGammaIdentityPlusH;
  c.attack.parameterization = {true, 2};
  c.eval.gamma_sweep = {0.01, 0.3};
  const std::string text = to_text(c);
  const RunConfig back = parse_config(text);
  CHECK(to_text(back) == text);
  CHECK(back.seed == 99);
  CHECK(back.unlearn.fixed_config.has_value());
  CHECK(*back.unlearn.fixed_config == *c.unlearn.fixed_config);
  CHECK(back.attack == c.attack);
  CHECK(back.eval.gamma_sweep == c.eval.gamma_sweep);
  CHECK(back.testbed.sizes.train_per_concept == 100);

  CHECK(to_text(parse_config("")) == to_text(RunConfig{}));
  const RunConfig shipped = load_config(fs::path(RESALIGN_CONFIG_DIR) / "default.ini");
  CHECK(to_text(shipped) == to_text(RunConfig{}));
  load_config(fs::path(RESALIGN_CONFIG_DIR) / "smoke.ini").validate();
}

TEST_CASE("config rejects bad input") {
  CHECK_THROWS_AS(parse_config("[run]\nbogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[nope]\nseed = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[run]\nseed = abc\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[unlearn]\nbeta = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[attack]\nparameterization = low-rank:0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[unlearn]\nfixed_config = sgd:1e-4\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[eval]\nn_samples = 10\n"), ConfigError);
  try {
    load_config("/nonexistent/run.ini");
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("/nonexistent/run.ini") != std::string::npos);
  }
  CHECK(parse_parameterization("full") == Parameterization{false, 4});
  CHECK(to_string(parse_parameterization("low-rank:5")) == "low-rank:5");
}
