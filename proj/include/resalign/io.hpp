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

#pragma once

// On-disk formats: parameter checkpoints, the long-format CSV report, and the
// per-run-directory manifest.
//
// Checkpoint layout (all integers little-endian):
//   6 bytes   magic "RSALN1"
//   u32 + n   architecture descriptor
//   u64       parameter count d
//   u32 + n   schedule descriptor
//   8 d       parameters as IEEE-754 binary64

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "resalign/autodiff.hpp"

namespace resalign {

inline constexpr char kCheckpointMagic[] = "RSALN1";

struct Checkpoint {
  std::string arch;      // Architecture::descriptor()
  std::string schedule;  // NoiseSchedule::descriptor()
  ParamVector params;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Throws CheckpointError unless descriptors and size match.
void require_compatible(const Checkpoint& ckpt, const std::string& arch,
                        const std::string& schedule, Eigen::Index d);

// Writes to a sibling temp file, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

struct ReportRow {
  std::string run_id;
  std::string phase;
  long step = 0;
  std::string metric;
  double value = 0.0;
  double std_error = 0.0;
  std::uint64_t seed = 0;
};

inline constexpr char kReportHeader[] = "run_id,phase,step,metric,value,std_error,seed";

// Reals are printed with %.17g so the text round-trips exactly.
std::string format_real(double x);
// Shortest text that parses back to the same double (for labels and configs).
std::string format_short(double x);
std::string format_report(const std::vector<ReportRow>& rows);
std::vector<ReportRow> parse_report(const std::string& text);

// Appends "<file>\t<command>" to <dir>/MANIFEST, creating it if needed.
void append_manifest(const std::filesystem::path& dir, const std::string& file,
                     const std::string& command);

}  // namespace resalign
