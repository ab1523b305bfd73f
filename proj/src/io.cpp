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

#include "resalign/io.hpp"

#include <bit>
#include <charconv>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "resalign/errors.hpp"

namespace resalign {

namespace {

static_assert(std::numeric_limits<double>::is_iec559, "checkpoints assume IEEE-754 doubles");

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) throw CheckpointError(std::string("checkpoint truncated in ") + what);
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic, 6);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.arch.size()));
  out += ckpt.arch;
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(ckpt.params.size()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.schedule.size()));
  out += ckpt.schedule;
  out.reserve(out.size() + 8 * static_cast<std::size_t>(ckpt.params.size()));
  for (Eigen::Index i = 0; i < ckpt.params.size(); ++i) {
    put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(ckpt.params[i]));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 6 || bytes.compare(0, 6, kCheckpointMagic) != 0) {
    throw CheckpointError("bad checkpoint header: magic is not RSALN1");
  }
  Reader r(bytes);
  r.str(6, "header");
  Checkpoint c;
  c.arch = r.str(r.get<std::uint32_t>("header"), "architecture descriptor");
  const auto d = r.get<std::uint64_t>("header");
  c.schedule = r.str(r.get<std::uint32_t>("header"), "schedule descriptor");
  if (r.remaining() != 8 * d) {
    throw CheckpointError("checkpoint payload is " + std::to_string(r.remaining()) +
                          " bytes, header declares " + std::to_string(d) + " parameters");
  }
  c.params.resize(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < c.params.size(); ++i) {
    c.params[i] = std::bit_cast<double>(r.get<std::uint64_t>("payload"));
  }
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

void require_compatible(const Checkpoint& ckpt, const std::string& arch,
                        const std::string& schedule, Eigen::Index d) {
  if (ckpt.arch != arch) {
    throw CheckpointError("checkpoint architecture '" + ckpt.arch + "' does not match '" + arch + "'");
  }
  if (ckpt.schedule != schedule) {
    throw CheckpointError("checkpoint schedule '" + ckpt.schedule + "' does not match '" + schedule + "'");
  }
  if (ckpt.params.size() != d) throw CheckpointError("checkpoint parameter count mismatch");
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw UsageError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw UsageError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_real(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string format_short(double x) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

std::string format_report(const std::vector<ReportRow>& rows) {
  std::string out = kReportHeader;
  out += '\n';
  for (const ReportRow& r : rows) {
    if (r.run_id.find_first_of(",\n") != std::string::npos ||
        r.phase.find_first_of(",\n") != std::string::npos ||
        r.metric.find_first_of(",\n") != std::string::npos) {
      throw UsageError("report fields must not contain commas or newlines");
    }
    out += r.run_id + ',' + r.phase + ',' + std::to_string(r.step) + ',' + r.metric + ',' +
           format_real(r.value) + ',' + format_real(r.std_error) + ',' + std::to_string(r.seed) + '\n';
  }
  return out;
}

std::vector<ReportRow> parse_report(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kReportHeader) throw UsageError("report header mismatch");
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw UsageError("report row has " + std::to_string(f.size()) + " fields");
    ReportRow r;
    r.run_id = f[0];
    r.phase = f[1];
    r.step = std::stol(f[2]);
    r.metric = f[3];
    r.value = std::strtod(f[4].c_str(), nullptr);
    r.std_error = std::strtod(f[5].c_str(), nullptr);
    r.seed = std::stoull(f[6]);
    rows.push_back(std::move(r));
  }
  return rows;
}

void append_manifest(const std::filesystem::path& dir, const std::string& file,
                     const std::string& command) {
  const std::filesystem::path m = dir / "MANIFEST";
  std::string existing;
  if (std::filesystem::exists(m)) existing = read_file(m);
  write_file_atomic(m, existing + file + '\t' + command + '\n');
}

}  // namespace resalign
