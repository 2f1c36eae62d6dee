// Copyright (c) 2026 The tinytts Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Drives the installed binary end to end. The binary path arrives via the
// TINYTTS_BIN environment variable set by the test harness.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <set>
#include <string>

#include "tinytts/io.hpp"

using namespace tinytts;
namespace fs = std::filesystem;

namespace {

std::string bin() {
  const char* b = std::getenv("TINYTTS_BIN");
  REQUIRE(b != nullptr);
  return b;
}

std::string work_dir() {
  const std::string d = (fs::temp_directory_path() / "tinytts_cli_work").string();
  return d;
}

int run(const std::string& args) {
  const std::string cmd = bin() + " " + args + " >" + work_dir() + "/out.txt 2>" + work_dir() +
                          "/err.txt";
  const int status = std::system(cmd.c_str());
  if (status == -1) return -1;
  return WEXITSTATUS(status);
}

std::string out_text() { return read_text_file(work_dir() + "/out.txt"); }

bool dirs_byte_identical(const std::string& a, const std::string& b) {
  std::set<std::string> names_a, names_b;
  for (const auto& e : fs::directory_iterator(a))
    if (e.is_regular_file()) names_a.insert(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b))
    if (e.is_regular_file()) names_b.insert(e.path().filename().string());
  if (names_a != names_b) return false;
  for (const auto& n : names_a)
    if (read_text_file((fs::path(a) / n).string()) != read_text_file((fs::path(b) / n).string()))
      return false;
  return true;
}

struct CliFixture {
  std::string w = work_dir();
  CliFixture() {
    fs::remove_all(w);
    fs::create_directories(w);
  }
  std::string gen_args(const std::string& out, unsigned seed) const {
    return "gen-data --out " + out + " --speakers 2 --utts 3 --phonemes 6 --mels 8 --d-spk 8 " +
           "--min-len 6 --max-len 6 --seed " + std::to_string(seed);
  }
};

}  // namespace

TEST_CASE("exit codes: usage errors are 1, runtime failures are 2, help is 0") {
  CliFixture f;
  CHECK(run("definitely-not-a-subcommand") == 1);
  CHECK(run("synth --no-such-flag") == 1);
  CHECK(run("synth") == 1);  // missing required flags
  CHECK(run("--help") == 0);
  CHECK(run("train --data " + f.w + "/missing --out " + f.w + "/x.cpk") == 2);
}

TEST_CASE("gen-data is byte-deterministic under a fixed seed") {
  CliFixture f;
  REQUIRE(run(f.gen_args(f.w + "/d1", 7)) == 0);
  REQUIRE(run(f.gen_args(f.w + "/d2", 7)) == 0);
  CHECK(dirs_byte_identical(f.w + "/d1", f.w + "/d2"));
  REQUIRE(run(f.gen_args(f.w + "/d3", 8)) == 0);
  CHECK(!dirs_byte_identical(f.w + "/d1", f.w + "/d3"));
}

TEST_CASE("train, synth and eval work end to end") {
  CliFixture f;
  REQUIRE(run(f.gen_args(f.w + "/data", 7) + " --held-out 1 --ref-utts 3") == 0);
  REQUIRE(run("train --data " + f.w + "/data --out " + f.w + "/m.cpk --steps 8 --batch 2 "
              "--conditioning predictors --seed 5 --log " + f.w + "/loss.log") == 0);

  // loss log: step<TAB>loss lines
  const std::string log = read_text_file(f.w + "/loss.log");
  CHECK(log.find("1\t") == 0);

  // anonymous synthesis equals the explicit zero embedding
  REQUIRE(run("synth --ckpt " + f.w + "/m.cpk --tokens \"p1 p2 p3\" --anonymous --out " + f.w +
              "/anon.mel") == 0);
  REQUIRE(run("synth --ckpt " + f.w + "/m.cpk --tokens \"p1 p2 p3\" --speaker-embedding zero "
              "--out " + f.w + "/zero.mel") == 0);
  CHECK(read_text_file(f.w + "/anon.mel") == read_text_file(f.w + "/zero.mel"));

  // speaker synthesis runs and differs from anonymous
  REQUIRE(run("synth --ckpt " + f.w + "/m.cpk --tokens \"p1 p2 p3\" --speaker spk0 --out " + f.w +
              "/spk.mel") == 0);

  // exactly one speaker selector is required
  CHECK(run("synth --ckpt " + f.w + "/m.cpk --tokens \"p1\" --out " + f.w + "/x.mel") == 1);
  CHECK(run("synth --ckpt " + f.w + "/m.cpk --tokens \"p1\" --anonymous --speaker spk0 --out " +
            f.w + "/x.mel") == 1);

  // eval writes a header plus one row per checkpoint (and anonymous rows on top)
  REQUIRE(run("eval --ckpt " + f.w + "/m.cpk --data " + f.w + "/data --report " + f.w +
              "/report.tsv --split train --anonymous --phrases 2") == 0);
  const std::string tsv = read_text_file(f.w + "/report.tsv");
  CHECK(tsv.find("config\tWER\tMER\tWIL\tWIP\tCosSim\n") == 0);
  std::size_t lines = 0;
  for (char c : tsv)
    if (c == '\n') ++lines;
  CHECK(lines == 4);  // header + tts row + anonymous mean/max rows

  // adapt on the held-out reference directory
  REQUIRE(run("adapt --ckpt " + f.w + "/m.cpk --refs " + f.w + "/data/refs_heldout0 "
              "--speaker-id newvoice --data " + f.w + "/data --out " + f.w + "/m_adapted.cpk "
              "--freeze duration --steps 5") == 0);
  CHECK(fs::exists(f.w + "/m_adapted.cpk"));

  // adapted checkpoint synthesizes the new speaker
  REQUIRE(run("synth --ckpt " + f.w + "/m_adapted.cpk --tokens \"p1 p2\" --speaker newvoice "
              "--out " + f.w + "/new.mel") == 0);

  // unknown speaker is a runtime failure
  CHECK(run("synth --ckpt " + f.w + "/m.cpk --tokens \"p1\" --speaker ghost --out " + f.w +
            "/g.mel") == 2);
}

TEST_CASE("train rejects config files with unknown keys") {
  CliFixture f;
  REQUIRE(run(f.gen_args(f.w + "/data", 7)) == 0);
  write_text_file(f.w + "/bad.cfg", "d_model=16\nnot_a_key=1\n");
  CHECK(run("train --data " + f.w + "/data --out " + f.w + "/m.cpk --steps 1 --config " + f.w +
            "/bad.cfg") == 2);
  write_text_file(f.w + "/good.cfg", "d_model=16\nn_heads=2\nsteps=2\nlearning_rate=0.001\n");
  CHECK(run("train --data " + f.w + "/data --out " + f.w + "/m.cpk --config " + f.w +
            "/good.cfg") == 0);
}

TEST_CASE("train determinism: identical seeds give identical checkpoints") {
  CliFixture f;
  REQUIRE(run(f.gen_args(f.w + "/data", 7)) == 0);
  const std::string common =
      "train --data " + f.w + "/data --steps 5 --batch 2 --seed 11 --log " + f.w + "/l.log";
  REQUIRE(run(common + " --out " + f.w + "/a.cpk") == 0);
  REQUIRE(run(common + " --out " + f.w + "/b.cpk") == 0);
  CHECK(read_text_file(f.w + "/a.cpk") == read_text_file(f.w + "/b.cpk"));
}

TEST_CASE("resumed training matches the uninterrupted run byte for byte") {
  CliFixture f;
  REQUIRE(run(f.gen_args(f.w + "/data", 7)) == 0);
  const std::string common = "train --data " + f.w + "/data --batch 2 --seed 9";
  REQUIRE(run(common + " --steps 6 --out " + f.w + "/full.cpk --log " + f.w + "/l1.log") == 0);
  REQUIRE(run(common + " --steps 4 --out " + f.w + "/mid.cpk --log " + f.w + "/l2.log") == 0);
  REQUIRE(run("train --data " + f.w + "/data --batch 2 --seed 9 --steps 2 --resume " + f.w +
              "/mid.cpk --out " + f.w + "/resumed.cpk --log " + f.w + "/l3.log") == 0);
  CHECK(read_text_file(f.w + "/full.cpk") == read_text_file(f.w + "/resumed.cpk"));
}

TEST_CASE("gradcheck subcommand reports and passes") {
  CliFixture f;
  REQUIRE(run("gradcheck --seed 2 --conditioning predictors") == 0);
  CHECK(out_text().find("PASS") != std::string::npos);
}
