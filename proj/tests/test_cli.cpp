#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

// End-to-end checks against the built binary (path injected by CMake).

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string out;
};

CmdResult run_cli(const std::string& args) {
  const std::string cmd = std::string(MVP_CLI_PATH) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CmdResult r;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof(buf), pipe)) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("param-count prints the 200-token tiny count") {
  auto r = run_cli("param-count --prompt-tokens 200");
  CHECK(r.exit_code == 0);
  CHECK(r.out == "460800\n");
}

TEST_CASE("param-count respects the default 10 tokens") {
  auto r = run_cli("param-count");
  CHECK(r.exit_code == 0);
  CHECK(r.out == "23040\n");  // 12 * 10 * 192
}

TEST_CASE("unknown flags and subcommands exit with code 2") {
  CHECK(run_cli("param-count --no-such-flag").exit_code == 2);
  CHECK(run_cli("no-such-subcommand").exit_code == 2);
  CHECK(run_cli("").exit_code == 2);  // a subcommand is required
}

TEST_CASE("synth-gen then sample-episodes honors --maxway 5") {
  auto dir = temp_dir("mvp_cli_test");
  {
    std::ofstream cfg(dir / "gen.cfg");
    cfg << "synth_classes = 8\nsynth_samples = 8\nsynth_image_size = 16\n";
  }
  auto gen = run_cli("synth-gen --config " + (dir / "gen.cfg").string() + " --out " + dir.string());
  CHECK(gen.exit_code == 0);
  REQUIRE(fs::exists(dir / "synth.mvpd"));

  {
    std::ofstream cfg(dir / "run.cfg");
    cfg << "image_size = 16\npatch_size = 8\nembed_dim = 8\nlayers = 2\nheads = 2\n"
        << "maxshot = 1\nqueries_per_class = 2\neval_tasks = 6\n"
        << "target = " << (dir / "synth.mvpd").string() << "\n";
  }
  auto dump = run_cli("sample-episodes --config " + (dir / "run.cfg").string() + " --maxway 5");
  CHECK(dump.exit_code == 0);
  std::istringstream lines(dump.out);
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    // "episode_id, way, shot, ..."
    const auto first_comma = line.find(", ");
    REQUIRE(first_comma != std::string::npos);
    const auto second_comma = line.find(", ", first_comma + 2);
    REQUIRE(second_comma != std::string::npos);
    CHECK(line.substr(first_comma + 2, second_comma - first_comma - 2) == "5");
    ++count;
  }
  CHECK(count == 6);
  fs::remove_all(dir);
}

TEST_CASE("help exits cleanly") {
  CHECK(run_cli("--help").exit_code == 0);
}
