#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr folded into the captured output.
Result cli(const std::string& args) {
  const std::string cmd = std::string(UNISPOOF_CLI) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  Result r;
  char buf[4096];
  std::size_t n = 0;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("unispoof_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const std::vector<std::string> kCommands = {"gen-data", "augment", "train-frm",  "train-uad",   "sweep-blocks",
                                            "verify",   "eval",    "gradcheck", "count-params"};

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(cli("").code == 1);
  const Result unknown = cli("no-such-command");
  CHECK(unknown.code == 1);
  CHECK(unknown.out.find("Usage") != std::string::npos);
  const Result flag = cli("count-params --no-such-flag");
  CHECK(flag.code == 1);
  CHECK(flag.out.find("Usage") != std::string::npos);
  CHECK(cli("count-params --freeze maybe").code == 1);
  CHECK(cli("augment").code == 1);  // --input is required
}

TEST_CASE("help lists every flag with defaults") {
  for (const auto& name : kCommands) {
    CAPTURE(name);
    const Result r = cli(name + " --help");
    CHECK(r.code == 0);
    for (const char* flag : {"--config", "--seed", "--out", "--preset", "--tap", "--freeze", "--no-timestamp"}) {
      CHECK(r.out.find(flag) != std::string::npos);
    }
    CHECK(r.out.find("--seed UINT [0]") != std::string::npos);
    CHECK(r.out.find("--out TEXT [run]") != std::string::npos);
    CHECK(r.out.find("[swin-desk]") != std::string::npos);
    CHECK(r.out.find("[true]") != std::string::npos);
  }
  CHECK(cli("count-params --help").out.find("--classes UINT [16]") != std::string::npos);
  CHECK(cli("augment --help").out.find("[spsc]") != std::string::npos);
  CHECK(cli("gradcheck --help").out.find("--all") != std::string::npos);
}

TEST_CASE("validation and runtime failures map to exit codes") {
  const fs::path out = temp_dir("codes");
  const std::string o = " --out " + out.string();
  CHECK(cli("count-params --preset nope" + o).code == 1);
  CHECK(cli("count-params --tap 42" + o).code == 1);
  CHECK(cli("count-params --config " + (out / "missing.json").string() + o).code == 2);
  CHECK(cli("eval" + o).code == 1);  // nothing trained yet
  std::ofstream(out / "junk.ckpt") << "junk";
  const Result junk = cli("verify --checkpoint " + (out / "junk.ckpt").string() + o);
  CHECK(junk.code == 2);
  CHECK(junk.out.find("junk.ckpt") != std::string::npos);
}

TEST_CASE("gradcheck --all exits 0") {
  const fs::path out = temp_dir("grad");
  const Result r = cli("gradcheck --all --no-timestamp --out " + out.string());
  CHECK(r.code == 0);
  CHECK(r.out.find("model.end_to_end") != std::string::npos);
  CHECK(r.out.find("\"pass\": false") == std::string::npos);
  CHECK(cli("gradcheck --all --only op. --out " + out.string()).code == 1);
}

TEST_CASE("count-params on the full preset") {
  const fs::path out = temp_dir("count");
  const Result r = cli("count-params --preset swin-base-paper --classes 10572 --no-timestamp --out " + out.string());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("\"arcface_head\": 10825728") != std::string::npos);
  CHECK(r.out.find("\"schema_version\": 1") != std::string::npos);
  CHECK(r.out.find("timestamp") == std::string::npos);
  CHECK(slurp(out / "count-params.json") == r.out);
  CHECK(cli("count-params --out " + out.string()).out.find("\"timestamp\"") != std::string::npos);
}

TEST_CASE("every subcommand re-runs byte-identically") {
  const fs::path base = temp_dir("rerun");
  const fs::path config = base / "tiny.json";
  std::ofstream(config) << R"({
    "dataset": {"n_identities": 6, "per_identity": 4, "test_identities": 2, "val_per_identity": 1},
    "train": {"max_epochs": 2, "patience": 2},
    "uad_train": {"max_epochs": 2, "patience": 2},
    "genuine_pairs": 10, "impostor_pairs": 10})";

  const auto pipeline = [&](const fs::path& out) {
    const std::string common = " --config " + config.string() + " --seed 5 --no-timestamp --out " + out.string();
    std::vector<std::string> steps = {"gen-data",  "train-frm",  "train-uad --tap 1", "sweep-blocks",
                                      "verify",    "eval",       "count-params",      "gradcheck --only op.softmax"};
    for (const auto& s : steps) {
      CAPTURE(s);
      REQUIRE(cli(s + common).code == 0);
    }
    const std::string image = (out / "data" / "images" / "id000_v00.ppm").string();
    REQUIRE(cli("augment --kind spsc --input " + image + common).code == 0);
    REQUIRE(cli("augment --kind sdsc --input " + image + common).code == 0);
  };
  const fs::path a = base / "run";
  pipeline(a);
  std::vector<std::pair<fs::path, std::string>> first;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.is_regular_file()) first.emplace_back(e.path(), slurp(e.path()));
  }
  CHECK(first.size() > 20);
  pipeline(a);
  for (const auto& [path, bytes] : first) {
    CAPTURE(path);
    CHECK(slurp(path) == bytes);
  }
  for (const auto& name : kCommands) CHECK(fs::exists(a / (name + ".json")));
  CHECK(slurp(a / "train-uad.json").find("\"backbone_unchanged\": true") != std::string::npos);
  CHECK(slurp(a / "sweep-blocks.json").find("\"best_tap\"") != std::string::npos);
}
