#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

using nlohmann::json;

namespace {

const std::string kDir = std::string(SFV_TEST_TMPDIR) + "/cli";

std::string p(const std::string& name) { return kDir + "/" + name; }

// Runs the CLI with stdout and stderr captured to files; returns the exit code.
int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + "'" SFV_CLI_PATH "' " + args + " > '" + p("stdout.txt") +
                          "' 2> '" + p("stderr.txt") + "'";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

json load_json(const std::string& path) { return json::parse(slurp(path)); }

int count_lines(const std::string& path) {
  std::istringstream in(slurp(path));
  std::string line;
  int n = 0;
  while (std::getline(in, line)) n += !line.empty();
  return n;
}

// Shared small artifacts, built once.
struct Fixture {
  Fixture() {
    std::filesystem::create_directories(kDir);
    std::ofstream cfg(p("small.cfg"));
    cfg << "net.widths = 4,4,8,8\nnet.groups = 2\nnet.emb_dim = 8\nnet.head_width = 4\n"
        << "data.min_radius = 1.5\ndata.max_radius = 2.5\n"
        << "teacher.batch = 2\nteacher.steps = 5\n"
        << "distill.batch = 2\ndistill.grad_accum = 1\ndistill.steps = 2\n";
    cfg.close();
    REQUIRE(run("gen-data --config " + p("small.cfg") + " --count 12 --frames 4 --size 8 --seed 3 --out " +
                p("train.sfvd")) == 0);
    REQUIRE(run("gen-data --config " + p("small.cfg") + " --count 6 --frames 4 --size 8 --seed 4 --out " +
                p("held.sfvd")) == 0);
    REQUIRE(run("pretrain --config " + p("small.cfg") + " --data " + p("train.sfvd") + " --out " + p("teacher.sfvc") +
                " --steps 3") == 0);
    REQUIRE(run("distill --config " + p("small.cfg") + " --teacher " + p("teacher.sfvc") + " --data " +
                p("train.sfvd") + " --out " + p("student.sfvc") + " --p-mean -1 --p-std -1") == 0);
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("gen-data writes the requested dims deterministically") {
  fixture();
  REQUIRE(run("gen-data --count 5 --frames 8 --size 32 --seed 7 --out " + p("a.sfvd")) == 0);
  REQUIRE(run("gen-data --count 5 --frames 8 --size 32 --seed 7 --out " + p("b.sfvd")) == 0);
  const std::string a = slurp(p("a.sfvd"));
  CHECK(!a.empty());
  CHECK(a == slurp(p("b.sfvd")));
  const json m = load_json(p("a.sfvd.manifest.json"));
  CHECK(m["command"] == "gen-data");
  CHECK(m["stats"]["dims"] == json::array({5, 8, 1, 32, 32}));
  CHECK(m.contains("version"));
  CHECK(m["config"]["data.size"] == "32");
  CHECK(slurp(p("stdout.txt")).find("a.sfvd") == std::string::npos);  // second run printed b
  CHECK(slurp(p("stdout.txt")).find("b.sfvd") != std::string::npos);
}

TEST_CASE("usage errors exit with 1") {
  fixture();
  CHECK(run("gen-data --count 4 --size 30 --out " + p("bad.sfvd")) == 1);
  CHECK(slurp(p("stderr.txt")).find("divisible by 8") != std::string::npos);
  CHECK(run("") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("gen-data --count 4") == 1);
  CHECK(run("distill --data " + p("train.sfvd") + " --out " + p("x.sfvc")) == 1);
  CHECK(run("distill --teacher " + p("teacher.sfvc") + " --data " + p("train.sfvd") + " --out " + p("x.sfvc") +
            " --heads diagonal") == 1);
  CHECK(run("sample --model " + p("student.sfvc") + " --cond " + p("held.sfvd") + " --out " + p("x.sfvd") +
            " --steps 0") == 1);
  CHECK(run("pretrain --data " + p("missing.sfvd") + " --out " + p("x.sfvc")) == 1);
  CHECK(run("gen-data --count 4 --set nonsense --out " + p("x.sfvd")) == 1);
  CHECK(run("distill --teacher " + p("student.sfvc") + " --data " + p("train.sfvd") + " --out " + p("x.sfvc")) == 1);
}

TEST_CASE("runtime failures exit with 2") {
  fixture();
  {
    std::ofstream junk(p("junk.sfvd"));
    junk << "this is not a dataset";
  }
  CHECK(run("pretrain --data " + p("junk.sfvd") + " --out " + p("x.sfvc")) == 2);
  CHECK(slurp(p("stderr.txt")).find("error:") != std::string::npos);
  CHECK(run("gen-data --config " + p("small.cfg") + " --count 4 --frames 4 --size 8 --out /nonexistent_dir/x.sfvd") ==
        2);
  REQUIRE(run("gen-data --count 4 --frames 4 --size 16 --seed 1 --out " + p("big.sfvd")) == 0);
  // Mismatched shapes are rejected as bad input.
  CHECK(run("eval --generated " + p("big.sfvd") + " --real " + p("held.sfvd")) == 1);
  CHECK(slurp(p("stderr.txt")).find("shape") != std::string::npos);
}

TEST_CASE("pretrain: flags override the config file and the manifest echoes it") {
  fixture();
  const json m = load_json(p("teacher.sfvc.manifest.json"));
  CHECK(m["command"] == "pretrain");
  CHECK(m["config"]["teacher.steps"] == "3");
  CHECK(m["config"]["teacher.batch"] == "2");
  CHECK(m["config"]["net.widths"] == "4,4,8,8");
  CHECK(m["model_meta"]["step"] == "3");
  CHECK(count_lines(p("teacher.sfvc.loss.csv")) == 4);
  CHECK(slurp(p("teacher.sfvc.loss.csv")).rfind("step,loss\n", 0) == 0);
}

TEST_CASE("distill records p-mean and p-std verbatim") {
  fixture();
  const json m = load_json(p("student.sfvc.manifest.json"));
  CHECK(m["command"] == "distill");
  CHECK(m["flags_verbatim"]["p_mean"] == "-1");
  CHECK(m["flags_verbatim"]["p_std"] == "-1");
  CHECK(m["config"]["distill.p_mean"] == "-1");
  CHECK(m["config"]["distill.p_std"] == "-1");
  CHECK(m["config"]["distill.heads"] == "both");
  CHECK(m["model_meta"]["distill.heads"] == "both");
  CHECK(count_lines(p("student.sfvc.loss.csv")) == 3);

  REQUIRE(run("distill --config " + p("small.cfg") + " --teacher " + p("teacher.sfvc") + " --data " +
              p("train.sfvd") + " --out " + p("spatial.sfvc") + " --heads spatial --steps 1") == 0);
  const json s = load_json(p("spatial.sfvc.manifest.json"));
  CHECK(s["model_meta"]["distill.heads"] == "spatial");
  CHECK(s["model_meta"]["step"] == "1");
}

TEST_CASE("sample forward counts and determinism") {
  fixture();
  REQUIRE(run("sample --model " + p("student.sfvc") + " --cond " + p("held.sfvd") + " --out " + p("s1.sfvd") +
              " --steps 1 --seed 5 --png " + p("s1.png")) == 0);
  CHECK(load_json(p("s1.sfvd.manifest.json"))["forwards_per_clip"] == 1);
  CHECK(slurp(p("s1.png")).substr(1, 3) == "PNG");
  REQUIRE(run("sample --model " + p("student.sfvc") + " --cond " + p("held.sfvd") + " --out " + p("s2.sfvd") +
              " --steps 1 --seed 5") == 0);
  CHECK(slurp(p("s1.sfvd")) == slurp(p("s2.sfvd")));
  REQUIRE(run("sample --model " + p("student.sfvc") + " --cond " + p("held.sfvd") + " --out " + p("s3.sfvd") +
              " --steps 1 --seed 6") == 0);
  CHECK(slurp(p("s1.sfvd")) != slurp(p("s3.sfvd")));

  REQUIRE(run("sample --model " + p("teacher.sfvc") + " --cond " + p("held.sfvd") + " --out " + p("t.sfvd") +
              " --steps 25 --cfg 1.5 --count 2") == 0);
  const json t = load_json(p("t.sfvd.manifest.json"));
  CHECK(t["forwards_per_clip"] == 50);
  CHECK(slurp(p("stdout.txt")).find("forwards_per_clip=50") != std::string::npos);
}

TEST_CASE("eval and bench reports") {
  fixture();
  REQUIRE(run("eval --generated " + p("held.sfvd") + " --real " + p("held.sfvd") + " --out " + p("self.json")) == 0);
  const json r = load_json(p("self.json"));
  for (const char* k : {"toy_fvd", "temporal_variance_ratio", "cond_similarity", "forwards_per_clip", "wall_ms_median",
                        "wall_ms_iqr"}) {
    CHECK_MESSAGE(r.contains(k), k);
  }
  CHECK(r["toy_fvd"].get<double>() <= 1e-6);
  CHECK(r["temporal_variance_ratio"].get<double>() == doctest::Approx(1.0));

  REQUIRE(run("bench --teacher " + p("teacher.sfvc") + " --student " + p("student.sfvc") + " --cond " +
              p("held.sfvd") + " --clips 2 --reps 3 --out " + p("bench.json")) == 0);
  const json b = load_json(p("bench.json"));
  REQUIRE(b["rows"].size() == 5);
  const int expected[5] = {50, 32, 16, 8, 1};
  for (int i = 0; i < 5; ++i) CHECK(b["rows"][i]["forwards_per_clip"] == expected[i]);
  CHECK(b["rows"][4]["speedup_upper_bound"] == 50.0);
  CHECK(load_json(p("bench.json.manifest.json"))["repetitions"] == 3);
}

TEST_CASE("deterministic mode is recorded in the manifest") {
  fixture();
  REQUIRE(run("gen-data --count 2 --frames 4 --size 8 --out " + p("d1.sfvd") + " --config " + p("small.cfg"), "SFV_DETERMINISTIC=1") == 0);
  CHECK(load_json(p("d1.sfvd.manifest.json"))["deterministic"] == true);
  REQUIRE(run("gen-data --count 2 --frames 4 --size 8 --out " + p("d0.sfvd") + " --config " + p("small.cfg"), "SFV_DETERMINISTIC=0") == 0);
  CHECK(load_json(p("d0.sfvd.manifest.json"))["deterministic"] == false);
  CHECK(slurp(p("d0.sfvd")) == slurp(p("d1.sfvd")));
}

TEST_CASE("a run reproduces from its manifest argv") {
  fixture();
  const json m = load_json(p("student.sfvc.manifest.json"));
  REQUIRE(m["argv"].is_array());
  std::string args;
  for (std::size_t i = 1; i < m["argv"].size(); ++i) {
    std::string a = m["argv"][i];
    if (a == p("student.sfvc")) a = p("student_again.sfvc");
    args += "'" + a + "' ";
  }
  REQUIRE(run(args) == 0);
  CHECK(slurp(p("student.sfvc")) == slurp(p("student_again.sfvc")));
}
