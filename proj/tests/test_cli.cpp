#include <sstream>

#include "doctest.h"
#include "support.hpp"
#include "vit3d/binary_io.hpp"
#include "vit3d/cli.hpp"

using namespace vit3d;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "vit3d");
  std::ostringstream out, err;
  const int code = cli_main(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("thousands grouping") {
    CHECK(group_thousands(88301570) == "88,301,570");
    CHECK(group_thousands(999) == "999");
    CHECK(group_thousands(1000) == "1,000");
    CHECK(group_thousands(0) == "0");
  }

  TEST_CASE("params prints grouped counts") {
    CHECK(run({"params", "--preset", "vit_b16"}).out == "88,301,570\n");
    const auto nit = run({"params"});
    CHECK(nit.code == 0);
    CHECK(nit.out == "5,127,426\n");
    CHECK(run({"params", "--n_layers", "3"}).out == "2,758,146\n");
    CHECK(run({"params", "--n_heads", "12"}).code == kExitConfig);
  }

  TEST_CASE("usage errors") {
    CHECK(run({"frobnicate"}).code == kExitUsage);
    CHECK(run({}).code == kExitUsage);
    CHECK(run({"params", "--n_layers", "many"}).code == kExitUsage);
    CHECK(run({"params", "--help"}).code == 0);
  }

  TEST_CASE("synth, train twice, eval and config precedence") {
    testing::TempDir dir;
    const auto d = dir.path().string();
    REQUIRE(run({"synth", "--out", d + "/data", "--n_per_class", "10", "--dim", "16", "--seed", "1"}).code == 0);
    CHECK(fs::exists(dir.path() / "data" / "manifest.csv"));
    CHECK(fs::exists(dir.path() / "data" / "config.toml"));

    const std::vector<std::string> train_args{"train", "--manifest", d + "/data/manifest.csv", "--preset", "tiny",
                                              "--input_dim", "16", "--hidden_dim", "32", "--epochs", "2"};
    auto a = train_args;
    a.insert(a.end(), {"--out", d + "/t1"});
    auto b = train_args;
    b.insert(b.end(), {"--out", d + "/t2"});
    REQUIRE(run(a).code == 0);
    REQUIRE(run(b).code == 0);
    CHECK(io::read_text(dir.path() / "t1" / "history.csv") == io::read_text(dir.path() / "t2" / "history.csv"));
    CHECK(testing::read_bytes(dir.path() / "t1" / "checkpoint.vtck") ==
          testing::read_bytes(dir.path() / "t2" / "checkpoint.vtck"));

    const auto ev = run({"eval", "--checkpoint", d + "/t1/checkpoint.vtck", "--manifest", d + "/data/manifest.csv",
                         "--out", d + "/ev"});
    CHECK(ev.code == 0);
    CHECK(fs::exists(dir.path() / "ev" / "metrics.json"));
    CHECK(fs::exists(dir.path() / "ev" / "scores.csv"));

    // A 32^3 dataset against a 16^3 checkpoint names both sizes.
    REQUIRE(run({"synth", "--out", d + "/big", "--n_per_class", "3", "--dim", "32"}).code == 0);
    const auto bad = run({"eval", "--checkpoint", d + "/t1/checkpoint.vtck", "--manifest", d + "/big/manifest.csv",
                          "--out", d + "/ev2"});
    CHECK(bad.code == kExitConfig);
    CHECK(bad.err.find("32") != std::string::npos);
    CHECK(bad.err.find("16") != std::string::npos);

    // Config file values apply; explicit flags win over them.
    io::write_file_atomic(dir.path() / "c.toml", "epochs = 1\nlr = \"0.002\"\n");
    auto c = train_args;
    c.insert(c.end(), {"--config", d + "/c.toml", "--out", d + "/t3"});
    REQUIRE(run(c).code == 0);
    const auto resolved = io::read_text(dir.path() / "t3" / "config.toml");
    CHECK(resolved.find("epochs = \"2\"") != std::string::npos);
    CHECK(resolved.find("lr = \"0.002\"") != std::string::npos);

    io::write_file_atomic(dir.path() / "bad.toml", "learning_rate = 1\n");
    auto e = train_args;
    e.insert(e.end(), {"--config", d + "/bad.toml", "--out", d + "/t4"});
    CHECK(run(e).code == kExitConfig);

    // The resolved config reproduces the run.
    auto r = std::vector<std::string>{"train", "--config", d + "/t1/config.toml", "--out", d + "/t5"};
    REQUIRE(run(r).code == 0);
    CHECK(io::read_text(dir.path() / "t5" / "history.csv") == io::read_text(dir.path() / "t1" / "history.csv"));
  }
}
