#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dcvae/cli/commands.hpp"
#include "dcvae/cli/run_config.hpp"
#include "dcvae/datagen/csv_io.hpp"
#include "dcvae/train/trainer.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace dcvae;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "dcvae");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t data_rows(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  return n - 1;
}

std::map<std::string, std::string> read_kv(const fs::path& p) {
  std::map<std::string, std::string> kv;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

// Small dataset plus a 1-epoch checkpoint shared by several cases.
struct Fixture {
  testing::TempDir dir{"clifix"};
  Fixture() {
    REQUIRE(run({"gen-data", "--n-train", "1100", "--n-test", "150", "--seed", "3", "--out-dir",
                 (dir / "data").string()})
                .code == 0);
    REQUIRE(run({"train", "--train-csv", (dir / "data/train.csv").string(), "--epochs", "1", "--seed", "3",
                 "--out-dir", (dir / "run").string()})
                .code == 0);
  }
  std::string ck() const { return (dir / "run/checkpoint.bin").string(); }
  std::string train_csv() const { return (dir / "data/train.csv").string(); }
  std::string test_csv() const { return (dir / "data/test.csv").string(); }
};

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("gen-data defaults to 5847 train and 1461 test rows") {
    testing::TempDir dir("gendef");
    const auto r = run({"gen-data", "--out-dir", dir.path().string()});
    REQUIRE(r.code == 0);
    CHECK(data_rows(dir / "train.csv") == 5847);
    CHECK(data_rows(dir / "test.csv") == 1461);
    CHECK(fs::exists(dir / "gen-data.config"));
    CHECK(fs::exists(datagen::sidecar_path(dir / "train.csv")));
  }

  TEST_CASE("gen-data honours --n-train and --spurious") {
    testing::TempDir dir("genspur");
    const auto r = run({"gen-data", "--n-train", "2000", "--n-test", "100", "--spurious", "--out-dir",
                        dir.path().string()});
    REQUIRE(r.code == 0);
    const auto train = datagen::read_csv(dir / "train.csv");
    CHECK(train.size() == 2000);
    CHECK(train.header.n_obs == 18);
    std::size_t agree = 0;
    for (const auto& rec : train.records) agree += (*rec.spurious == 2 * rec.task_label - 1);
    // Binomial(2000, 0.8): sd ≈ 0.009.
    CHECK(static_cast<double>(agree) / 2000.0 == doctest::Approx(0.8).epsilon(0.04));
    const auto again = run({"gen-data", "--n-train", "100", "--out-dir", (dir / "b").string()});
    CHECK(data_rows(dir / "b/train.csv") == 100);
  }

  TEST_CASE("train writes a checkpoint, loss log and resolved config") {
    Fixture f;
    CHECK(fs::exists(f.dir / "run/loss_log.csv"));
    CHECK(data_rows(f.dir / "run/loss_log.csv") == 1);
    const auto kv = read_kv(f.dir / "run/train.config");
    CHECK(kv.at("epochs") == "1");
    CHECK(kv.at("seed") == "3");
  }

  TEST_CASE("training is reproducible, also from the written config") {
    Fixture f;
    const auto again = run({"train", "--train-csv", f.train_csv(), "--epochs", "1", "--seed", "3", "--out-dir",
                            (f.dir / "again").string()});
    REQUIRE(again.code == 0);
    CHECK(slurp(f.dir / "run/checkpoint.bin") == slurp(f.dir / "again/checkpoint.bin"));
    const auto replay = run({"train", "--config", (f.dir / "run/train.config").string(), "--out-dir",
                             (f.dir / "replay").string()});
    REQUIRE(replay.code == 0);
    CHECK(slurp(f.dir / "run/checkpoint.bin") == slurp(f.dir / "replay/checkpoint.bin"));
  }

  TEST_CASE("ablation flags give a plain VAE checkpoint") {
    Fixture f;
    const auto r = run({"train", "--train-csv", f.train_csv(), "--epochs", "0", "--no-flow", "--no-cond-prior",
                        "--out-dir", (f.dir / "vae").string()});
    REQUIRE(r.code == 0);
    const auto ck = train::load_checkpoint(f.dir / "vae/checkpoint.bin");
    CHECK_FALSE(ck.model.config().flow_enabled);
    CHECK_FALSE(ck.model.config().conditional_prior_enabled);
    const auto kv = read_kv(f.dir / "vae/train.config");
    CHECK(kv.at("flow") == "false");
    CHECK(kv.at("cond_prior") == "false");
  }

  TEST_CASE("usage errors exit with code 2") {
    testing::TempDir dir("usage");
    auto r = run({"train", "--train-csv", (dir / "missing.csv").string(), "--out-dir", dir.path().string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("missing.csv") != std::string::npos);
    r = run({"train", "--set", "bogus_key=1"});
    CHECK(r.code == 2);
    CHECK(r.err.find("bogus_key") != std::string::npos);
    CHECK(run({"train", "--epochs", "many"}).code == 2);
    CHECK(run({"no-such-command"}).code == 2);
    CHECK(run({}).code == 2);
    {
      std::ofstream cfg(dir / "bad.config");
      cfg << "# comment\nseed=1\nnot_a_key=2\n";
    }
    r = run({"train", "--config", (dir / "bad.config").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find(":3") != std::string::npos);
    CHECK(run({"--help"}).code == 0);
  }

  TEST_CASE("eval report has every key and a consistent efficiency") {
    Fixture f;
    const auto r = run({"eval", "--checkpoint", f.ck(), "--train-csv", f.train_csv(), "--test-csv", f.test_csv(),
                        "--set", "probe_epochs=2", "--out-dir", (f.dir / "eval").string()});
    REQUIRE(r.code == 0);
    auto kv = read_kv(f.dir / "eval/report.txt");
    for (const char* key : {"acc_100", "acc_all", "sample_efficiency", "test_avg", "test_worst", "tau_edges",
                            "missing_edges", "extra_edges", "hamming", "spearman_dim1", "mi_dim4_factor4"}) {
      CHECK_MESSAGE(kv.count(key) == 1, key);
    }
    CHECK(kv["test_avg"] == "n/a");
    CHECK(std::stod(kv["sample_efficiency"]) ==
          doctest::Approx(100.0 * std::stod(kv["acc_100"]) / std::stod(kv["acc_all"])));
    // Edges listed are those of the checkpoint's adjacency above 0.25.
    const auto ck = train::load_checkpoint(f.ck());
    std::string expected;
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        if (ck.model.adjacency.mask(i, j) && std::abs(ck.model.adjacency.effective(i, j)) > 0.25) {
          expected += (expected.empty() ? "" : ";") + std::to_string(j + 1) + "->" + std::to_string(i + 1);
        }
      }
    }
    CHECK(kv["tau_edges"] == expected);
    CHECK(fs::exists(f.dir / "eval/eval.config"));
  }

  TEST_CASE("intervene exports traversal and do grids") {
    Fixture f;
    const auto base = std::vector<std::string>{"intervene", "--checkpoint", f.ck(), "--data-csv", f.test_csv()};
    auto with = [&](std::vector<std::string> extra, const std::string& out) {
      auto args = base;
      args.insert(args.end(), extra.begin(), extra.end());
      args.push_back("--out-dir");
      args.push_back((f.dir / out).string());
      return run(args);
    };
    auto r = with({"--inputs", "0,1", "--dims", "1,3", "--values", "-1,0,1"}, "trav");
    REQUIRE(r.code == 0);
    CHECK(data_rows(f.dir / "trav/grid.csv") == 12);

    r = with({"--inputs", "0", "--dims", "2"}, "sweep");
    REQUIRE(r.code == 0);
    CHECK(data_rows(f.dir / "sweep/grid.csv") == 10);

    r = with({"--inputs", "0,4", "--do", "1=0.5", "--do", "2=-0.25"}, "two");
    REQUIRE(r.code == 0);
    CHECK(data_rows(f.dir / "two/grid.csv") == 2);
    CHECK(read_kv(f.dir / "two/intervene.config").at("do") == "1=0.5;2=-0.25");
    std::ifstream in(f.dir / "two/grid.csv");
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    // input_id,dim,value,ztilde_0,ztilde_1,...
    CHECK(row.rfind("0,1,0.5,0.5,-0.25,", 0) == 0);

    CHECK(with({"--do", "1=0.5", "--do", "1=0.7"}, "dup").code == 2);
    CHECK(with({"--dims", "5"}, "baddim").code == 2);
    CHECK(with({"--inputs", "100000"}, "badrow").code == 2);
  }

  TEST_CASE("gradcheck passes on a fresh init and fails on a corrupted gradient") {
    const auto ok = run({"gradcheck", "--seed", "2"});
    CHECK(ok.code == 0);
    CHECK(ok.out.find("PASS") != std::string::npos);
    const auto again = run({"gradcheck", "--seed", "2"});
    CHECK(again.out == ok.out);
    const auto bad = run({"gradcheck", "--seed", "2", "--corrupt-gradient"});
    CHECK(bad.code == 1);
    CHECK(bad.out.find("FAIL") != std::string::npos);
  }

  TEST_CASE("run config parsing") {
    cli::RunConfig c;
    c.apply("seed = 12");
    CHECK(c.get_u64("seed") == 12);
    CHECK_THROWS_AS(c.apply("nonsense"), cli::UsageError);
    CHECK_THROWS_AS(c.set("nope", "1"), cli::UsageError);
    c.set("flow", "maybe");
    CHECK_THROWS_AS(c.get_bool("flow"), cli::UsageError);
    c.set("flow", "false");
    c.set("mask", "full");
    const auto tc = c.train_config();
    CHECK_FALSE(tc.flow_enabled);
    CHECK(tc.mask_kind == model::MaskKind::kFullLower);
    c.set("m", "9");
    CHECK_THROWS_AS(c.train_config(), cli::UsageError);

    const auto iv = cli::parse_do("3=-1.5");
    CHECK(iv.dim == 2);
    CHECK(iv.value == -1.5);
    CHECK_THROWS_AS(cli::parse_do("0=1"), cli::UsageError);
    CHECK(cli::parse_double_list("1, 2.5,-3", "v") == std::vector<double>{1, 2.5, -3});

    testing::TempDir dir("edges");
    {
      std::ofstream e(dir / "edges.txt");
      e << "# parent,child\n1,3\n2,3\n";
    }
    CHECK(cli::read_edge_file(dir / "edges.txt") == std::vector<model::Edge>{{0, 2}, {1, 2}});
  }

  TEST_CASE("a mask file drives the adjacency support") {
    Fixture f;
    {
      std::ofstream e(f.dir / "edges.txt");
      e << "1,4\n";
    }
    const auto r = run({"train", "--train-csv", f.train_csv(), "--epochs", "0", "--mask", "file", "--mask-file",
                        (f.dir / "edges.txt").string(), "--out-dir", (f.dir / "custom").string()});
    REQUIRE(r.code == 0);
    const auto ck = train::load_checkpoint(f.dir / "custom/checkpoint.bin");
    CHECK(ck.model.adjacency.edge_count() == 1);
    CHECK(ck.model.adjacency.mask(3, 0));
  }
}
