#include "fsd/checkpoint.hpp"
#include "fsd/cli.hpp"
#include "fsd/config.hpp"
#include "fsd/metrics.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace fsd;
using fsd::test::TempDir;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Toy corpus of 8 clips and a config for a narrow network.
struct Workspace {
  TempDir dir{"cli"};
  std::string corpus = (dir / "toy").string();
  std::string protocol = (dir / "toy" / "protocol.txt").string();
  std::string cache = (dir / "toy.cache").string();
  std::string config = (dir / "narrow.json").string();

  Workspace() {
    REQUIRE(run({"toygen", "--out", corpus, "--n-per-class", "4", "--seed", "3"}).code == 0);
    const Json cfg{{"network", {{"channel_plan", {4, 4, 8, 8}}, {"stem_channels", 2}}},
                   {"distill", {{"epochs", 1}, {"batch_size", 4}}}};
    write_json_file(config, cfg);
  }
};

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({"--help"}).code == kExitOk);
  CHECK(run({"score"}).code == kExitUsage);
  const Run bad_alpha = run({"train", "--alpha", "1.5", "--train-protocol", "x"});
  CHECK(bad_alpha.code == kExitUsage);
  CHECK(bad_alpha.err.find("alpha") != std::string::npos);
}

TEST_CASE("score command") {
  TempDir dir("cli");
  write_score_file(dir / "s.txt", {{"A", Label::kBonafide, 2.0},
                                   {"B", Label::kBonafide, 1.0},
                                   {"C", Label::kSpoof, -1.0},
                                   {"D", Label::kUnknown, 0.0}});
  const Run r = run({"score", "--scores", (dir / "s.txt").string()});
  CHECK(r.code == kExitOk);
  CHECK(r.out == "EER 0.00%\nmin t-DCF 0.0000\n");
  const Json report = read_json_file((dir / "s.txt").string() + ".metrics.json");
  CHECK(report["eer"] == 0.0);
  CHECK(report["n_unlabeled"] == 1);

  const Run missing = run({"score", "--scores", (dir / "absent.txt").string()});
  CHECK(missing.code == kExitData);
  {
    std::ofstream bad(dir / "bad.txt");
    bad << "A\tbonafide\t1\nB\tspoof\tx\n";
  }
  const Run malformed = run({"score", "--scores", (dir / "bad.txt").string()});
  CHECK(malformed.code == kExitData);
  CHECK(malformed.err.find("line 2") != std::string::npos);
}

TEST_CASE("extract, train, eval and score end to end") {
  Workspace ws;
  const Run first = run({"extract", "--protocol", ws.protocol, "--out", ws.cache});
  REQUIRE(first.code == kExitOk);
  CHECK(first.out.find("extracted 8, reused 0, total 8") != std::string::npos);
  const Run second = run({"extract", "--protocol", ws.protocol, "--out", ws.cache});
  CHECK(second.out.find("cache up to date: 8 entries") != std::string::npos);

  const std::string run_dir = (ws.dir / "run").string();
  const Run trained = run({"train", "--config", ws.config, "--train-protocol", ws.protocol,
                           "--feature-cache", ws.cache, "--out-dir", run_dir, "--seed", "2"});
  REQUIRE_MESSAGE(trained.code == kExitOk, trained.err);
  for (const char* name : {"resolved_config.json", "epoch_log.csv", "best.ckpt", "final.ckpt"}) {
    CHECK(std::filesystem::exists(std::filesystem::path(run_dir) / name));
  }
  const RunConfig resolved =
      run_config_from_json(read_json_file(run_dir + "/resolved_config.json"));
  CHECK(resolved.distill.seed == 2);
  CHECK(resolved.network.channel_plan == std::array<int, 4>{4, 4, 8, 8});
  const std::string log = read_text(run_dir + "/epoch_log.csv");
  CHECK(log.rfind("# epoch", 0) == 0);
  CHECK(log.find("\n1, ") != std::string::npos);
  CHECK(read_checkpoint_header(run_dir + "/final.ckpt")["metadata"]["epoch"] == 1);

  const std::string scores = (ws.dir / "scores.txt").string();
  const std::string scores_aux = (ws.dir / "scores_aux.txt").string();
  REQUIRE(run({"eval", "--checkpoint", run_dir + "/final.ckpt", "--protocol", ws.protocol,
               "--out", scores})
              .code == kExitOk);
  REQUIRE(run({"eval", "--checkpoint", run_dir + "/final.ckpt", "--protocol", ws.protocol,
               "--feature-cache", ws.cache, "--keep-aux", "--out", scores_aux})
              .code == kExitOk);
  CHECK(read_score_file(scores).size() == 8);
  CHECK(read_text(scores) == read_text(scores_aux));

  const Run mismatch = run({"eval", "--checkpoint", run_dir + "/final.ckpt", "--protocol",
                            ws.protocol, "--depth", "50", "--out", scores});
  CHECK(mismatch.code == kExitUsage);
  CHECK(mismatch.err.find("checkpoint/spec mismatch") != std::string::npos);

  const Run scored = run({"score", "--scores", scores});
  CHECK(scored.code == kExitOk);
  CHECK(scored.out.rfind("EER ", 0) == 0);
}

TEST_CASE("distillation can be switched off from the command line") {
  Workspace ws;
  const std::string run_dir = (ws.dir / "plain").string();
  const Run r = run({"train", "--config", ws.config, "--train-protocol", ws.protocol,
                     "--alpha", "1", "--beta", "0", "--out-dir", run_dir});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  std::istringstream log(read_text(run_dir + "/epoch_log.csv"));
  std::string header, line;
  std::getline(log, header);
  std::getline(log, line);
  double epoch, hard, soft, feature, total;
  char comma;
  std::istringstream fields(line);
  fields >> epoch >> comma >> hard >> comma >> soft >> comma >> feature >> comma >> total;
  CHECK(total == doctest::Approx(hard).epsilon(1e-6));
}

TEST_CASE("missing audio names the trial") {
  Workspace ws;
  std::string text = read_text(ws.protocol);
  text += "TOY_0099 TOY_T_9999999 - T01 spoof\n";
  const std::string protocol = (ws.dir / "broken.txt").string();
  {
    std::ofstream out(protocol);
    out << text;
  }
  const std::string run_dir = (ws.dir / "deep").string();
  const Run r = run({"train", "--train-protocol", protocol, "--audio-dir", ws.corpus, "--depth",
                     "50", "--attention", "se", "--out-dir", run_dir});
  CHECK(r.code == kExitData);
  CHECK(r.err.find("TOY_T_9999999") != std::string::npos);
  const RunConfig resolved =
      run_config_from_json(read_json_file(run_dir + "/resolved_config.json"));
  CHECK(resolved.network.block_kind == BlockKind::kBottleneck);
  CHECK(resolved.network.attention == AttentionKind::kSE);
}

TEST_CASE("unknown config fields are rejected") {
  TempDir dir("cli");
  write_json_file(dir / "c.json", Json{{"distill", {{"alpah", 0.1}}}});
  const Run r = run({"train", "--config", (dir / "c.json").string(), "--train-protocol", "x"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("distill.alpah") != std::string::npos);
}

}  // TEST_SUITE
