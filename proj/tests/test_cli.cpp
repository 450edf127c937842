#include <sys/wait.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "dedgan/cli.hpp"
#include "dedgan/errors.hpp"
#include "dedgan/shapemodel.hpp"

using namespace dedgan;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dedgan_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "dedgan");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

const char* kTinyIni =
    "[data]\n"
    "identities = 4\n"
    "train_per_identity = 6\n"
    "heldout_per_identity = 3\n"
    "source_size = 18\n"
    "seed = 5\n"
    "[model]\n"
    "image_size = 16\n"
    "feature_dim = 8\n"
    "noise_dim = 4\n"
    "code_dim = 8\n"
    "[train]\n"
    "batch_size = 4\n"
    "steps = 3\n"
    "seed = 9\n"
    "[eval]\n"
    "folds = 2\n"
    "pairs_per_class = 3\n"
    "fid_dims = 8\n";

/// `extra` lands in [eval] (the last section), `data_extra` in [data].
fs::path tiny_config(const fs::path& dir, const std::string& extra = "", const std::string& data_extra = "") {
  const fs::path p = dir / "tiny.ini";
  std::string text = kTinyIni;
  text.insert(text.find("[model]"), data_extra);
  std::ofstream(p) << text << extra;
  return p;
}

std::vector<nlohmann::json> log_without_wall_time(const fs::path& p) {
  std::vector<nlohmann::json> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    j.erase("wall_time");
    out.push_back(j);
  }
  return out;
}

/// Trains the tiny model once and reuses it across cases.
const fs::path& tiny_checkpoint() {
  static const fs::path ckpt = [] {
    const fs::path dir = scratch("model");
    const fs::path ini = tiny_config(dir);
    const Run r = cli({"train", "--config", ini.string(), "--out", (dir / "run").string()});
    REQUIRE(r.code == 0);
    return dir / "run" / "final.ckpt";
  }();
  return ckpt;
}

}  // namespace

TEST_CASE("configuration errors exit with code 2") {
  const fs::path dir = scratch("config");
  CHECK(cli({"train", "--config", (dir / "missing.ini").string(), "--out", (dir / "o").string()}).code == 2);
  CHECK(cli({}).code == 2);
  CHECK(cli({"bogus"}).code == 2);
  CHECK(cli({"eval", "nonsense"}).code == 2);

  std::ofstream(dir / "unknown_key.ini") << "[train]\nstepz = 3\n";
  Run r = cli({"train", "--config", (dir / "unknown_key.ini").string(), "--out", (dir / "o").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("stepz") != std::string::npos);

  std::ofstream(dir / "unknown_section.ini") << "[optim]\nlr = 1\n";
  CHECK(cli({"train", "--config", (dir / "unknown_section.ini").string(), "--out", (dir / "o").string()}).code == 2);

  std::ofstream(dir / "bad_value.ini") << "[train]\nsteps = many\n";
  CHECK(cli({"train", "--config", (dir / "bad_value.ini").string(), "--out", (dir / "o").string()}).code == 2);

  std::ofstream(dir / "bad_weight.ini") << "[train]\nlambda_pose = -1\n";
  CHECK(cli({"train", "--config", (dir / "bad_weight.ini").string(), "--out", (dir / "o").string()}).code == 2);
  fs::remove_all(dir);
}

TEST_CASE("resolved configuration round trips") {
  const fs::path dir = scratch("resolve");
  const RunConfig c = RunConfig::load(tiny_config(dir, "variants = full, minus-Dr\n"));
  CHECK(c.train.arch.image_size == 16);
  CHECK(c.synthetic.image_size == 16);
  CHECK(c.variants == std::vector<std::string>{"full", "minus-Dr"});
  std::ofstream(dir / "resolved.ini") << c.to_ini();
  CHECK(RunConfig::load(dir / "resolved.ini").to_ini() == c.to_ini());

  const RunConfig paper = RunConfig::defaults("paper");
  CHECK(paper.train.arch.image_size == 96);
  CHECK(paper.synthetic.source_size == 100);
  CHECK(paper.train.arch.feature_dim == 320);
  CHECK(paper.train.arch.noise_dim == 50);
  CHECK_THROWS_AS(RunConfig::defaults("huge"), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("train with zero steps writes the initial checkpoint") {
  const fs::path dir = scratch("zero");
  const Run r = cli({"train", "--config", tiny_config(dir).string(), "--steps", "0", "--out", (dir / "run").string()});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "run" / "checkpoints" / "step_000000.ckpt"));
  CHECK(fs::exists(dir / "run" / "final.ckpt"));
  CHECK(fs::exists(dir / "run" / "resolved_config.ini"));
  CHECK(!fs::exists(dir / "run" / ".lock"));
  CHECK(log_without_wall_time(dir / "run" / "train_log.jsonl").empty());
  TrainingState s = load_checkpoint(dir / "run" / "final.ckpt");
  CHECK(s.step == 0);
  CHECK(s.config.arch.identities == 4);
  fs::remove_all(dir);
}

TEST_CASE("identical config and seed give identical logs") {
  const fs::path dir = scratch("repeat");
  const fs::path ini = tiny_config(dir);
  REQUIRE(cli({"train", "--config", ini.string(), "--out", (dir / "a").string()}).code == 0);
  REQUIRE(cli({"train", "--config", ini.string(), "--out", (dir / "b").string()}).code == 0);
  REQUIRE(cli({"train", "--config", ini.string(), "--seed", "10", "--out", (dir / "c").string()}).code == 0);
  const auto a = log_without_wall_time(dir / "a" / "train_log.jsonl");
  CHECK(a.size() == 3);
  CHECK(a == log_without_wall_time(dir / "b" / "train_log.jsonl"));
  CHECK(a != log_without_wall_time(dir / "c" / "train_log.jsonl"));
  CHECK(slurp(dir / "a" / "final.ckpt") == slurp(dir / "b" / "final.ckpt"));
  fs::remove_all(dir);
}

TEST_CASE("train resumes from a checkpoint") {
  const fs::path dir = scratch("resume");
  const fs::path ini = tiny_config(dir);
  std::string text = slurp(ini);
  text.insert(text.find("[eval]"), "checkpoint_interval = 2\n");
  std::ofstream(ini) << text;
  REQUIRE(cli({"train", "--config", ini.string(), "--steps", "4", "--out", (dir / "full").string()}).code == 0);
  REQUIRE(cli({"train", "--config", ini.string(), "--steps", "4", "--checkpoint",
               (dir / "full" / "checkpoints" / "step_000002.ckpt").string(), "--out", (dir / "resumed").string()})
              .code == 0);
  CHECK(slurp(dir / "full" / "final.ckpt") == slurp(dir / "resumed" / "final.ckpt"));
  fs::remove_all(dir);
}

TEST_CASE("a locked output directory is refused") {
  const fs::path dir = scratch("lock");
  fs::create_directories(dir / "run");
  std::ofstream(dir / "run" / ".lock") << "";
  const Run r = cli({"gen-data", "--config", tiny_config(dir).string(), "--out", (dir / "run").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("in use") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("synth writes single images and deterministic grids") {
  const fs::path dir = scratch("synth");
  const fs::path ini = tiny_config(dir);
  const std::string ckpt = tiny_checkpoint().string();
  Run r = cli({"synth", "--config", ini.string(), "--checkpoint", ckpt, "--codes", "1", "--out", (dir / "one").string()});
  REQUIRE(r.code == 0);
  Image8 one = read_ppm(dir / "one" / "sweep.ppm");
  CHECK(one.width == 16);
  CHECK(one.height == 16);

  for (const char* name : {"nine_a", "nine_b"})
    REQUIRE(cli({"synth", "--config", ini.string(), "--checkpoint", ckpt, "--codes", "9", "--out", (dir / name).string()})
                .code == 0);
  Image8 nine = read_ppm(dir / "nine_a" / "sweep.ppm");
  CHECK(nine.width == 9 * 16);
  CHECK(nine.height == 16);
  CHECK(slurp(dir / "nine_a" / "sweep.ppm") == slurp(dir / "nine_b" / "sweep.ppm"));

  write_ppm(one, dir / "input.ppm");
  r = cli({"synth", "--config", ini.string(), "--checkpoint", ckpt, "--input", (dir / "input.ppm").string(), "--codes",
           "3", "--out", (dir / "from_file").string()});
  CHECK(r.code == 0);
  CHECK(read_ppm(dir / "from_file" / "sweep.ppm").width == 3 * 16);

  CHECK(cli({"synth", "--config", ini.string(), "--codes", "3", "--out", (dir / "x").string()}).code == 2);
  fs::remove_all(dir);
}

TEST_CASE("eval fid of a set against itself is zero") {
  const fs::path dir = scratch("fid");
  const fs::path ini = tiny_config(dir);
  Run r = cli({"eval", "fid", "--against", "real", "--config", ini.string(), "--checkpoint",
               tiny_checkpoint().string(), "--out", (dir / "self").string()});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(slurp(dir / "self" / "fid.json"));
  CHECK(std::abs(j.at("fid").get<double>()) < 1e-6);

  r = cli({"eval", "fid", "--config", ini.string(), "--checkpoint", tiny_checkpoint().string(), "--out",
           (dir / "gen").string()});
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(slurp(dir / "gen" / "fid.json")).at("fid").get<double>() > 0);
  CHECK(fs::exists(dir / "gen" / "fid.csv"));
  fs::remove_all(dir);
}

TEST_CASE("eval verify on a separable embedding fixture") {
  const fs::path dir = scratch("verify");
  {
    std::ofstream csv(dir / "embeddings.csv");
    for (int id = 0; id < 10; ++id)
      for (int n = 0; n < 6; ++n) {
        csv << id;
        for (int d = 0; d < 10; ++d) csv << ',' << (d == id ? 1.0 : 0.0) + 0.01 * n * (d == (id + 1) % 10);
        csv << '\n';
      }
  }
  const fs::path ini = tiny_config(dir);
  const Run r = cli({"eval", "verify", "--config", ini.string(), "--embeddings", (dir / "embeddings.csv").string(),
                     "--out", (dir / "o").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out == "verification 100 +- 0\n");
  CHECK(fs::exists(dir / "o" / "verify.csv"));
  fs::remove_all(dir);
}

TEST_CASE("eval rank1 and verify run on a trained checkpoint") {
  const fs::path dir = scratch("rank1");
  const fs::path ini = tiny_config(dir);
  Run r = cli({"eval", "rank1", "--config", ini.string(), "--checkpoint", tiny_checkpoint().string(), "--out",
               (dir / "r").string()});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(slurp(dir / "r" / "rank1.json"));
  CHECK(j.at("average").get<double>() >= 0.0);
  CHECK(j.at("average").get<double>() <= 1.0);
  r = cli({"eval", "verify", "--config", ini.string(), "--checkpoint", tiny_checkpoint().string(), "--out",
           (dir / "v").string()});
  CHECK(r.code == 0);
  fs::remove_all(dir);
}

TEST_CASE("gen-data output reloads and a gallery gap is a protocol error") {
  const fs::path dir = scratch("gen");
  const fs::path ini = tiny_config(dir);
  REQUIRE(cli({"gen-data", "--config", ini.string(), "--out", (dir / "g").string()}).code == 0);
  const fs::path manifest = dir / "g" / "dataset" / "manifest.csv";
  Dataset d = load_directory(manifest);
  d.validate();
  CHECK(d.identities == 4);
  CHECK(d.samples.size() == 4 * 9);
  CHECK(d.split("gallery").size() == 4);

  // Drop identity 0's gallery entry and evaluate against the directory.
  auto splits = read_splits(dir / "g" / "dataset" / "splits.ini");
  auto& gallery = splits["gallery"];
  for (auto it = gallery.begin(); it != gallery.end(); ++it)
    if (d.samples[*it].identity == 0) {
      gallery.erase(it);
      break;
    }
  write_splits(splits, dir / "g" / "dataset" / "splits.ini");
  const fs::path dir_ini = tiny_config(dir, "", "source = directory\nmanifest = " + manifest.string() + "\n");
  const Run r = cli({"eval", "rank1", "--config", dir_ini.string(), "--checkpoint", tiny_checkpoint().string(),
                     "--out", (dir / "r").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("gallery") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("fit-shapemodel is deterministic and rejects empty manifests") {
  const fs::path dir = scratch("fit");
  const fs::path ini = tiny_config(dir);
  REQUIRE(cli({"gen-data", "--config", ini.string(), "--out", (dir / "g").string()}).code == 0);
  const std::string manifest = (dir / "g" / "dataset" / "manifest.csv").string();
  REQUIRE(cli({"fit-shapemodel", manifest, "--out", (dir / "a").string()}).code == 0);
  REQUIRE(cli({"fit-shapemodel", manifest, "--out", (dir / "b").string()}).code == 0);
  CHECK(slurp(dir / "a" / "shape_model.bin") == slurp(dir / "b" / "shape_model.bin"));
  CHECK(load_shape_model(dir / "a" / "shape_model.bin").components() >= 1);

  std::ofstream(dir / "empty.csv") << "";
  CHECK(cli({"fit-shapemodel", (dir / "empty.csv").string(), "--out", (dir / "c").string()}).code == 2);
  fs::remove_all(dir);
}

TEST_CASE("ablation runs every configured variant") {
  const fs::path dir = scratch("ablate");
  const fs::path ini = tiny_config(dir, "variants = full,minus-Dc\n");
  const Run r = cli({"eval", "ablate", "--config", ini.string(), "--steps", "2", "--out", (dir / "o").string()});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(slurp(dir / "o" / "ablation.json"));
  CHECK(j.at("variants").size() == 2);
  fs::remove_all(dir);
}

TEST_CASE("the installed binary reports usage errors with code 2") {
  const std::string cmd = std::string("\"") + DEDGAN_CLI_PATH + "\" > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 2);
  const std::string help = std::string("\"") + DEDGAN_CLI_PATH + "\" --help > /dev/null 2>&1";
  CHECK(WEXITSTATUS(std::system(help.c_str())) == 0);
}
