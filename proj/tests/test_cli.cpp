#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <map>
#include <sstream>

#include "fixtures.hpp"
#include "spg/checkpoint.hpp"
#include "spg/errors.hpp"
#include "spg/runner.hpp"

using namespace spg;
using nlohmann::json;

namespace {

json tiny_config(const std::filesystem::path& out) {
  return {{"stream", {{"kind", "dissimilar"}, {"n_tasks", 3}, {"classes_per_task", 2}, {"dim", 6}, {"samples_per_class", 40}}},
          {"hidden", {6, 6}},
          {"methods", {"NCL", "SPG"}},
          {"train", {{"lr", 0.3}, {"epochs", 8}, {"batch_size", 16}, {"patience", 4}}},
          {"seeds", {0, 1, 2, 3, 4}},
          {"output_dir", out.string()}};
}

CliOptions write_config(const fixtures::TempDir& dir, const json& cfg) {
  fixtures::write_text(dir / "config.json", cfg.dump(2));
  CliOptions o;
  o.config = dir / "config.json";
  return o;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(fixtures::read_text(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

Checkpoint sample_checkpoint() {
  const TaskStream stream = gen_dissimilar_stream(3, 2, 5, 30, 3);
  TrainConfig c;
  c.lr = 0.3;
  c.epochs = 5;
  c.patience = 3;
  std::optional<Checkpoint> snap;
  RunOptions o;
  o.hidden = {6, 4};
  o.config_hash = 0xfeedbeefcafe1234ULL;
  o.on_task_end = [&](const Checkpoint& k) {
    if (k.tasks_done == 2) snap = k;
  };
  run_continual(stream, Method::parse("EWC_GI:1"), c, o);
  return *snap;
}

}  // namespace

TEST_CASE("config: defaults, overrides and strict keys") {
  const json j = tiny_config("out");
  const RunConfig c = RunConfig::from_json(j);
  CHECK(c.methods.size() == 2);
  CHECK(c.train.lr == 0.3);
  CHECK(c.seeds.size() == 5);
  CHECK(c.blocked_eps == kDefaultBlockedEps);
  CHECK(RunConfig::from_json(c.to_json()).to_json() == c.to_json());

  auto rejects = [](json bad) {
    CHECK_THROWS_AS(RunConfig::from_json(bad), ConfigError);
  };
  json bad = j;
  bad["lerning_rate"] = 1;
  rejects(bad);
  bad = j;
  bad["train"]["momentum"] = 0.9;
  rejects(bad);
  bad = j;
  bad["stream"]["drift"] = 0.1;  // only similar streams drift
  rejects(bad);
  bad = j;
  bad["methods"] = {"SPG_HARD:0.5"};
  rejects(bad);
  bad = j;
  bad["train"]["lr"] = -1;
  rejects(bad);
  bad = j;
  bad["stream"]["split"] = {0.5, 0.5, 0.5};
  rejects(bad);
  bad = j;
  bad["hidden"] = "wide";
  rejects(bad);
  bad = j;
  bad.erase("methods");
  rejects(bad);
}

TEST_CASE("run hash ignores output location and seed list") {
  const RunConfig a = RunConfig::from_json(tiny_config("a"));
  json jb = tiny_config("b");
  jb["seeds"] = {7};
  const RunConfig b = RunConfig::from_json(jb);
  const Method m = Method::parse("SPG");
  CHECK(a.run_hash(m, 1) == b.run_hash(m, 1));
  CHECK(a.run_hash(m, 1) != a.run_hash(m, 2));
  CHECK(a.run_hash(m, 1) != a.run_hash(Method::parse("NCL"), 1));
  json jc = tiny_config("a");
  jc["train"]["lr"] = 0.31;
  CHECK(RunConfig::from_json(jc).run_hash(m, 1) != a.run_hash(m, 1));
}

TEST_CASE("checkpoint round-trips bitwise") {
  fixtures::TempDir dir("ckpt");
  const Checkpoint c = sample_checkpoint();
  save_checkpoint(dir / "a.ckpt", c);
  const Checkpoint d = load_checkpoint(dir / "a.ckpt", c.config_hash);
  CHECK(d.tasks_done == 2);
  CHECK(d.config_hash == c.config_hash);
  REQUIRE(d.model.extractor.layers.size() == c.model.extractor.layers.size());
  for (std::size_t l = 0; l < c.model.extractor.layers.size(); ++l) CHECK(d.model.extractor.layers[l] == c.model.extractor.layers[l]);
  CHECK(d.model.heads == c.model.heads);
  CHECK(d.importance == c.importance);
  REQUIRE(d.ewc.has_value());
  CHECK(same_values(d.ewc->omega, c.ewc->omega));
  CHECK(d.ewc->anchor == c.ewc->anchor);
  CHECK(d.accuracy == c.accuracy);
  CHECK(d.blocked_history.size() == c.blocked_history.size());
  CHECK(d.chi_history.size() == c.chi_history.size());
  save_checkpoint(dir / "b.ckpt", d);
  CHECK(fixtures::read_text(dir / "a.ckpt") == fixtures::read_text(dir / "b.ckpt"));
}

TEST_CASE("checkpoint errors: truncation, corruption, hash mismatch") {
  fixtures::TempDir dir("ckpt_err");
  const Checkpoint c = sample_checkpoint();
  save_checkpoint(dir / "a.ckpt", c);
  const std::string bytes = fixtures::read_text(dir / "a.ckpt");

  auto kind_of = [](const std::filesystem::path& p, std::optional<std::uint64_t> h = {}) {
    try {
      load_checkpoint(p, h);
    } catch (const CheckpointError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };
  fixtures::write_text(dir / "trunc.ckpt", bytes.substr(0, bytes.size() - 5));
  CHECK(kind_of(dir / "trunc.ckpt") == static_cast<int>(CheckpointError::Kind::corrupt));
  fixtures::write_text(dir / "half.ckpt", bytes.substr(0, bytes.size() / 3));
  CHECK(kind_of(dir / "half.ckpt") == static_cast<int>(CheckpointError::Kind::corrupt));
  std::string flipped = bytes;
  flipped[flipped.size() - 3] ^= 0x40;
  fixtures::write_text(dir / "flip.ckpt", flipped);
  CHECK(kind_of(dir / "flip.ckpt") == static_cast<int>(CheckpointError::Kind::corrupt));
  fixtures::write_text(dir / "junk.ckpt", "not a checkpoint");
  CHECK(kind_of(dir / "junk.ckpt") == static_cast<int>(CheckpointError::Kind::corrupt));
  CHECK(kind_of(dir / "a.ckpt", c.config_hash + 1) == static_cast<int>(CheckpointError::Kind::hash_mismatch));
  CHECK(kind_of(dir / "nope.ckpt") == static_cast<int>(CheckpointError::Kind::io));
}

TEST_CASE("cmd_run: fan-out, determinism and aggregate recomputation") {
  fixtures::TempDir dir("run");
  const CliOptions o = write_config(dir, tiny_config(dir / "out"));
  std::ostringstream log;
  REQUIRE(cmd_run(o, log) == kExitOk);
  const auto runs = dir.path() / "out" / "runs";
  int n = 0;
  std::map<std::string, std::string> first;
  for (const auto& e : std::filesystem::directory_iterator(runs)) {
    ++n;
    first[e.path().filename().string()] = fixtures::read_text(e.path());
  }
  CHECK(n == 10);
  CHECK(first.contains("SPG_seed3.json"));

  CliOptions again = o;
  again.out = dir / "out2";
  again.threads = 3;
  REQUIRE(cmd_run(again, log) == kExitOk);
  for (const auto& [name, text] : first) CHECK(fixtures::read_text(dir / ("out2/runs/" + name)) == text);
  CHECK(fixtures::read_text(dir / "out/aggregate.csv") == fixtures::read_text(dir / "out2/aggregate.csv"));

  std::map<std::string, std::vector<double>> avg;
  for (const auto& [name, text] : first) {
    const json r = json::parse(text);
    avg[r["method"].get<std::string>()].push_back(r["avg_accuracy"].get<double>());
    CHECK(r["accuracy"].size() == 3);
    CHECK(r.contains("fwt"));
    CHECK(r["params"]["extractor"].get<int>() == (6 * 6 + 6) * 2);
  }
  for (const auto& row : read_csv(dir / "out/aggregate.csv")) {
    if (row[0] == "method" || row[1] != "avg_accuracy") continue;
    const auto& v = avg.at(row[0]);
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    CHECK(std::abs(std::stod(row[2]) - mean) <= 1e-12);
    CHECK(std::abs(std::stod(row[3]) - std::sqrt(ss / static_cast<double>(v.size() - 1))) <= 1e-12);
    CHECK(row[4] == "5");
  }
  CHECK(read_csv(dir / "out/blocked.csv").front() == std::vector<std::string>{"method", "seed", "task", "layer", "fraction"});
}

TEST_CASE("cmd_run with checkpoints resumes and refuses foreign checkpoints") {
  fixtures::TempDir dir("resume");
  json cfg = tiny_config(dir / "out");
  cfg["seeds"] = {0};
  cfg["checkpoints"] = true;
  const CliOptions o = write_config(dir, cfg);
  std::ostringstream log;
  REQUIRE(cmd_run(o, log) == kExitOk);
  const std::string record = fixtures::read_text(dir / "out/runs/SPG_seed0.json");
  REQUIRE(std::filesystem::exists(dir / "out/checkpoints/SPG_seed0.ckpt"));
  REQUIRE(cmd_run(o, log) == kExitOk);
  CHECK(fixtures::read_text(dir / "out/runs/SPG_seed0.json") == record);
  CHECK(log.str().find("resumed") != std::string::npos);

  cfg["train"]["lr"] = 0.2;
  const CliOptions changed = write_config(dir, cfg);
  std::ostringstream err;
  CHECK(cmd_run(changed, err) == kExitFailure);
  CHECK(err.str().find("refusing") != std::string::npos);
}

TEST_CASE("invalid configs exit with code 2") {
  fixtures::TempDir dir("badcfg");
  json cfg = tiny_config(dir / "out");
  cfg["unknown"] = true;
  std::ostringstream log;
  CHECK(cmd_run(write_config(dir, cfg), log) == kExitConfig);
  CHECK(log.str().find("unknown") != std::string::npos);
  fixtures::write_text(dir / "broken.json", "{ not json");
  CliOptions o;
  o.config = dir / "broken.json";
  CHECK(cmd_run(o, log) == kExitConfig);
  CHECK(cmd_probe(write_config(dir, tiny_config(dir / "out")), log) == kExitConfig);
}

TEST_CASE("cmd_prune emits the pruning table") {
  fixtures::TempDir dir("prune");
  json cfg = tiny_config(dir / "out");
  cfg["seeds"] = {0, 1};
  cfg["prune_percents"] = {10, 20, 30};
  std::ostringstream log;
  REQUIRE(cmd_prune(write_config(dir, cfg), log) == kExitOk);
  const auto rows = read_csv(dir / "out/prune.csv");
  CHECK(rows.front() == std::vector<std::string>{"seed", "strategy", "percent", "accuracy", "chance"});
  CHECK(rows.size() == 1 + 2 * (1 + 3 * 3));
  std::map<std::string, int> per_seed;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    ++per_seed[rows[i][0]];
    const double acc = std::stod(rows[i][3]);
    CHECK(format_double(acc) == rows[i][3]);
    CHECK(rows[i][4] == "0.5");
  }
  CHECK(per_seed["0"] == 10);
  CHECK(rows[1][1] == "nothing");
}

TEST_CASE("cmd_probe covers every task count once") {
  fixtures::TempDir dir("probe");
  json cfg = tiny_config(dir / "out");
  cfg["seeds"] = {0, 1};
  cfg["probe"] = {{"kind", "dissimilar"}, {"n_tasks", 1}, {"classes_per_task", 4}, {"dim", 6}, {"samples_per_class", 30}};
  std::ostringstream log;
  REQUIRE(cmd_probe(write_config(dir, cfg), log) == kExitOk);
  const auto rows = read_csv(dir / "out/probe.csv");
  CHECK(rows.front() == std::vector<std::string>{"method", "seed", "tasks_learned", "probe_accuracy"});
  std::map<std::string, std::vector<int>> seen;
  for (std::size_t i = 1; i < rows.size(); ++i) seen[rows[i][0] + "/" + rows[i][1]].push_back(std::stoi(rows[i][2]));
  CHECK(seen.size() == 4);
  for (const auto& [k, v] : seen) CHECK(v == std::vector<int>{1, 2, 3});

  cfg["probe"]["dim"] = 5;
  CHECK(cmd_probe(write_config(dir, cfg), log) == kExitConfig);
}

TEST_CASE("thread count resolution") {
  CHECK(resolve_threads(3) == 3);
  CHECK_THROWS_AS(resolve_threads(0), ConfigError);
  ::setenv("SPG_THREADS", "5", 1);
  CHECK(resolve_threads(std::nullopt) == 5);
  CHECK(resolve_threads(2) == 2);
  ::setenv("SPG_THREADS", "many", 1);
  CHECK_THROWS_AS(resolve_threads(std::nullopt), ConfigError);
  ::unsetenv("SPG_THREADS");
  CHECK(resolve_threads(std::nullopt) == 1);
}

TEST_CASE("doubles are printed in shortest round-trip form") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0) == "1");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
  CHECK(file_tag(Method::parse("SPG_HARD:0.6")) == "SPG_HARD-0.6");
}
