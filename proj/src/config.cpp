#include "spg/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "spg/errors.hpp"
#include "spg/rng.hpp"

namespace spg {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items())
    if (!allowed.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

template <class T>
T get_as(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

template <class T>
void read_opt(const json& j, const std::string& key, const std::string& where, T& out) {
  if (j.contains(key)) out = get_as<T>(j, key, where);
}

std::string kind_name(StreamKind k) {
  switch (k) {
    case StreamKind::dissimilar: return "dissimilar";
    case StreamKind::similar: return "similar";
    case StreamKind::split_idx: return "idx";
  }
  return "?";
}

StreamKind parse_kind(const std::string& s, const std::string& where) {
  for (auto k : {StreamKind::dissimilar, StreamKind::similar, StreamKind::split_idx})
    if (kind_name(k) == s) return k;
  throw ConfigError(where + ".kind: unknown stream kind '" + s + "'");
}

SplitFractions parse_split(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(where + ".split: expected [train, val, test]");
  SplitFractions s;
  try {
    s.train = j[0].get<double>();
    s.val = j[1].get<double>();
    s.test = j[2].get<double>();
  } catch (const json::exception&) {
    throw ConfigError(where + ".split: entries must be numbers");
  }
  if (!(s.train > 0 && s.val > 0 && s.test > 0) || std::abs(s.train + s.val + s.test - 1.0) > 1e-9)
    throw ConfigError(where + ".split: fractions must be positive and sum to 1");
  return s;
}

void check(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

TaskStream StreamSpec::build(std::uint64_t run_seed) const {
  const std::uint64_t s = seed.value_or(run_seed);
  switch (kind) {
    case StreamKind::dissimilar:
      return gen_dissimilar_stream(n_tasks, classes_per_task, dim, samples_per_class, s, cluster);
    case StreamKind::similar:
      return gen_similar_stream(n_tasks, classes_per_task, dim, samples_per_class, s, drift, cluster);
    case StreamKind::split_idx: {
      const IdxData data = load_idx(images, labels);
      return split_by_class(data.inputs, data.labels, n_tasks, s, cluster.split);
    }
  }
  throw InvalidArgument("unknown stream kind");
}

nlohmann::json stream_to_json(const StreamSpec& s) {
  json j;
  j["kind"] = kind_name(s.kind);
  j["n_tasks"] = s.n_tasks;
  j["split"] = {s.cluster.split.train, s.cluster.split.val, s.cluster.split.test};
  if (s.seed) j["seed"] = *s.seed;
  if (s.kind == StreamKind::split_idx) {
    j["images"] = s.images.string();
    j["labels"] = s.labels.string();
    return j;
  }
  j["classes_per_task"] = s.classes_per_task;
  j["dim"] = s.dim;
  j["samples_per_class"] = s.samples_per_class;
  j["mean_range"] = s.cluster.mean_range;
  j["sigma"] = s.cluster.sigma;
  if (s.kind == StreamKind::similar) j["drift"] = s.drift;
  return j;
}

StreamSpec stream_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  StreamSpec s;
  s.kind = parse_kind(j.contains("kind") ? get_as<std::string>(j, "kind", where) : "dissimilar", where);

  std::set<std::string> allowed{"kind", "n_tasks", "split", "seed"};
  if (s.kind == StreamKind::split_idx) {
    allowed.insert({"images", "labels"});
  } else {
    allowed.insert({"classes_per_task", "dim", "samples_per_class", "mean_range", "sigma"});
    if (s.kind == StreamKind::similar) allowed.insert("drift");
  }
  reject_unknown(j, allowed, where);

  read_opt(j, "n_tasks", where, s.n_tasks);
  if (j.contains("split")) s.cluster.split = parse_split(j["split"], where);
  if (j.contains("seed")) s.seed = get_as<std::uint64_t>(j, "seed", where);
  check(s.n_tasks > 0, where + ".n_tasks must be positive");

  if (s.kind == StreamKind::split_idx) {
    check(j.contains("images") && j.contains("labels"), where + ": idx streams need 'images' and 'labels'");
    s.images = get_as<std::string>(j, "images", where);
    s.labels = get_as<std::string>(j, "labels", where);
    return s;
  }
  read_opt(j, "classes_per_task", where, s.classes_per_task);
  read_opt(j, "dim", where, s.dim);
  read_opt(j, "samples_per_class", where, s.samples_per_class);
  read_opt(j, "mean_range", where, s.cluster.mean_range);
  read_opt(j, "sigma", where, s.cluster.sigma);
  read_opt(j, "drift", where, s.drift);
  check(s.classes_per_task >= 2, where + ".classes_per_task must be at least 2");
  check(s.dim > 0, where + ".dim must be positive");
  check(s.samples_per_class > 0, where + ".samples_per_class must be positive");
  check(s.cluster.mean_range > 0, where + ".mean_range must be positive");
  check(s.cluster.sigma > 0, where + ".sigma must be positive");
  check(s.drift >= 0, where + ".drift must be non-negative");
  return s;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  reject_unknown(j, {"stream", "hidden", "methods", "train", "seeds", "output_dir", "blocked_eps", "checkpoints",
                     "prune_percents", "probe"},
                 "config");
  RunConfig c;
  check(j.contains("stream"), "config: missing 'stream'");
  c.stream = stream_from_json(j["stream"], "stream");

  read_opt(j, "hidden", "config", c.hidden);
  check(!c.hidden.empty(), "hidden: need at least one layer");
  for (Index h : c.hidden) check(h > 0, "hidden: layer widths must be positive");

  check(j.contains("methods"), "config: missing 'methods'");
  const auto names = get_as<std::vector<std::string>>(j, "methods", "config");
  check(!names.empty(), "methods: list is empty");
  for (const auto& n : names) {
    try {
      Method m = Method::parse(n);
      m.validate();
      c.methods.push_back(m);
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("methods: ") + e.what());
    }
  }

  if (j.contains("train")) {
    const json& t = j["train"];
    reject_unknown(t, {"lr", "epochs", "batch_size", "patience"}, "train");
    read_opt(t, "lr", "train", c.train.lr);
    read_opt(t, "epochs", "train", c.train.epochs);
    read_opt(t, "batch_size", "train", c.train.batch_size);
    read_opt(t, "patience", "train", c.train.patience);
    try {
      c.train.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("train: ") + e.what());
    }
  }

  read_opt(j, "seeds", "config", c.seeds);
  check(!c.seeds.empty(), "seeds: list is empty");
  if (j.contains("output_dir")) c.output_dir = get_as<std::string>(j, "output_dir", "config");
  read_opt(j, "blocked_eps", "config", c.blocked_eps);
  check(c.blocked_eps > 0 && c.blocked_eps < 1, "blocked_eps must lie in (0, 1)");
  read_opt(j, "checkpoints", "config", c.checkpoints);
  read_opt(j, "prune_percents", "config", c.prune_percents);
  for (double p : c.prune_percents) check(p > 0 && p < 100, "prune_percents: values must lie in (0, 100)");
  if (j.contains("probe")) c.probe = stream_from_json(j["probe"], "probe");
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return from_json(j);
}

nlohmann::json RunConfig::to_json() const {
  json j;
  j["stream"] = stream_to_json(stream);
  j["hidden"] = hidden;
  std::vector<std::string> names;
  for (const auto& m : methods) names.push_back(m.name());
  j["methods"] = names;
  j["train"] = {{"lr", train.lr}, {"epochs", train.epochs}, {"batch_size", train.batch_size},
                {"patience", train.patience}};
  j["seeds"] = seeds;
  j["output_dir"] = output_dir.string();
  j["blocked_eps"] = blocked_eps;
  j["checkpoints"] = checkpoints;
  j["prune_percents"] = prune_percents;
  if (probe) j["probe"] = stream_to_json(*probe);
  return j;
}

std::uint64_t RunConfig::run_hash(const Method& method, std::uint64_t seed) const {
  json j = to_json();
  j.erase("output_dir");
  j.erase("seeds");
  j.erase("methods");
  j.erase("checkpoints");
  j.erase("prune_percents");
  j.erase("probe");
  j["method"] = method.name();
  j["seed"] = seed;
  return fnv1a(j.dump());
}

}  // namespace spg
