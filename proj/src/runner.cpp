#include "spg/runner.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "spg/analysis.hpp"
#include "spg/checkpoint.hpp"
#include "spg/errors.hpp"
#include "spg/rng.hpp"

namespace spg {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string file_tag(const Method& m) {
  std::string s = m.name();
  std::replace(s.begin(), s.end(), ':', '-');
  return s;
}

int resolve_threads(std::optional<int> flag) {
  if (flag) {
    if (*flag <= 0) throw ConfigError("--threads must be positive");
    return *flag;
  }
  if (const char* env = std::getenv("SPG_THREADS"); env && *env) {
    int n = 0;
    const std::string_view s(env);
    auto res = std::from_chars(s.data(), s.data() + s.size(), n);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || n <= 0)
      throw ConfigError("SPG_THREADS must be a positive integer");
    return n;
  }
  return 1;
}

RunConfig resolve_config(const CliOptions& opts) {
  RunConfig cfg = RunConfig::load(opts.config);
  if (opts.out) cfg.output_dir = *opts.out;
  if (opts.seeds) {
    if (opts.seeds->empty()) throw ConfigError("--seeds: list is empty");
    cfg.seeds = *opts.seeds;
  }
  return cfg;
}

namespace {

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

/// Runs `jobs` on `threads` workers; rethrows the first failure.
void run_pool(std::size_t n_jobs, int threads, const std::function<void(std::size_t)>& job) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n_jobs) return;
      {
        std::lock_guard lock(failure_mutex);
        if (failure) return;
      }
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const auto n = static_cast<std::size_t>(std::max(1, threads));
  if (n == 1 || n_jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < std::min(n, n_jobs); ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

/// Builds one stream per seed up front; runs only read them.
std::map<std::uint64_t, TaskStream> build_streams(const StreamSpec& spec, const std::vector<std::uint64_t>& seeds) {
  std::map<std::uint64_t, TaskStream> out;
  for (auto s : seeds)
    if (!out.contains(s)) out.emplace(s, spec.build(s));
  return out;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("cannot write '" + path.string() + "'");
}

json chi_json(const std::optional<ChiStats>& c) {
  if (!c) return nullptr;
  return {{"f_each", c->f_each}, {"g_each", c->g_each}, {"f_total", c->f_total}, {"g_total", c->g_total},
          {"each_empty", c->each_empty}, {"total_empty", c->total_empty}};
}

int guarded(const char* name, std::ostream& log, const std::function<void()>& body) {
  try {
    body();
    return kExitOk;
  } catch (const ConfigError& e) {
    log << name << ": invalid configuration: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    log << name << ": " << e.what() << '\n';
    return kExitFailure;
  }
}

RunOptions run_options(const RunConfig& cfg, const Method& m, std::uint64_t seed) {
  RunOptions o;
  o.hidden = cfg.hidden;
  o.blocked_eps = cfg.blocked_eps;
  o.config_hash = cfg.run_hash(m, seed);
  return o;
}

TrainConfig seeded(TrainConfig t, std::uint64_t seed) {
  t.seed = seed;
  return t;
}

std::uint64_t extractor_hash(const Network& net) {
  std::uint64_t h = fnv1a("");
  for (const auto& l : net.layers) {
    const Vector v = flatten(l);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(v.data()), static_cast<std::size_t>(v.size()) * sizeof(double)), h);
  }
  return h;
}

}  // namespace

json run_record(const RunConfig& cfg, const RunResult& result, std::uint64_t seed,
                const std::vector<double>* reference) {
  const AccuracyMatrix& acc = result.accuracy;
  const int T = acc.tasks();
  json j;
  j["method"] = result.method.name();
  j["seed"] = seed;
  j["config_hash"] = hex64(cfg.run_hash(result.method, seed));

  json matrix = json::array();
  for (int after = 1; after <= T; ++after) {
    json col = json::array();
    for (int task = 1; task <= after; ++task) col.push_back(acc.at(task, after));
    matrix.push_back(col);
  }
  j["accuracy"] = matrix;
  j["avg_accuracy"] = avg_accuracy(acc);
  j["fwt"] = reference ? json(forward_transfer(acc, *reference)) : json(nullptr);
  const auto bwt = backward_transfer(acc);
  j["bwt"] = bwt ? json(*bwt) : json(nullptr);

  json blocked = json::array();
  for (std::size_t t = 0; t < result.blocked_history.size(); ++t)
    blocked.push_back({{"task", t + 1}, {"per_layer", result.blocked_history[t].per_layer},
                       {"total", result.blocked_history[t].total}});
  j["blocked"] = blocked;
  if (!result.hard_blocked_history.empty()) j["hard_blocked"] = result.hard_blocked_history;

  json chi = json::array();
  for (const auto& c : result.chi_history) chi.push_back(chi_json(c));
  j["chi"] = chi;

  json heads = json::array();
  Index total = result.params.extractor;
  for (const auto& [id, n] : result.params.heads) {
    heads.push_back({{"task", id}, {"count", n}});
    total += n;
  }
  j["params"] = {{"extractor", result.params.extractor}, {"heads", heads}, {"total", total}};
  return j;
}

std::string aggregate_csv(const std::vector<json>& records) {
  static const char* kMetrics[] = {"avg_accuracy", "fwt", "bwt", "final_blocked"};
  std::vector<std::string> order;
  std::map<std::string, std::map<std::string, std::vector<double>>> values;
  for (const auto& r : records) {
    const auto method = r.at("method").get<std::string>();
    if (!values.contains(method)) order.push_back(method);
    auto& m = values[method];
    for (const char* metric : kMetrics) {
      auto& bucket = m[metric];
      if (std::string(metric) == "final_blocked") {
        if (!r.at("blocked").empty()) bucket.push_back(r.at("blocked").back().at("total").get<double>());
      } else if (!r.at(metric).is_null()) {
        bucket.push_back(r.at(metric).get<double>());
      }
    }
  }
  std::string out = "method,metric,mean,std,n\n";
  for (const auto& method : order) {
    for (const char* metric : kMetrics) {
      const auto& v = values[method][metric];
      if (v.empty()) continue;
      double mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      std::string sd;
      if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        sd = format_double(std::sqrt(ss / static_cast<double>(v.size() - 1)));
      }
      out += method + "," + metric + "," + format_double(mean) + "," + sd + "," + std::to_string(v.size()) + "\n";
    }
  }
  return out;
}

int cmd_run(const CliOptions& opts, std::ostream& log) {
  return guarded("run", log, [&] {
    const RunConfig cfg = resolve_config(opts);
    const int threads = resolve_threads(opts.threads);
    const auto streams = build_streams(cfg.stream, cfg.seeds);

    struct Job {
      Method method;
      std::uint64_t seed;
      bool recorded;
    };
    std::vector<Job> jobs;
    const Method one{MethodKind::one};
    const bool has_one = std::find(cfg.methods.begin(), cfg.methods.end(), one) != cfg.methods.end();
    for (const auto& m : cfg.methods)
      for (auto s : cfg.seeds) jobs.push_back({m, s, true});
    if (!has_one)
      for (auto s : cfg.seeds) jobs.push_back({one, s, false});

    const fs::path ckpt_dir = cfg.output_dir / "checkpoints";
    std::vector<RunResult> results(jobs.size());
    std::mutex log_mutex;
    run_pool(jobs.size(), threads, [&](std::size_t i) {
      const Job& job = jobs[i];
      RunOptions o = run_options(cfg, job.method, job.seed);
      std::optional<Checkpoint> resume;
      const fs::path ckpt = ckpt_dir / (file_tag(job.method) + "_seed" + std::to_string(job.seed) + ".ckpt");
      if (cfg.checkpoints && job.method.is_sequential()) {
        if (fs::exists(ckpt)) {
          resume = load_checkpoint(ckpt, o.config_hash);
          o.resume = &*resume;
        }
        fs::create_directories(ckpt_dir);
        o.on_task_end = [&ckpt](const Checkpoint& c) { save_checkpoint(ckpt, c); };
      }
      results[i] = run_continual(streams.at(job.seed), job.method, seeded(cfg.train, job.seed), o);
      std::lock_guard lock(log_mutex);
      log << "run: " << job.method.name() << " seed " << job.seed
          << (resume ? " (resumed after task " + std::to_string(resume->tasks_done) + ")" : std::string())
          << " avg_accuracy " << format_double(avg_accuracy(results[i].accuracy)) << '\n';
    });

    std::map<std::uint64_t, std::vector<double>> reference;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (jobs[i].method != one) continue;
      auto& ref = reference[jobs[i].seed];
      for (int t = 1; t <= results[i].accuracy.tasks(); ++t) ref.push_back(results[i].accuracy.at(t, t));
    }

    std::vector<json> records;
    std::string blocked = "method,seed,task,layer,fraction\n";
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (!jobs[i].recorded) continue;
      const auto& r = results[i];
      json rec = run_record(cfg, r, jobs[i].seed, &reference.at(jobs[i].seed));
      write_file(cfg.output_dir / "runs" / (file_tag(jobs[i].method) + "_seed" + std::to_string(jobs[i].seed) + ".json"),
                 rec.dump(2) + "\n");
      records.push_back(std::move(rec));
      const std::string prefix = jobs[i].method.name() + "," + std::to_string(jobs[i].seed) + ",";
      for (std::size_t t = 0; t < r.blocked_history.size(); ++t) {
        const auto& b = r.blocked_history[t];
        for (std::size_t l = 0; l < b.per_layer.size(); ++l)
          blocked += prefix + std::to_string(t + 1) + "," + std::to_string(l + 1) + "," + format_double(b.per_layer[l]) + "\n";
        blocked += prefix + std::to_string(t + 1) + ",total," + format_double(b.total) + "\n";
      }
    }
    write_file(cfg.output_dir / "aggregate.csv", aggregate_csv(records));
    write_file(cfg.output_dir / "blocked.csv", blocked);
    log << "run: wrote " << records.size() << " run records to " << cfg.output_dir.string() << '\n';
  });
}

int cmd_prune(const CliOptions& opts, std::ostream& log) {
  return guarded("prune", log, [&] {
    const RunConfig cfg = resolve_config(opts);
    const int threads = resolve_threads(opts.threads);
    if (cfg.prune_percents.empty()) throw ConfigError("prune_percents: list is empty");
    const auto streams = build_streams(cfg.stream, cfg.seeds);

    std::vector<std::string> rows(cfg.seeds.size());
    run_pool(cfg.seeds.size(), threads, [&](std::size_t i) {
      const auto seed = cfg.seeds[i];
      const TaskDataset& task = streams.at(seed).tasks.front();
      const TrainConfig train = seeded(cfg.train, seed);
      Rng rng(init_seed(seed));
      TILModel model = make_til_model(task.train.dim(), cfg.hidden, rng);
      Rng head_rng(head_seed(seed, task.task_id));
      add_head(model, task.task_id, task.num_classes, head_rng);
      train_task(model, task, train, Method{MethodKind::ncl}, ImportanceState::zeros_for(model.extractor));
      const LayerVectors imp =
          compute_task_importance(model, task.task_id, task.train, train.batch_size, false).per_layer;

      const std::string prefix = std::to_string(seed) + ",";
      auto row = [&](PruneStrategy s, double pct) {
        const PruneResult r = pruning_experiment(model, task, imp, s, pct, seed);
        return prefix + std::string(to_string(s)) + "," + format_double(pct) + "," + format_double(r.accuracy) + "," +
               format_double(r.chance) + "\n";
      };
      std::string out = row(PruneStrategy::nothing, 0.0);
      for (double pct : cfg.prune_percents)
        for (auto s : {PruneStrategy::lowest, PruneStrategy::random, PruneStrategy::highest}) out += row(s, pct);
      rows[i] = std::move(out);
    });

    std::string csv = "seed,strategy,percent,accuracy,chance\n";
    for (const auto& r : rows) csv += r;
    write_file(cfg.output_dir / "prune.csv", csv);
    log << "prune: wrote " << (cfg.output_dir / "prune.csv").string() << '\n';
  });
}

int cmd_probe(const CliOptions& opts, std::ostream& log) {
  return guarded("probe", log, [&] {
    const RunConfig cfg = resolve_config(opts);
    const int threads = resolve_threads(opts.threads);
    if (!cfg.probe) throw ConfigError("probe: the config needs a 'probe' stream");
    for (const auto& m : cfg.methods)
      if (!m.is_sequential()) throw ConfigError("probe: " + m.name() + " has no single evolving extractor");
    const auto streams = build_streams(cfg.stream, cfg.seeds);
    std::map<std::uint64_t, TaskStream> probes;
    for (auto s : cfg.seeds) {
      StreamSpec spec = *cfg.probe;
      if (!spec.seed) spec.seed = derive_seed(s, "probe");
      probes.emplace(s, spec.build(s));
      if (probes.at(s).input_dim() != streams.at(s).input_dim())
        throw ConfigError("probe: stream dim does not match the training stream");
    }

    struct Job {
      Method method;
      std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (const auto& m : cfg.methods)
      for (auto s : cfg.seeds) jobs.push_back({m, s});

    std::vector<std::string> rows(jobs.size());
    run_pool(jobs.size(), threads, [&](std::size_t i) {
      const Job& job = jobs[i];
      const TaskStream& stream = streams.at(job.seed);
      const TaskDataset& probe = probes.at(job.seed).tasks.front();
      const TrainConfig train = seeded(cfg.train, job.seed);
      const fs::path dir = cfg.output_dir / "probe_checkpoints";
      fs::create_directories(dir);
      const std::string stem = file_tag(job.method) + "_seed" + std::to_string(job.seed) + "_task";

      RunOptions o = run_options(cfg, job.method, job.seed);
      o.on_task_end = [&](const Checkpoint& c) { save_checkpoint(dir / (stem + std::to_string(c.tasks_done) + ".ckpt"), c); };
      run_continual(stream, job.method, train, o);

      std::string out;
      for (int t = 1; t <= static_cast<int>(stream.tasks.size()); ++t) {
        const Checkpoint c = load_checkpoint(dir / (stem + std::to_string(t) + ".ckpt"), o.config_hash);
        const auto before = extractor_hash(c.model.extractor);
        const double acc = representation_probe(c.model.extractor, probe, train);
        if (extractor_hash(c.model.extractor) != before) throw Error("probe modified the frozen extractor");
        out += job.method.name() + "," + std::to_string(job.seed) + "," + std::to_string(t) + "," +
               format_double(acc) + "\n";
      }
      rows[i] = std::move(out);
    });

    std::string csv = "method,seed,tasks_learned,probe_accuracy\n";
    for (const auto& r : rows) csv += r;
    write_file(cfg.output_dir / "probe.csv", csv);
    log << "probe: wrote " << (cfg.output_dir / "probe.csv").string() << '\n';
  });
}

}  // namespace spg
