#include "cdpo/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "cdpo/checkpoint.hpp"
#include "cdpo/config.hpp"
#include "cdpo/metrics.hpp"
#include "cdpo/pipeline.hpp"
#include "cdpo/verify.hpp"
#include "json.hpp"

namespace cdpo {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> strategy;
  std::optional<std::string> variant;
  std::optional<std::string> out;
  std::optional<std::string> pool;
  std::optional<std::string> teacher;
  std::optional<std::string> student;
};

void add_common(CLI::App* app, CommonArgs& a) {
  app->add_option("--config", a.config, "JSON config file");
  app->add_option("--seed", a.seed, "run seed");
  app->add_option("--strategy", a.strategy, "dpo | curriculum-dpo");
  app->add_option("--variant", a.variant, "diffusion | consistency");
  app->add_option("--out", a.out, "output directory");
  app->allow_extras();
}

std::vector<Override> dotted_overrides(const std::vector<std::string>& extras) {
  std::vector<Override> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& tok = extras[i];
    if (tok.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + tok + "'");
    const std::string body = tok.substr(2);
    const auto eq = body.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(body.substr(0, eq), body.substr(eq + 1));
    } else {
      if (i + 1 >= extras.size()) throw ConfigError("missing value for '" + tok + "'");
      out.emplace_back(body, extras[++i]);
    }
  }
  return out;
}

ExperimentConfig resolve(const CommonArgs& a, const std::vector<std::string>& extras) {
  auto overrides = dotted_overrides(extras);
  if (a.seed) overrides.emplace_back("seed", std::to_string(*a.seed));
  if (a.strategy) overrides.emplace_back("strategy", json(*a.strategy).dump());
  if (a.variant) overrides.emplace_back("dpo.variant", json(*a.variant).dump());
  if (a.out) overrides.emplace_back("out_dir", json(*a.out).dump());
  return load_config(a.config, overrides);
}

fs::path prepare_out(const ExperimentConfig& c, const std::string& snapshot_name = "config.json") {
  const fs::path dir(c.out_dir);
  fs::create_directories(dir);
  std::ofstream(dir / snapshot_name, std::ios::trunc) << to_json_string(c);
  return dir;
}

std::size_t pool_threads() {
  if (const char* env = std::getenv("CPO_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    throw ConfigError("CPO_THREADS must be a positive integer");
  }
  return 1;
}

/// Loads reference models from `dir`, training and saving any that are missing.
Prepared load_or_prepare(const ExperimentConfig& c, const fs::path& dir, const CommonArgs& a) {
  const fs::path teacher_path = a.teacher ? fs::path(*a.teacher) : dir / "teacher.ckpt";
  const fs::path student_path = a.student ? fs::path(*a.student) : dir / "student.ckpt";
  Prepared p{c, make_schedule(c), {}, make_dataset(c), make_reward(c), {}, std::nullopt, {}, {}};
  p.grid = make_grid(c, p.schedule);
  if (fs::exists(teacher_path)) {
    p.teacher = load_denoiser(teacher_path.string());
    if (!(p.teacher.mlp().spec() == make_net_spec(c))) {
      throw ConfigError("teacher checkpoint architecture does not match the config");
    }
  } else {
    p.teacher = pretrain_teacher(c, p.data, p.schedule, &p.pretrain_log);
    save_denoiser(p.teacher, teacher_path.string());
  }
  if (c.variant() == DpoVariant::consistency) {
    if (fs::exists(student_path)) {
      p.student = load_consistency(student_path.string());
    } else {
      p.student = distill_student(c, p.teacher, p.data, p.schedule, p.grid, &p.distill_log);
      save_consistency(*p.student, student_path.string());
    }
  }
  return p;
}

int cmd_pretrain(const ExperimentConfig& c) {
  const auto dir = prepare_out(c);
  const auto schedule = make_schedule(c);
  const auto data = make_dataset(c);
  TrainLog log;
  const auto teacher = pretrain_teacher(c, data, schedule, &log);
  save_denoiser(teacher, (dir / "teacher.ckpt").string());
  emit_metrics(log, std::nullopt, (dir / "pretrain_metrics.jsonl").string(), c.metrics.wallclock);
  std::cout << "pretrain: " << log.entries.size() << " iterations, loss " << log.entries.front().loss << " -> "
            << log.entries.back().loss << "\n";
  return 0;
}

int cmd_distill(const ExperimentConfig& c, const CommonArgs& a) {
  const auto dir = prepare_out(c);
  const fs::path teacher_path = a.teacher ? fs::path(*a.teacher) : dir / "teacher.ckpt";
  const auto teacher = load_denoiser(teacher_path.string());
  if (!(teacher.mlp().spec() == make_net_spec(c))) {
    throw ConfigError("teacher checkpoint architecture does not match the config");
  }
  const auto schedule = make_schedule(c);
  const auto grid = make_grid(c, schedule);
  const auto data = make_dataset(c);
  TrainLog log;
  const auto student = distill_student(c, teacher, data, schedule, grid, &log);
  save_consistency(student, (dir / "student.ckpt").string());
  emit_metrics(log, std::nullopt, (dir / "distill_metrics.jsonl").string(), c.metrics.wallclock);
  std::cout << "distill: " << log.entries.size() << " iterations, loss " << log.entries.front().loss << " -> "
            << log.entries.back().loss << "\n";
  return 0;
}

int cmd_generate_pool(const ExperimentConfig& c, const CommonArgs& a) {
  const auto dir = prepare_out(c);
  const auto p = load_or_prepare(c, dir, a);
  const auto pool = generate_pool(p.reference_generator(), p.data.n_conditions(), c.curriculum.M, c.seed,
                                  pool_threads());
  std::ofstream out(dir / "pool.jsonl", std::ios::trunc);
  for (const auto& samples : pool) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      out << json{{"condition", samples[i].condition}, {"index", i}, {"x0", samples[i].x0}}.dump() << '\n';
    }
  }
  std::cout << "generate-pool: " << pool.size() << " conditions x " << c.curriculum.M << " samples\n";
  return 0;
}

std::vector<std::vector<Example>> read_pool(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read pool file '" + path.string() + "'");
  std::vector<std::vector<Example>> pool;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      const auto c = j.at("condition").get<std::size_t>();
      const auto idx = j.at("index").get<std::size_t>();
      if (pool.size() <= c) pool.resize(c + 1);
      if (idx != pool[c].size()) throw ConfigError("pool indices must be consecutive per condition");
      pool[c].push_back({j.at("x0").get<Vec>(), c});
    } catch (const json::exception& e) {
      throw ConfigError("pool line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return pool;
}

int cmd_rank(const ExperimentConfig& c, const CommonArgs& a) {
  const auto dir = prepare_out(c);
  const fs::path pool_path = a.pool ? fs::path(*a.pool) : dir / "pool.jsonl";
  const auto pool = read_pool(pool_path);
  const auto ranked = rank_and_batch(c, pool, make_reward(c));
  std::ofstream rout(dir / "ranked.jsonl", std::ios::trunc);
  std::ofstream pout(dir / "pairs.jsonl", std::ios::trunc);
  std::size_t n_pairs = 0;
  for (std::size_t slot = 0; slot < ranked.pools.size(); ++slot) {
    const auto& rp = ranked.pools[slot];
    for (const auto& s : rp.samples) {
      rout << json{{"condition", rp.condition}, {"index", s.index}, {"score", s.score}}.dump() << '\n';
    }
    const auto& batches = ranked.plan.per_condition[slot];
    for (std::size_t k = 0; k < batches.B(); ++k) {
      for (const auto& p : batches.batches[k]) {
        pout << json{{"condition", p.condition},   {"winner_index", p.winner_index},
                     {"loser_index", p.loser_index}, {"rank_diff", p.rank_diff},
                     {"score_diff", p.score_diff},   {"batch_k", k + 1}}
                    .dump()
             << '\n';
        ++n_pairs;
      }
    }
  }
  std::cout << "rank: " << n_pairs << " pairs in " << ranked.plan.B() << " batches\n";
  return 0;
}

int cmd_finetune(const ExperimentConfig& c, const CommonArgs& a) {
  const auto dir = prepare_out(c);
  const auto p = load_or_prepare(c, dir, a);
  const auto out = run_finetune(p, c, pool_threads());
  emit_metrics(out.log, out.summary, (dir / "metrics.jsonl").string(), c.metrics.wallclock);
  if (out.consistency) save_consistency(*out.consistency, (dir / "finetuned.ckpt").string());
  if (out.diffusion) save_denoiser(*out.diffusion, (dir / "finetuned.ckpt").string());
  std::cout << "finetune (" << out.summary.strategy << ", " << c.dpo.variant << "): mean reward "
            << out.baseline_reward << " -> " << out.final_reward << "\n";
  return 0;
}

int cmd_ablate(const ExperimentConfig& c, const CommonArgs& a) {
  const auto dir = prepare_out(c);
  const auto p = load_or_prepare(c, dir, a);
  const fs::path path = dir / "ablation.jsonl";
  std::ofstream(path, std::ios::trunc);
  const double baseline =
      mean_reward(p.reference_generator(), p.reward, p.data.n_conditions(), c.sample.eval_samples, c.seed);
  std::ofstream(dir / "baseline.json", std::ios::trunc)
      << json{{"baseline_mean_reward", baseline}, {"seed", c.seed}}.dump() << '\n';
  std::cout << "ablate: baseline mean reward " << baseline << "\n";

  auto run = [&](ExperimentConfig v, const std::string& label) {
    v.strategy = "curriculum-dpo";
    const auto out = run_finetune(p, v, pool_threads());
    append_line(path.string(), summary_record(out.summary));
    std::cout << "  " << label << ": mean reward " << out.final_reward << "\n";
  };
  for (const auto B : c.ablate.B) {
    ExperimentConfig v = c;
    v.curriculum.B = B;
    v.curriculum.K = c.curriculum.total / static_cast<int>(B);
    run(v, "B=" + std::to_string(B));
  }
  for (const auto M : c.ablate.M) {
    ExperimentConfig v = c;
    v.curriculum.M = M;
    run(v, "M=" + std::to_string(M));
  }
  for (const auto K : c.ablate.K) {
    ExperimentConfig v = c;
    v.curriculum.K = K;
    run(v, "K=" + std::to_string(K));
  }
  for (const auto beta : c.ablate.beta) {
    ExperimentConfig v = c;
    v.dpo.beta = beta;
    run(v, "beta=" + json(beta).dump());
  }
  return 0;
}

int cmd_verify() {
  const auto results = run_verify_suite();
  std::size_t passed = 0;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.seconds << " s): " << r.detail << "\n";
    passed += r.passed ? 1 : 0;
  }
  std::cout << passed << "/" << results.size() << " checks passed\n";
  return passed == results.size() ? 0 : 1;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Curriculum DPO for diffusion and consistency models on toy data"};
  app.require_subcommand(1);
  CommonArgs a;
  auto* pretrain = app.add_subcommand("pretrain", "train the diffusion teacher");
  auto* distill = app.add_subcommand("distill", "distill a consistency model from the teacher");
  auto* gen = app.add_subcommand("generate-pool", "sample M candidates per condition");
  auto* rank = app.add_subcommand("rank", "score, pair and batch a sample pool");
  auto* finetune = app.add_subcommand("finetune", "DPO or Curriculum DPO fine-tuning");
  auto* ablate = app.add_subcommand("ablate", "sweep B, M, K and beta");
  auto* verify = app.add_subcommand("verify", "run the invariant and oracle suite");
  for (auto* sub : {pretrain, distill, gen, rank, finetune, ablate}) add_common(sub, a);
  for (auto* sub : {distill, gen, finetune, ablate}) sub->add_option("--teacher", a.teacher, "teacher checkpoint");
  for (auto* sub : {gen, finetune, ablate}) sub->add_option("--student", a.student, "consistency checkpoint");
  rank->add_option("--pool", a.pool, "pool file from generate-pool");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (verify->parsed()) return cmd_verify();
    CLI::App* sub = app.get_subcommands().front();
    const auto config = resolve(a, sub->remaining());
    if (sub == pretrain) return cmd_pretrain(config);
    if (sub == distill) return cmd_distill(config, a);
    if (sub == gen) return cmd_generate_pool(config, a);
    if (sub == rank) return cmd_rank(config, a);
    if (sub == finetune) return cmd_finetune(config, a);
    if (sub == ablate) return cmd_ablate(config, a);
  } catch (const NumericalAbort& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace cdpo
