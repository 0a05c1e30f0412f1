#include "cdpo/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace cdpo {

using nlohmann::json;

bool ExperimentConfig::operator==(const ExperimentConfig& o) const {
  return seed == o.seed && strategy == o.strategy && out_dir == o.out_dir && schedule == o.schedule &&
         net == o.net && data == o.data && reward.id == o.reward.id && reward.target_angle == o.reward.target_angle &&
         curriculum == o.curriculum && dpo == o.dpo && train == o.train && sample == o.sample &&
         metrics == o.metrics && ablate == o.ablate;
}

DpoVariant ExperimentConfig::variant() const {
  return dpo.variant == "consistency" ? DpoVariant::consistency : DpoVariant::diffusion;
}

DifficultyMeasure ExperimentConfig::measure() const {
  return curriculum.measure == "score" ? DifficultyMeasure::score : DifficultyMeasure::rank;
}

TargetMode ExperimentConfig::target_mode() const {
  return dpo.target == "naive" ? TargetMode::naive : TargetMode::reference;
}

double ExperimentConfig::beta() const { return dpo.beta.value_or(DpoConfig::default_beta(variant())); }

// The consistency loss has no 1/T damping, so it wants a smaller step and a larger batch.
double ExperimentConfig::lr() const { return train.lr.value_or(variant() == DpoVariant::consistency ? 5e-6 : 3e-4); }

std::size_t ExperimentConfig::batch_pairs() const {
  return train.batch_pairs.value_or(variant() == DpoVariant::consistency ? 16 : 4);
}

namespace {

template <typename T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["strategy"] = c.strategy;
  j["out_dir"] = c.out_dir;
  j["schedule"] = {{"T", c.schedule.T},       {"beta_min", c.schedule.beta_min}, {"beta_max", c.schedule.beta_max},
                   {"N", c.schedule.N},       {"delta", c.schedule.delta},       {"sigma_data", c.schedule.sigma_data}};
  j["net"] = {{"hidden", c.net.hidden},
              {"time_emb", c.net.time_emb},
              {"cond_emb", c.net.cond_emb},
              {"lora_rank", c.net.lora_rank},
              {"lora_alpha", c.net.lora_alpha}};
  j["data"] = {{"modes", c.data.modes},
               {"radius", c.data.radius},
               {"std", c.data.std},
               {"n_per_condition", c.data.n_per_condition},
               {"dim", c.data.dim}};
  j["reward"] = {{"id", c.reward.id}, {"target_angle", c.reward.target_angle}};
  j["curriculum"] = {{"B", c.curriculum.B},       {"K", c.curriculum.K},
                     {"total", c.curriculum.total}, {"tau", c.curriculum.tau},
                     {"measure", c.curriculum.measure}, {"M", c.curriculum.M}};
  j["dpo"] = {{"variant", c.dpo.variant},
              {"beta", optional_json(c.dpo.beta)},
              {"shared_eps", c.dpo.shared_eps},
              {"target", c.dpo.target}};
  j["train"] = {{"lr", optional_json(c.train.lr)},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"eps", c.train.eps},
                {"weight_decay", c.train.weight_decay},
                {"batch_pairs", optional_json(c.train.batch_pairs)},
                {"grad_accum", c.train.grad_accum},
                {"pretrain_iters", c.train.pretrain_iters},
                {"pretrain_lr", c.train.pretrain_lr},
                {"distill_iters", c.train.distill_iters},
                {"distill_lr", c.train.distill_lr},
                {"batch_size", c.train.batch_size},
                {"ema_decay", c.train.ema_decay}};
  j["sample"] = {{"ddim_steps", c.sample.ddim_steps},
                 {"cm_steps", c.sample.cm_steps},
                 {"eval_samples", c.sample.eval_samples}};
  j["metrics"] = {{"wallclock", c.metrics.wallclock}, {"eval_every", c.metrics.eval_every}};
  j["ablate"] = {{"B", c.ablate.B}, {"M", c.ablate.M}, {"beta", c.ablate.beta}, {"K", c.ablate.K}};
  return j;
}

template <typename T>
void get(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

template <typename T>
void get_optional(const json& j, const char* key, std::optional<T>& out) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    out.reset();
  } else {
    out = j.at(key).get<T>();
  }
}

ExperimentConfig from_json(const json& j) {
  ExperimentConfig c;
  get(j, "seed", c.seed);
  get(j, "strategy", c.strategy);
  get(j, "out_dir", c.out_dir);
  if (j.contains("schedule")) {
    const auto& s = j["schedule"];
    get(s, "T", c.schedule.T);
    get(s, "beta_min", c.schedule.beta_min);
    get(s, "beta_max", c.schedule.beta_max);
    get(s, "N", c.schedule.N);
    get(s, "delta", c.schedule.delta);
    get(s, "sigma_data", c.schedule.sigma_data);
  }
  if (j.contains("net")) {
    const auto& s = j["net"];
    get(s, "hidden", c.net.hidden);
    get(s, "time_emb", c.net.time_emb);
    get(s, "cond_emb", c.net.cond_emb);
    get(s, "lora_rank", c.net.lora_rank);
    get(s, "lora_alpha", c.net.lora_alpha);
  }
  if (j.contains("data")) {
    const auto& s = j["data"];
    get(s, "modes", c.data.modes);
    get(s, "radius", c.data.radius);
    get(s, "std", c.data.std);
    get(s, "n_per_condition", c.data.n_per_condition);
    get(s, "dim", c.data.dim);
  }
  if (j.contains("reward")) {
    get(j["reward"], "id", c.reward.id);
    get(j["reward"], "target_angle", c.reward.target_angle);
  }
  if (j.contains("curriculum")) {
    const auto& s = j["curriculum"];
    get(s, "B", c.curriculum.B);
    get(s, "K", c.curriculum.K);
    get(s, "total", c.curriculum.total);
    get(s, "tau", c.curriculum.tau);
    get(s, "measure", c.curriculum.measure);
    get(s, "M", c.curriculum.M);
  }
  if (j.contains("dpo")) {
    const auto& s = j["dpo"];
    get(s, "variant", c.dpo.variant);
    get_optional(s, "beta", c.dpo.beta);
    get(s, "shared_eps", c.dpo.shared_eps);
    get(s, "target", c.dpo.target);
  }
  if (j.contains("train")) {
    const auto& s = j["train"];
    get_optional(s, "lr", c.train.lr);
    get(s, "beta1", c.train.beta1);
    get(s, "beta2", c.train.beta2);
    get(s, "eps", c.train.eps);
    get(s, "weight_decay", c.train.weight_decay);
    get_optional(s, "batch_pairs", c.train.batch_pairs);
    get(s, "grad_accum", c.train.grad_accum);
    get(s, "pretrain_iters", c.train.pretrain_iters);
    get(s, "pretrain_lr", c.train.pretrain_lr);
    get(s, "distill_iters", c.train.distill_iters);
    get(s, "distill_lr", c.train.distill_lr);
    get(s, "batch_size", c.train.batch_size);
    get(s, "ema_decay", c.train.ema_decay);
  }
  if (j.contains("sample")) {
    get(j["sample"], "ddim_steps", c.sample.ddim_steps);
    get(j["sample"], "cm_steps", c.sample.cm_steps);
    get(j["sample"], "eval_samples", c.sample.eval_samples);
  }
  if (j.contains("metrics")) {
    get(j["metrics"], "wallclock", c.metrics.wallclock);
    get(j["metrics"], "eval_every", c.metrics.eval_every);
  }
  if (j.contains("ablate")) {
    get(j["ablate"], "B", c.ablate.B);
    get(j["ablate"], "M", c.ablate.M);
    get(j["ablate"], "beta", c.ablate.beta);
    get(j["ablate"], "K", c.ablate.K);
  }
  return c;
}

void check_keys(const json& doc, const json& schema, const std::string& prefix) {
  if (!doc.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
  for (const auto& [key, value] : doc.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!schema.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (schema[key].is_object()) check_keys(value, schema[key], path);
  }
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

void apply_override(json& doc, const json& schema, const Override& ov) {
  json* node = &doc;
  const json* sch = &schema;
  std::string rest = ov.first;
  while (true) {
    const auto dot = rest.find('.');
    const std::string key = rest.substr(0, dot);
    if (!sch->is_object() || !sch->contains(key)) throw ConfigError("unknown config key '" + ov.first + "'");
    sch = &(*sch)[key];
    if (dot == std::string::npos) {
      (*node)[key] = parse_value(ov.second);
      return;
    }
    if (!node->contains(key)) (*node)[key] = json::object();
    node = &(*node)[key];
    rest = rest.substr(dot + 1);
  }
}

void ensure(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

void validate(const ExperimentConfig& c) {
  ensure(c.strategy == "dpo" || c.strategy == "curriculum-dpo", "strategy must be 'dpo' or 'curriculum-dpo'");
  ensure(c.schedule.T >= 2, "schedule.T must be >= 2");
  ensure(c.schedule.beta_min > 0.0 && c.schedule.beta_min < c.schedule.beta_max && c.schedule.beta_max < 1.0,
         "schedule betas must satisfy 0 < beta_min < beta_max < 1");
  ensure(c.schedule.N >= 2, "schedule.N must be >= 2");
  ensure(c.schedule.delta > 0.0 && c.schedule.delta < c.schedule.T, "schedule.delta must lie in (0, T)");
  ensure(c.schedule.sigma_data > 0.0, "schedule.sigma_data must be positive");
  ensure(!c.net.hidden.empty(), "net.hidden must list at least one layer");
  for (const auto h : c.net.hidden) ensure(h >= 1, "net.hidden widths must be >= 1");
  ensure(c.net.lora_rank == 0 || c.net.lora_alpha > 0.0, "net.lora_alpha must be positive");
  ensure(c.data.modes >= 2, "data.modes must be >= 2");
  ensure(c.data.dim >= 2, "data.dim must be >= 2");
  ensure(c.data.std > 0.0 && c.data.radius > 0.0, "data.std and data.radius must be positive");
  ensure(c.data.n_per_condition >= 1, "data.n_per_condition must be >= 1");
  ensure(c.reward.id == "target_distance" || c.reward.id == "norm_appeal" || c.reward.id == "label_align",
         "reward.id must be target_distance, norm_appeal or label_align");
  ensure(c.curriculum.B >= 1, "curriculum.B must be >= 1");
  ensure(c.curriculum.K >= 0, "curriculum.K must be >= 0");
  ensure(c.curriculum.total >= 1, "curriculum.total must be >= 1");
  ensure(c.curriculum.tau >= 0.0, "curriculum.tau must be non-negative");
  ensure(c.curriculum.measure == "rank" || c.curriculum.measure == "score", "curriculum.measure must be rank or score");
  ensure(c.curriculum.M >= 2, "curriculum.M must be >= 2");
  ensure(c.dpo.variant == "diffusion" || c.dpo.variant == "consistency", "dpo.variant must be diffusion or consistency");
  ensure(!c.dpo.beta || *c.dpo.beta > 0.0, "dpo.beta must be positive");
  ensure(c.dpo.target == "reference" || c.dpo.target == "naive", "dpo.target must be reference or naive");
  ensure((!c.train.lr || *c.train.lr > 0.0) && c.train.pretrain_lr > 0.0 && c.train.distill_lr > 0.0, "learning rates must be positive");
  ensure(c.train.beta1 >= 0.0 && c.train.beta1 < 1.0 && c.train.beta2 >= 0.0 && c.train.beta2 < 1.0,
         "train.beta1 and train.beta2 must lie in [0, 1)");
  ensure(c.train.eps > 0.0 && c.train.weight_decay >= 0.0, "train.eps must be positive, weight_decay non-negative");
  ensure((!c.train.batch_pairs || *c.train.batch_pairs >= 1) && c.train.grad_accum >= 1, "train.batch_pairs and train.grad_accum must be >= 1");
  ensure(c.train.pretrain_iters >= 1 && c.train.distill_iters >= 1, "training iteration counts must be >= 1");
  ensure(c.train.batch_size >= 1, "train.batch_size must be >= 1");
  ensure(c.train.ema_decay >= 0.0 && c.train.ema_decay < 1.0, "train.ema_decay must lie in [0, 1)");
  ensure(c.sample.ddim_steps >= 1 && c.sample.ddim_steps <= c.schedule.T, "sample.ddim_steps must lie in [1, T]");
  ensure(c.sample.cm_steps >= 1, "sample.cm_steps must be >= 1");
  ensure(c.sample.eval_samples >= 1, "sample.eval_samples must be >= 1");
  ensure(c.metrics.eval_every >= 0, "metrics.eval_every must be >= 0");
  for (const auto b : c.ablate.B) ensure(b >= 1, "ablate.B entries must be >= 1");
  for (const auto m : c.ablate.M) ensure(m >= 2, "ablate.M entries must be >= 2");
  for (const auto b : c.ablate.beta) ensure(b > 0.0, "ablate.beta entries must be positive");
}

ExperimentConfig parse_config(const std::string& text, const std::vector<Override>& overrides) {
  const json schema = to_json(ExperimentConfig{});
  json doc;
  try {
    doc = text.empty() ? json::object() : json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(doc, schema, "");
  for (const auto& ov : overrides) apply_override(doc, schema, ov);
  ExperimentConfig config;
  try {
    config = from_json(doc);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config value has the wrong type: ") + e.what());
  }
  validate(config);
  return config;
}

ExperimentConfig load_config(const std::optional<std::string>& path, const std::vector<Override>& overrides) {
  std::string text;
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot read config file '" + *path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  return parse_config(text, overrides);
}

std::string to_json_string(const ExperimentConfig& config) { return to_json(config).dump(2) + "\n"; }

}  // namespace cdpo
