// Copyright 2026 The resalign-toy Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "resalign/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "resalign/errors.hpp"
#include "resalign/io.hpp"

namespace resalign {

namespace pt = boost::property_tree;

ResalignSettings toy_unlearn_defaults() {
  ResalignSettings s;
  s.optimizer = OuterOptimizer::kAdam;
  s.hypergrad.gamma = 0.01;
  return s;
}

std::string to_string(const Parameterization& p) {
  return p.low_rank ? "low-rank:" + std::to_string(p.rank) : "full";
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  if (out.empty() || (out.size() == 1 && out[0].empty())) return {};
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  T v{};
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config key '" + key + "': cannot parse '" + s + "'");
  }
  return v;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& raw) {
  std::vector<T> out;
  for (const std::string& item : split(raw, ',')) out.push_back(parse_number<T>(key, item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += format_short(xs[i]);
    } else {
      out += std::to_string(xs[i]);
    }
  }
  return out;
}

// "optimizer:lr:steps:loss:parameterization", parameterization may carry ":r".
FinetuneConfig parse_recipe(const std::string& raw, std::size_t batch) {
  const auto f = split(raw, ':');
  if (f.size() != 5 && f.size() != 6) {
    throw ConfigError("fixed_config must read optimizer:lr:steps:loss:full|low-rank:r, got '" + raw + "'");
  }
  FinetuneConfig c;
  c.optimizer = parse_optimizer(f[0]);
  c.lr = parse_number<double>("fixed_config", f[1]);
  c.steps = parse_number<int>("fixed_config", f[2]);
  c.loss_kind = parse_loss_kind(f[3]);
  c.parameterization = parse_parameterization(f.size() == 6 ? f[4] + ":" + f[5] : f[4]);
  c.batch_size = batch;
  return c;
}

std::string recipe_text(const FinetuneConfig& c) {
  return to_string(c.optimizer) + ":" + format_short(c.lr) + ":" + std::to_string(c.steps) + ":" +
         to_string(c.loss_kind) + ":" + to_string(c.parameterization);
}

using Setter = std::function<void(RunConfig&, const std::string&)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Key {
  Setter set;
  Getter get;
};

template <typename T, typename Access>
Key number_key(const std::string& name, Access access) {
  return {[name, access](RunConfig& c, const std::string& v) { access(c) = parse_number<T>(name, v); },
          [access](const RunConfig& c) {
            const T v = access(const_cast<RunConfig&>(c));
            if constexpr (std::is_floating_point_v<T>) {
              return format_short(v);
            } else {
              return std::to_string(v);
            }
          }};
}

// Ordered section -> key -> accessor table, shared by the parser and to_text.
const std::vector<std::pair<std::string, std::vector<std::pair<std::string, Key>>>>& schema() {
  static const auto table = [] {
    std::vector<std::pair<std::string, std::vector<std::pair<std::string, Key>>>> t;
    auto section = [&](const std::string& name) -> auto& {
      t.push_back({name, {}});
      return t.back().second;
    };
    auto& run = section("run");
    run.push_back({"seed", number_key<std::uint64_t>("run.seed", [](RunConfig& c) -> auto& { return c.seed; })});
    run.push_back({"run_id", {[](RunConfig& c, const std::string& v) {
                                if (v.empty() || v.find_first_of(",\n/") != std::string::npos) {
                                  throw ConfigError("run.run_id must be non-empty without ',' or '/'");
                                }
                                c.run_id = v;
                              },
                              [](const RunConfig& c) { return c.run_id; }}});

    auto& data = section("data");
    data.push_back({"benign_concepts", number_key<int>("data.benign_concepts", [](RunConfig& c) -> auto& { return c.testbed.benign_concepts; })});
    data.push_back({"harmful_concepts", number_key<int>("data.harmful_concepts", [](RunConfig& c) -> auto& { return c.testbed.harmful_concepts; })});
    data.push_back({"ring_radius", number_key<double>("data.ring_radius", [](RunConfig& c) -> auto& { return c.testbed.ring_radius; })});
    data.push_back({"mode_std", number_key<double>("data.mode_std", [](RunConfig& c) -> auto& { return c.testbed.mode_std; })});
    data.push_back({"train_per_concept", number_key<std::size_t>("data.train_per_concept", [](RunConfig& c) -> auto& { return c.testbed.sizes.train_per_concept; })});
    data.push_back({"harmful_per_concept", number_key<std::size_t>("data.harmful_per_concept", [](RunConfig& c) -> auto& { return c.testbed.sizes.harmful_per_concept; })});
    data.push_back({"heldout_per_concept", number_key<std::size_t>("data.heldout_per_concept", [](RunConfig& c) -> auto& { return c.testbed.sizes.heldout_per_concept; })});
    data.push_back({"finetune_per_concept", number_key<std::size_t>("data.finetune_per_concept", [](RunConfig& c) -> auto& { return c.testbed.sizes.finetune_per_concept; })});
    data.push_back({"attack_benign", number_key<std::size_t>("data.attack_benign", [](RunConfig& c) -> auto& { return c.testbed.sizes.attack_benign; })});
    data.push_back({"attack_harmful", number_key<std::size_t>("data.attack_harmful", [](RunConfig& c) -> auto& { return c.testbed.sizes.attack_harmful; })});

    auto& arch = section("arch");
    arch.push_back({"time_embed", number_key<int>("arch.time_embed", [](RunConfig& c) -> auto& { return c.testbed.arch.time_embed; })});
    arch.push_back({"concept_embed", number_key<int>("arch.concept_embed", [](RunConfig& c) -> auto& { return c.testbed.arch.concept_embed; })});
    arch.push_back({"hidden", {[](RunConfig& c, const std::string& v) { c.testbed.arch.hidden = parse_list<int>("arch.hidden", v); },
                               [](const RunConfig& c) { return join(c.testbed.arch.hidden); }}});
    arch.push_back({"activation", {[](RunConfig& c, const std::string& v) {
                                     if (v == "silu") c.testbed.arch.activation = Activation::kSilu;
                                     else if (v == "tanh") c.testbed.arch.activation = Activation::kTanh;
                                     else throw ConfigError("arch.activation must be silu or tanh");
                                   },
                                   [](const RunConfig& c) {
                                     return std::string(c.testbed.arch.activation == Activation::kSilu ? "silu" : "tanh");
                                   }}});

    auto& sched = section("schedule");
    sched.push_back({"steps", number_key<int>("schedule.steps", [](RunConfig& c) -> auto& { return c.testbed.diffusion_steps; })});
    sched.push_back({"beta_min", number_key<double>("schedule.beta_min", [](RunConfig& c) -> auto& { return c.testbed.beta_min; })});
    sched.push_back({"beta_max", number_key<double>("schedule.beta_max", [](RunConfig& c) -> auto& { return c.testbed.beta_max; })});

    auto& obj = section("objective");
    obj.push_back({"batch_size", number_key<std::size_t>("objective.batch_size", [](RunConfig& c) -> auto& { return c.testbed.objective.batch_size; })});
    obj.push_back({"clamp_max", number_key<double>("objective.clamp_max", [](RunConfig& c) -> auto& { return c.testbed.objective.clamp_max; })});
    obj.push_back({"prior_weight", number_key<double>("objective.prior_weight", [](RunConfig& c) -> auto& { return c.testbed.objective.prior_weight; })});
    obj.push_back({"reference_per_concept", number_key<std::size_t>("objective.reference_per_concept", [](RunConfig& c) -> auto& { return c.testbed.reference_per_concept; })});

    auto& pre = section("pretrain");
    pre.push_back({"steps", number_key<int>("pretrain.steps", [](RunConfig& c) -> auto& { return c.pretrain.steps; })});
    pre.push_back({"lr", number_key<double>("pretrain.lr", [](RunConfig& c) -> auto& { return c.pretrain.lr; })});
    pre.push_back({"batch_size", number_key<std::size_t>("pretrain.batch_size", [](RunConfig& c) -> auto& { return c.pretrain.batch_size; })});

    auto& un = section("unlearn");
    un.push_back({"alpha", number_key<double>("unlearn.alpha", [](RunConfig& c) -> auto& { return c.unlearn.alpha; })});
    un.push_back({"beta", number_key<double>("unlearn.beta", [](RunConfig& c) -> auto& { return c.unlearn.beta; })});
    un.push_back({"outer_lr", number_key<double>("unlearn.outer_lr", [](RunConfig& c) -> auto& { return c.unlearn.outer_lr; })});
    un.push_back({"outer_steps", number_key<int>("unlearn.outer_steps", [](RunConfig& c) -> auto& { return c.unlearn.outer_steps; })});
    un.push_back({"inner_samples", number_key<int>("unlearn.inner_samples", [](RunConfig& c) -> auto& { return c.unlearn.inner_samples; })});
    un.push_back({"optimizer", {[](RunConfig& c, const std::string& v) { c.unlearn.optimizer = parse_outer_optimizer(v); },
                                [](const RunConfig& c) { return to_string(c.unlearn.optimizer); }}});
    un.push_back({"dft_size", number_key<std::size_t>("unlearn.dft_size", [](RunConfig& c) -> auto& { return c.unlearn.dft_size; })});
    un.push_back({"threads", number_key<int>("unlearn.threads", [](RunConfig& c) -> auto& { return c.unlearn.threads; })});
    un.push_back({"checkpoint_every", number_key<int>("unlearn.checkpoint_every", [](RunConfig& c) -> auto& { return c.checkpoint_every; })});
    un.push_back({"gamma", number_key<double>("unlearn.gamma", [](RunConfig& c) -> auto& { return c.unlearn.hypergrad.gamma; })});
    un.push_back({"K", number_key<int>("unlearn.K", [](RunConfig& c) -> auto& { return c.unlearn.hypergrad.K; })});
    un.push_back({"iteration_form", {[](RunConfig& c, const std::string& v) { c.unlearn.hypergrad.form = parse_iteration_form(v); },
                                     [](const RunConfig& c) { return to_string(c.unlearn.hypergrad.form); }}});
    un.push_back({"residual_tol", number_key<double>("unlearn.residual_tol", [](RunConfig& c) -> auto& { return c.unlearn.hypergrad.residual_tol; })});
    un.push_back({"hvp_batch", number_key<std::size_t>("unlearn.hvp_batch", [](RunConfig& c) -> auto& { return c.unlearn.hypergrad.hvp_batch; })});
    un.push_back({"lr_choices", {[](RunConfig& c, const std::string& v) { c.unlearn.config_dist.lr_choices = parse_list<double>("unlearn.lr_choices", v); },
                                 [](const RunConfig& c) { return join(c.unlearn.config_dist.lr_choices); }}});
    un.push_back({"step_choices", {[](RunConfig& c, const std::string& v) { c.unlearn.config_dist.step_choices = parse_list<int>("unlearn.step_choices", v); },
                                   [](const RunConfig& c) { return join(c.unlearn.config_dist.step_choices); }}});
    un.push_back({"loss_choices", {[](RunConfig& c, const std::string& v) {
                                     c.unlearn.config_dist.loss_choices.clear();
                                     for (const auto& s : split(v, ',')) c.unlearn.config_dist.loss_choices.push_back(parse_loss_kind(s));
                                   },
                                   [](const RunConfig& c) {
                                     std::string out;
                                     for (auto k : c.unlearn.config_dist.loss_choices) out += (out.empty() ? "" : ",") + to_string(k);
                                     return out;
                                   }}});
    un.push_back({"param_choices", {[](RunConfig& c, const std::string& v) {
                                      c.unlearn.config_dist.param_choices.clear();
                                      for (const auto& s : split(v, ',')) c.unlearn.config_dist.param_choices.push_back(parse_parameterization(s));
                                    },
                                    [](const RunConfig& c) {
                                      std::string out;
                                      for (const auto& p : c.unlearn.config_dist.param_choices) out += (out.empty() ? "" : ",") + to_string(p);
                                      return out;
                                    }}});
    un.push_back({"optimizer_choices", {[](RunConfig& c, const std::string& v) {
                                          c.unlearn.config_dist.optimizer_choices.clear();
                                          for (const auto& s : split(v, ',')) c.unlearn.config_dist.optimizer_choices.push_back(parse_optimizer(s));
                                        },
                                        [](const RunConfig& c) {
                                          std::string out;
                                          for (auto k : c.unlearn.config_dist.optimizer_choices) out += (out.empty() ? "" : ",") + to_string(k);
                                          return out;
                                        }}});
    un.push_back({"sim_batch_size", number_key<std::size_t>("unlearn.sim_batch_size", [](RunConfig& c) -> auto& { return c.unlearn.config_dist.batch_size; })});
    un.push_back({"fixed_config", {[](RunConfig& c, const std::string& v) {
                                     if (v == "none" || v.empty()) c.unlearn.fixed_config.reset();
                                     else c.unlearn.fixed_config = parse_recipe(v, c.unlearn.config_dist.batch_size);
                                   },
                                   [](const RunConfig& c) {
                                     return c.unlearn.fixed_config ? recipe_text(*c.unlearn.fixed_config) : std::string("none");
                                   }}});

    auto& atk = section("attack");
    atk.push_back({"optimizer", {[](RunConfig& c, const std::string& v) { c.attack.optimizer = parse_optimizer(v); },
                                 [](const RunConfig& c) { return to_string(c.attack.optimizer); }}});
    atk.push_back({"lr", number_key<double>("attack.lr", [](RunConfig& c) -> auto& { return c.attack.lr; })});
    atk.push_back({"steps", number_key<int>("attack.steps", [](RunConfig& c) -> auto& { return c.attack.steps; })});
    atk.push_back({"loss", {[](RunConfig& c, const std::string& v) { c.attack.loss_kind = parse_loss_kind(v); },
                            [](const RunConfig& c) { return to_string(c.attack.loss_kind); }}});
    atk.push_back({"parameterization", {[](RunConfig& c, const std::string& v) { c.attack.parameterization = parse_parameterization(v); },
                                        [](const RunConfig& c) { return to_string(c.attack.parameterization); }}});
    atk.push_back({"batch_size", number_key<std::size_t>("attack.batch_size", [](RunConfig& c) -> auto& { return c.attack.batch_size; })});

    auto& ev = section("eval");
    ev.push_back({"n_samples", number_key<std::size_t>("eval.n_samples", [](RunConfig& c) -> auto& { return c.eval.settings.n_samples; })});
    ev.push_back({"radius_stds", number_key<double>("eval.radius_stds", [](RunConfig& c) -> auto& { return c.eval.settings.radius_stds; })});
    ev.push_back({"checkpoints", {[](RunConfig& c, const std::string& v) { c.eval.checkpoints = parse_list<int>("eval.checkpoints", v); },
                                  [](const RunConfig& c) { return join(c.eval.checkpoints); }}});
    ev.push_back({"contamination_ratios", {[](RunConfig& c, const std::string& v) { c.eval.contamination_ratios = parse_list<double>("eval.contamination_ratios", v); },
                                           [](const RunConfig& c) { return join(c.eval.contamination_ratios); }}});
    ev.push_back({"trace_probes", number_key<int>("eval.trace_probes", [](RunConfig& c) -> auto& { return c.eval.trace_probes; })});
    ev.push_back({"trace_batch", number_key<std::size_t>("eval.trace_batch", [](RunConfig& c) -> auto& { return c.eval.trace_batch; })});
    ev.push_back({"gamma_sweep", {[](RunConfig& c, const std::string& v) { c.eval.gamma_sweep = parse_list<double>("eval.gamma_sweep", v); },
                                  [](const RunConfig& c) { return join(c.eval.gamma_sweep); }}});
    return t;
  }();
  return table;
}

}  // namespace

Parameterization parse_parameterization(const std::string& s) {
  if (s == "full") return {false, 4};
  const std::string prefix = "low-rank:";
  if (s.rfind(prefix, 0) == 0) {
    Parameterization p{true, parse_number<int>("parameterization", s.substr(prefix.size()))};
    if (p.rank < 1) throw ConfigError("low-rank rank must be >= 1");
    return p;
  }
  if (s == "low-rank") return {true, 4};
  throw ConfigError("unknown parameterization '" + s + "' (expected full or low-rank:<r>)");
}

void RunConfig::validate() const {
  if (testbed.benign_concepts < 1 || testbed.harmful_concepts < 1) {
    throw ConfigError("need at least one benign and one harmful concept");
  }
  if (!(testbed.mode_std > 0.0)) throw ConfigError("data.mode_std must be positive");
  if (testbed.diffusion_steps < 1) throw ConfigError("schedule.steps must be >= 1");
  if (!(testbed.beta_min > 0.0 && testbed.beta_min <= testbed.beta_max && testbed.beta_max < 1.0)) {
    throw ConfigError("schedule betas must satisfy 0 < beta_min <= beta_max < 1");
  }
  Architecture arch = testbed.arch;
  arch.n_concepts = testbed.benign_concepts + testbed.harmful_concepts;
  arch.diffusion_steps = testbed.diffusion_steps;
  arch.validate();
  if (testbed.objective.batch_size < 1) throw ConfigError("objective.batch_size must be positive");
  if (!(testbed.objective.clamp_max > 0.0)) throw ConfigError("objective.clamp_max must be positive");
  if (!(testbed.objective.prior_weight >= 0.0)) throw ConfigError("objective.prior_weight must be >= 0");
  if (testbed.reference_per_concept < 1) throw ConfigError("objective.reference_per_concept must be positive");
  if (testbed.sizes.harmful_per_concept < 1 || testbed.sizes.heldout_per_concept < 1 ||
      testbed.sizes.finetune_per_concept < 1 || testbed.sizes.train_per_concept < 1 ||
      testbed.sizes.attack_benign < 1) {
    throw ConfigError("data pool sizes must be positive");
  }
  if (pretrain.steps < 0) throw ConfigError("pretrain.steps must be >= 0");
  if (!(pretrain.lr >= 0.0)) throw ConfigError("pretrain.lr must be >= 0");
  if (pretrain.batch_size < 1) throw ConfigError("pretrain.batch_size must be positive");
  unlearn.validate();
  if (checkpoint_every < 0) throw ConfigError("unlearn.checkpoint_every must be >= 0");
  attack.validate();
  if (eval.settings.n_samples < 100) throw ConfigError("eval.n_samples must be >= 100");
  if (!(eval.settings.radius_stds > 0.0)) throw ConfigError("eval.radius_stds must be positive");
  for (std::size_t i = 0; i < eval.checkpoints.size(); ++i) {
    if (eval.checkpoints[i] < 0 || (i > 0 && eval.checkpoints[i] < eval.checkpoints[i - 1])) {
      throw ConfigError("eval.checkpoints must be ascending and non-negative");
    }
  }
  for (double r : eval.contamination_ratios) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("eval.contamination_ratios must lie in [0, 1]");
  }
  for (double g : eval.gamma_sweep) {
    if (!(g > 0.0)) throw ConfigError("eval.gamma_sweep values must be positive");
  }
  if (eval.trace_probes < 1 || eval.trace_batch < 1) throw ConfigError("eval trace settings must be positive");
}

RunConfig parse_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax error: ") + e.what());
  }
  RunConfig c;
  const auto& table = schema();
  for (const auto& [section, body] : tree) {
    auto sit = std::find_if(table.begin(), table.end(), [&](const auto& s) { return s.first == section; });
    if (sit == table.end()) throw ConfigError("unknown config section [" + section + "]");
    if (!body.data().empty()) throw ConfigError("top-level key '" + section + "' outside a section");
    for (const auto& [key, value] : body) {
      auto kit = std::find_if(sit->second.begin(), sit->second.end(), [&](const auto& k) { return k.first == key; });
      if (kit == sit->second.end()) throw ConfigError("unknown config key '" + section + "." + key + "'");
      kit->second.set(c, trim(value.data()));
    }
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const RunConfig& config) {
  std::string out;
  for (const auto& [section, keys] : schema()) {
    if (!out.empty()) out += '\n';
    out += '[' + section + "]\n";
    for (const auto& [key, k] : keys) out += key + " = " + k.get(config) + '\n';
  }
  return out;
}

}  // namespace resalign
