#include "relval/taskdef.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "relval/error.hpp"
#include "relval/rng.hpp"

namespace relval {

RewardDist RewardDist::bernoulli(double high, double p, double low) {
  RewardDist d;
  d.kind = DistKind::bernoulli;
  d.high = high;
  d.p = p;
  d.low = low;
  return d;
}

RewardDist RewardDist::gaussian(double mean, double sd) {
  RewardDist d;
  d.kind = DistKind::gaussian;
  d.mean = mean;
  d.sd = sd;
  return d;
}

double RewardDist::expected_value() const {
  if (kind == DistKind::gaussian) return mean;
  return p * high + (1.0 - p) * low;
}

void RewardDist::validate(std::string_view option_id) const {
  const std::string where = "option '" + std::string(option_id) + "': ";
  if (kind == DistKind::bernoulli) {
    if (!(p >= 0.0 && p <= 1.0)) throw SchemaError(where + "dist.p must lie in [0, 1]");
    if (!(high > low)) throw SchemaError(where + "dist.high must exceed dist.low");
  } else {
    if (!(sd > 0.0)) throw SchemaError(where + "dist.sd must be > 0");
    if (!std::isfinite(mean)) throw SchemaError(where + "dist.mean must be finite");
  }
}

std::string_view role_name(Role r) {
  switch (r) {
    case Role::low: return "L";
    case Role::medium: return "M";
    case Role::high: return "H";
  }
  return "?";
}

Role parse_role(std::string_view s) {
  if (s == "L") return Role::low;
  if (s == "M") return Role::medium;
  if (s == "H") return Role::high;
  throw SchemaError("contexts.members.role: expected L, M or H, got '" + std::string(s) + "'");
}

std::size_t TaskSpec::option_index(std::string_view id) const {
  for (std::size_t i = 0; i < options.size(); ++i)
    if (options[i].id == id) return i;
  throw Error("task " + name + ": unknown option id '" + std::string(id) + "'");
}

std::size_t TaskSpec::context_index_of_option(std::size_t option) const {
  const auto& id = options.at(option).id;
  for (std::size_t c = 0; c < contexts.size(); ++c)
    for (const auto& m : contexts[c].members)
      if (m.option == id) return c;
  throw Error("task " + name + ": option '" + id + "' belongs to no context");
}

std::vector<std::size_t> TaskSpec::context_option_indices(std::size_t context) const {
  std::vector<std::size_t> out;
  for (const auto& m : contexts.at(context).members) out.push_back(option_index(m.option));
  return out;
}

std::size_t TaskSpec::n_transfer_trials() const {
  const std::size_t n = options.size();
  return n * (n - 1) / 2 * static_cast<std::size_t>(transfer_reps);
}

void TaskSpec::validate() const {
  const std::string where = "task '" + name + "': ";
  if (name.empty()) throw SchemaError("task: field 'name' is required");
  if (training_reps < 1) throw SchemaError(where + "training_reps must be >= 1");
  if (transfer_reps != 1 && transfer_reps != 2) throw SchemaError(where + "transfer_reps must be 1 or 2");
  if (currency.decimals < 0 || currency.decimals > 4)
    throw SchemaError(where + "currency.decimals must lie in [0, 4]");
  if (currency.symbol.empty() && currency.unit.empty())
    throw SchemaError(where + "currency needs either 'symbol' or 'unit'");
  const std::size_t n = options.size();
  if (n != 4 && n != 8 && n != 10) throw SchemaError(where + "options must number 4, 8 or 10");

  std::set<std::string> ids;
  for (const auto& o : options) {
    if (o.id.empty()) throw SchemaError(where + "options.id must be non-empty");
    if (!ids.insert(o.id).second) throw SchemaError(where + "options.id '" + o.id + "' is duplicated");
    o.dist.validate(o.id);
  }

  std::map<std::string, int> membership;
  std::set<int> context_ids;
  for (const auto& ctx : contexts) {
    if (!context_ids.insert(ctx.id).second)
      throw SchemaError(where + "contexts.id " + std::to_string(ctx.id) + " is duplicated");
    const auto size = ctx.members.size();
    if (size != 2 && size != 3)
      throw SchemaError(where + "contexts.members: context " + std::to_string(ctx.id) + " must have 2 or 3 members");
    std::set<Role> roles;
    for (const auto& m : ctx.members) {
      if (!ids.count(m.option))
        throw SchemaError(where + "contexts.members.option '" + m.option + "' is not a declared option");
      if (!roles.insert(m.role).second)
        throw SchemaError(where + "contexts.members.role repeated in context " + std::to_string(ctx.id));
      if (++membership[m.option] > 1)
        throw SchemaError(where + "contexts.members: option '" + m.option + "' is assigned to more than one context");
    }
    if (!roles.count(Role::low) || !roles.count(Role::high))
      throw SchemaError(where + "contexts.members.role: context " + std::to_string(ctx.id) + " needs an L and an H member");
    auto ev_of = [&](Role r) {
      for (const auto& m : ctx.members)
        if (m.role == r) return options[option_index(m.option)].dist.expected_value();
      return 0.0;
    };
    const double lo = ev_of(Role::low), hi = ev_of(Role::high);
    if (!(lo < hi))
      throw SchemaError(where + "role order violated in context " + std::to_string(ctx.id) + " (EV of L >= EV of H)");
    if (roles.count(Role::medium)) {
      const double mid = ev_of(Role::medium);
      if (!(lo < mid && mid < hi))
        throw SchemaError(where + "role order violated in context " + std::to_string(ctx.id) + " (need L < M < H)");
    }
  }
  for (const auto& o : options)
    if (!membership.count(o.id))
      throw SchemaError(where + "option '" + o.id + "' belongs to no context");
}

namespace {

template <typename T>
T required(const YAML::Node& node, const std::string& field, const std::string& where) {
  const auto child = node[field];
  if (!child) throw SchemaError(where + "missing field '" + field + "'");
  try {
    return child.as<T>();
  } catch (const YAML::Exception&) {
    throw SchemaError(where + "field '" + field + "' has the wrong type");
  }
}

RewardDist parse_dist(const YAML::Node& node, const std::string& where) {
  if (!node || !node.IsMap()) throw SchemaError(where + "missing field 'dist'");
  const auto kind = required<std::string>(node, "kind", where + "dist: ");
  if (kind == "bernoulli") {
    return RewardDist::bernoulli(required<double>(node, "high", where + "dist: "),
                                 required<double>(node, "p", where + "dist: "),
                                 required<double>(node, "low", where + "dist: "));
  }
  if (kind == "gaussian") {
    return RewardDist::gaussian(required<double>(node, "mean", where + "dist: "),
                                required<double>(node, "sd", where + "dist: "));
  }
  throw SchemaError(where + "dist.kind must be 'bernoulli' or 'gaussian'");
}

TaskSpec parse_task(const YAML::Node& doc) {
  if (!doc.IsMap()) throw SchemaError("task document must be a mapping");
  const auto version = required<int>(doc, "schema_version", "task: ");
  if (version != kTaskSchemaVersion)
    throw SchemaError("task: schema_version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kTaskSchemaVersion) + ")");
  TaskSpec t;
  t.name = required<std::string>(doc, "name", "task: ");
  const std::string where = "task '" + t.name + "': ";

  const auto cur = doc["currency"];
  if (!cur || !cur.IsMap()) throw SchemaError(where + "missing field 'currency'");
  t.currency.label = required<std::string>(cur, "label", where + "currency: ");
  t.currency.symbol = cur["symbol"] ? cur["symbol"].as<std::string>() : "";
  t.currency.unit = cur["unit"] ? cur["unit"].as<std::string>() : "";
  t.currency.unit_plural = cur["unit_plural"] ? cur["unit_plural"].as<std::string>() : t.currency.unit;
  t.currency.decimals = required<int>(cur, "decimals", where + "currency: ");

  t.training_reps = required<int>(doc, "training_reps", where);
  t.transfer_reps = required<int>(doc, "transfer_reps", where);

  const auto opts = doc["options"];
  if (!opts || !opts.IsSequence()) throw SchemaError(where + "missing field 'options'");
  for (const auto& o : opts) {
    Option opt;
    opt.id = required<std::string>(o, "id", where + "options: ");
    opt.dist = parse_dist(o["dist"], where + "option '" + opt.id + "': ");
    t.options.push_back(std::move(opt));
  }

  const auto ctxs = doc["contexts"];
  if (!ctxs || !ctxs.IsSequence()) throw SchemaError(where + "missing field 'contexts'");
  for (const auto& c : ctxs) {
    TrainingContext ctx;
    ctx.id = required<int>(c, "id", where + "contexts: ");
    const auto members = c["members"];
    if (!members || !members.IsSequence()) throw SchemaError(where + "contexts: missing field 'members'");
    for (const auto& m : members) {
      ContextMember cm;
      cm.option = required<std::string>(m, "option", where + "contexts.members: ");
      cm.role = parse_role(required<std::string>(m, "role", where + "contexts.members: "));
      ctx.members.push_back(std::move(cm));
    }
    t.contexts.push_back(std::move(ctx));
  }
  t.validate();
  return t;
}

}  // namespace

std::vector<TaskSpec> parse_task_catalog(const std::string& text) {
  std::vector<YAML::Node> docs;
  try {
    docs = YAML::LoadAll(text);
  } catch (const YAML::Exception& e) {
    throw SchemaError(std::string("task catalog is not valid YAML: ") + e.what());
  }
  std::vector<TaskSpec> out;
  std::set<std::string> names;
  for (const auto& doc : docs) {
    if (doc.IsNull()) continue;
    auto task = parse_task(doc);
    if (!names.insert(task.name).second) throw SchemaError("task '" + task.name + "' defined twice");
    out.push_back(std::move(task));
  }
  if (out.empty()) throw SchemaError("task catalog holds no tasks");
  return out;
}

std::vector<TaskSpec> load_task_catalog(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open task catalog " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_task_catalog(ss.str());
}

const TaskSpec& find_task(const std::vector<TaskSpec>& catalog, std::string_view name) {
  for (const auto& t : catalog)
    if (t.name == name) return t;
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

double round_to_decimals(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(value * scale) / scale;
}

RewardSchedule build_reward_schedule(const TaskSpec& task, std::uint64_t seed, RoundingPolicy policy) {
  RewardSchedule s;
  s.seed = seed;
  const auto reps = static_cast<std::size_t>(task.training_reps);
  for (std::size_t i = 0; i < task.options.size(); ++i) {
    const auto& opt = task.options[i];
    Rng rng(derive_seed(seed, i));
    std::vector<double> draws(reps);
    if (opt.dist.kind == DistKind::bernoulli) {
      const double target = opt.dist.p * static_cast<double>(reps);
      const double rounded = std::round(target);
      if (std::abs(target - rounded) > 1e-9 && policy == RoundingPolicy::exact)
        throw Error("task " + task.name + ", option " + opt.id + ": p * training_reps = " + std::to_string(target) +
                    " is not an integer; pass an explicit rounding policy");
      const auto n_high = static_cast<std::size_t>(rounded);
      for (std::size_t k = 0; k < reps; ++k) draws[k] = k < n_high ? opt.dist.high : opt.dist.low;
      rng.shuffle(std::span<double>(draws));
    } else {
      for (auto& d : draws) d = round_to_decimals(rng.normal(opt.dist.mean, opt.dist.sd), task.currency.decimals);
    }
    s.outcomes.push_back(std::move(draws));
  }
  return s;
}

std::vector<std::size_t> training_sequence(const TaskSpec& task, std::uint64_t seed) {
  std::vector<std::size_t> seq;
  seq.reserve(task.n_training_trials());
  for (std::size_t c = 0; c < task.contexts.size(); ++c)
    for (int r = 0; r < task.training_reps; ++r) seq.push_back(c);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(seq));
  return seq;
}

std::vector<OptionPair> enumerate_transfer_pairs(const TaskSpec& task) {
  std::vector<OptionPair> pairs;
  const std::size_t n = task.options.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      for (int r = 0; r < task.transfer_reps; ++r) pairs.emplace_back(i, j);
  return pairs;
}

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Upper tail P(N(mean, sd) > t).
double gaussian_above(const RewardDist& g, double t) { return normal_cdf((g.mean - t) / g.sd); }

}  // namespace

double exceedance_probability(const RewardDist& x, const RewardDist& y) {
  using K = DistKind;
  if (x.kind == K::gaussian && y.kind == K::gaussian)
    return normal_cdf((x.mean - y.mean) / std::sqrt(x.sd * x.sd + y.sd * y.sd));
  if (x.kind == K::bernoulli && y.kind == K::bernoulli) {
    const std::pair<double, double> xs[] = {{x.high, x.p}, {x.low, 1.0 - x.p}};
    const std::pair<double, double> ys[] = {{y.high, y.p}, {y.low, 1.0 - y.p}};
    double total = 0.0;
    for (const auto& [xv, xp] : xs)
      for (const auto& [yv, yp] : ys)
        if (xv > yv) total += xp * yp;
    return total;
  }
  if (x.kind == K::gaussian)  // P(X > b) summed over y's support
    return y.p * gaussian_above(x, y.high) + (1.0 - y.p) * gaussian_above(x, y.low);
  // P(a > Y) = 1 - P(Y > a)
  return x.p * (1.0 - gaussian_above(y, x.high)) + (1.0 - x.p) * (1.0 - gaussian_above(y, x.low));
}

std::vector<double> relative_value_labels(const TaskSpec& task) {
  std::vector<double> scores(task.options.size(), 0.0);
  for (std::size_t c = 0; c < task.contexts.size(); ++c) {
    const auto members = task.context_option_indices(c);
    for (auto i : members) {
      double sum = 0.0;
      for (auto j : members)
        if (j != i) sum += exceedance_probability(task.options[i].dist, task.options[j].dist);
      scores[i] = sum / static_cast<double>(members.size() - 1);
    }
  }
  return scores;
}

}  // namespace relval
