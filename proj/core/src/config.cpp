#include "jointseq/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "jointseq/error.hpp"

namespace jointseq {
namespace {

const std::vector<ConfigKey> kSchema = {
    {"model.d_model", "64", "width of every layer"},
    {"model.n_heads", "4", "attention heads; must divide d_model"},
    {"model.n_enc", "2", "encoder layers"},
    {"model.n_dec", "2", "decoder layers"},
    {"model.d_ff", "256", "feed-forward width"},
    {"model.max_length", "1024", "longest encoder or decoder sequence"},
    {"model.rel_clip", "32", "relative-position clipping distance"},
    {"data.n_loc", "100", "location bins per axis"},
    {"data.train_size", "2000", "training samples per task"},
    {"data.val_size", "200", "validation samples per task"},
    {"data.test_size", "200", "test samples per task"},
    {"data.seed", "0", "dataset seed"},
    {"data.shot_task", "", "task trained with only shot_k samples (empty: none)"},
    {"data.shot_k", "0", "training samples of shot_task; 0 means zero-shot"},
    {"train.tasks", "all", "comma-separated tasks or 'all'"},
    {"train.variant", "tep", "prompt variant"},
    {"train.n_per_task", "1", "samples per task per step"},
    {"train.total_steps", "1000", "optimizer steps"},
    {"train.peak_lr", "1e-4", "peak learning rate"},
    {"train.warmup_ratio", "0.01", "fraction of steps spent warming up"},
    {"train.beta1", "0.9", "AdamW beta1"},
    {"train.beta2", "0.999", "AdamW beta2"},
    {"train.eps", "1e-8", "AdamW epsilon"},
    {"train.weight_decay", "0.01", "decoupled weight decay"},
    {"train.dropout", "0.1", "dropout rate"},
    {"train.label_smoothing", "0.1", "label smoothing factor"},
    {"train.clip_norm", "1.0", "global gradient-norm clip; 0 disables"},
    {"train.aggregate", "mean", "combine task gradients by 'mean' or 'sum'"},
    {"train.seed", "0", "initialisation, sampling and dropout seed"},
    {"train.checkpoint_every", "0", "steps between checkpoints; 0 keeps only the final one"},
    {"eval.split", "val", "split evaluated after training"},
    {"eval.tasks", "", "tasks to evaluate (empty: trained tasks plus shot_task)"},
    {"eval.variant", "", "prompt variant at evaluation (empty: train.variant)"},
    {"eval.max_len", "128", "generation limit in tokens"},
    {"run.out_dir", "runs", "parent directory of run directories"},
    {"ablate.variants", "onehot,basep,tep", "variants of the ablation grid"},
    {"ablate.task_counts", "7", "task-count ladder entries (1, 3, 5, 7)"},
    {"ablate.seeds", "0,1,2", "seeds of the ablation grid"},
};

[[noreturn]] void fail(std::string_view key, const std::string& msg, int line = 0) {
  std::string where = std::string(key);
  if (line > 0) where += " (line " + std::to_string(line) + ")";
  throw Error(ErrorCode::kConfigError, where + ": " + msg);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

bool in_schema(std::string_view key) {
  for (const auto& k : kSchema) {
    if (k.name == key) return true;
  }
  return false;
}

class Reader {
 public:
  Reader(const std::map<std::string, std::string>& values, const std::map<std::string, int>& lines)
      : v_(values), lines_(lines) {}

  int line(std::string_view key) const {
    auto it = lines_.find(std::string(key));
    return it == lines_.end() ? 0 : it->second;
  }
  [[noreturn]] void fail(std::string_view key, const std::string& msg) const {
    ::jointseq::fail(key, msg, line(key));
  }

  const std::string& str(std::string_view key) const { return v_.at(std::string(key)); }

  std::uint64_t u64(std::string_view key) const {
    const std::string& s = str(key);
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc() || p != s.data() + s.size()) {
      fail(key, "expected a non-negative integer, got '" + s + "'");
    }
    return out;
  }
  std::size_t size(std::string_view key) const { return static_cast<std::size_t>(u64(key)); }

  double real(std::string_view key) const {
    const std::string& s = str(key);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) fail(key, "expected a number, got '" + s + "'");
    return v;
  }

  std::vector<Task> tasks(std::string_view key) const {
    const std::string& s = str(key);
    if (s == "all") return {kAllTasks.begin(), kAllTasks.end()};
    std::vector<Task> out;
    for (const auto& name : split_list(s)) {
      auto t = try_parse_task(name);
      if (!t) fail(key, "unknown task '" + name + "'");
      for (Task seen : out) {
        if (seen == *t) fail(key, "duplicate task '" + name + "'");
      }
      out.push_back(*t);
    }
    return out;
  }

  PromptVariant variant(std::string_view key) const {
    try {
      return PromptVariant::parse(str(key));
    } catch (const Error& e) {
      fail(key, e.what());
    }
  }

 private:
  const std::map<std::string, std::string>& v_;
  const std::map<std::string, int>& lines_;
};

void apply_line(std::map<std::string, std::string>& values, std::map<std::string, int>& lines,
                std::string_view raw, int line) {
  std::string s = trim(raw);
  if (s.empty() || s[0] == '#') return;
  const auto eq = s.find('=');
  if (eq == std::string::npos) fail(s, "expected 'key = value'", line);
  const std::string key = trim(std::string_view(s).substr(0, eq));
  const std::string value = trim(std::string_view(s).substr(eq + 1));
  if (!in_schema(key)) fail(key, "unknown key", line);
  values[key] = value;
  lines[key] = line;
}

RunConfig build(const std::map<std::string, std::string>& values,
                const std::map<std::string, int>& lines) {
  Reader r(values, lines);
  RunConfig c;
  c.n_loc = static_cast<int>(r.u64("data.n_loc"));
  if (c.n_loc < 2) r.fail("data.n_loc", "need at least two bins");
  c.model.d_model = r.size("model.d_model");
  c.model.n_heads = r.size("model.n_heads");
  c.model.n_enc = r.size("model.n_enc");
  c.model.n_dec = r.size("model.n_dec");
  c.model.d_ff = r.size("model.d_ff");
  c.model.max_length = r.size("model.max_length");
  c.model.rel_clip = static_cast<int>(r.u64("model.rel_clip"));
  c.model.vocab_size = static_cast<std::size_t>(UnifiedVocab(c.n_loc).total_size());

  c.train_size = r.size("data.train_size");
  c.val_size = r.size("data.val_size");
  c.test_size = r.size("data.test_size");
  c.data_seed = r.u64("data.seed");
  if (!r.str("data.shot_task").empty()) {
    auto t = try_parse_task(r.str("data.shot_task"));
    if (!t) r.fail("data.shot_task", "unknown task '" + r.str("data.shot_task") + "'");
    c.shot_task = *t;
  }
  c.shot_k = r.size("data.shot_k");

  TrainConfig& t = c.train;
  t.tasks = r.tasks("train.tasks");
  t.variant = r.variant("train.variant");
  t.n_per_task = r.size("train.n_per_task");
  t.total_steps = r.size("train.total_steps");
  t.peak_lr = r.real("train.peak_lr");
  t.warmup_ratio = r.real("train.warmup_ratio");
  t.beta1 = r.real("train.beta1");
  t.beta2 = r.real("train.beta2");
  t.eps_opt = r.real("train.eps");
  t.weight_decay = r.real("train.weight_decay");
  t.dropout = r.real("train.dropout");
  t.label_smoothing = r.real("train.label_smoothing");
  t.clip_norm = r.real("train.clip_norm");
  const std::string& agg = r.str("train.aggregate");
  if (agg != "mean" && agg != "sum") r.fail("train.aggregate", "expected 'mean' or 'sum'");
  t.mean_over_tasks = agg == "mean";
  t.seed = r.u64("train.seed");
  c.checkpoint_every = r.size("train.checkpoint_every");
  c.model.dropout = t.dropout;

  try {
    c.eval_split = parse_split(r.str("eval.split"));
  } catch (const Error& e) {
    r.fail("eval.split", e.what());
  }
  if (!r.str("eval.tasks").empty()) c.eval_tasks = r.tasks("eval.tasks");
  if (!r.str("eval.variant").empty()) c.eval_variant = r.variant("eval.variant");
  c.eval_max_len = r.size("eval.max_len");
  if (c.eval_max_len == 0) r.fail("eval.max_len", "must be positive");
  c.out_dir = r.str("run.out_dir");

  for (const auto& v : split_list(r.str("ablate.variants"))) {
    try {
      c.ablate_variants.push_back(PromptVariant::parse(v));
    } catch (const Error& e) {
      r.fail("ablate.variants", e.what());
    }
  }
  for (const auto& n : split_list(r.str("ablate.task_counts"))) {
    if (n != "1" && n != "3" && n != "5" && n != "7") {
      r.fail("ablate.task_counts", "entries must be 1, 3, 5 or 7, got '" + n + "'");
    }
    c.ablate_task_counts.push_back(std::stoi(n));
  }
  for (const auto& s : split_list(r.str("ablate.seeds"))) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) r.fail("ablate.seeds", "bad seed '" + s + "'");
    c.ablate_seeds.push_back(v);
  }

  // Field-level validation of the nested structures.
  try {
    c.model.validate();
  } catch (const Error& e) {
    r.fail("model", e.what());
  }
  if (c.shot_task) {
    // The shot task is trained only through the shot protocol.
    std::vector<Task> kept;
    for (Task task : t.tasks) {
      if (task != *c.shot_task) kept.push_back(task);
    }
    if (kept.empty() && c.shot_k == 0) r.fail("data.shot_task", "no task left to train");
  }
  if (c.training_tasks().empty()) r.fail("train.tasks", "at least one task is required");
  TrainConfig check = t;
  check.tasks = c.training_tasks();
  check.validate();
  return c;
}

std::map<std::string, std::string> defaults() {
  std::map<std::string, std::string> v;
  for (const auto& k : kSchema) v[std::string(k.name)] = std::string(k.default_value);
  return v;
}

std::string task_list(const std::vector<Task>& tasks) {
  if (tasks.size() == kNumTasks) {
    bool canonical = true;
    for (std::size_t i = 0; i < tasks.size(); ++i) canonical = canonical && tasks[i] == kAllTasks[i];
    if (canonical) return "all";
  }
  std::string out;
  for (Task t : tasks) {
    if (!out.empty()) out += ",";
    out += task_name(t);
  }
  return out;
}

std::string real_text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::vector<Task> RunConfig::training_tasks() const {
  std::vector<Task> out;
  for (Task t : train.tasks) {
    if (!shot_task || t != *shot_task) out.push_back(t);
  }
  if (shot_task && shot_k > 0) out.push_back(*shot_task);
  // Keep the fixed task order for accumulation.
  std::vector<Task> ordered;
  for (Task t : kAllTasks) {
    for (Task u : out) {
      if (u == t) ordered.push_back(t);
    }
  }
  return ordered;
}

std::vector<Task> RunConfig::evaluation_tasks() const {
  if (!eval_tasks.empty()) return eval_tasks;
  std::vector<Task> out = training_tasks();
  if (shot_task) {
    bool present = false;
    for (Task t : out) present = present || t == *shot_task;
    if (!present) out.push_back(*shot_task);
  }
  std::vector<Task> ordered;
  for (Task t : kAllTasks) {
    for (Task u : out) {
      if (u == t) ordered.push_back(t);
    }
  }
  return ordered;
}

PromptVariant RunConfig::evaluation_variant() const {
  return eval_variant.value_or(train.variant);
}

const std::vector<ConfigKey>& config_schema() { return kSchema; }

RunConfig parse_config(std::string_view text) { return parse_config(text, {}); }

RunConfig parse_config(std::string_view text, const std::vector<std::string>& overrides) {
  auto values = defaults();
  std::istringstream in{std::string(text)};
  std::string line;
  int n = 0;
  std::map<std::string, int> lines;
  while (std::getline(in, line)) apply_line(values, lines, line, ++n);
  for (const auto& o : overrides) apply_line(values, lines, o, 0);
  return build(values, lines);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfigError, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string resolved_config_text(const RunConfig& c) {
  std::map<std::string, std::string> v;
  v["model.d_model"] = std::to_string(c.model.d_model);
  v["model.n_heads"] = std::to_string(c.model.n_heads);
  v["model.n_enc"] = std::to_string(c.model.n_enc);
  v["model.n_dec"] = std::to_string(c.model.n_dec);
  v["model.d_ff"] = std::to_string(c.model.d_ff);
  v["model.max_length"] = std::to_string(c.model.max_length);
  v["model.rel_clip"] = std::to_string(c.model.rel_clip);
  v["data.n_loc"] = std::to_string(c.n_loc);
  v["data.train_size"] = std::to_string(c.train_size);
  v["data.val_size"] = std::to_string(c.val_size);
  v["data.test_size"] = std::to_string(c.test_size);
  v["data.seed"] = std::to_string(c.data_seed);
  v["data.shot_task"] = c.shot_task ? std::string(task_name(*c.shot_task)) : "";
  v["data.shot_k"] = std::to_string(c.shot_k);
  v["train.tasks"] = task_list(c.train.tasks);
  v["train.variant"] = c.train.variant.name();
  v["train.n_per_task"] = std::to_string(c.train.n_per_task);
  v["train.total_steps"] = std::to_string(c.train.total_steps);
  v["train.peak_lr"] = real_text(c.train.peak_lr);
  v["train.warmup_ratio"] = real_text(c.train.warmup_ratio);
  v["train.beta1"] = real_text(c.train.beta1);
  v["train.beta2"] = real_text(c.train.beta2);
  v["train.eps"] = real_text(c.train.eps_opt);
  v["train.weight_decay"] = real_text(c.train.weight_decay);
  v["train.dropout"] = real_text(c.train.dropout);
  v["train.label_smoothing"] = real_text(c.train.label_smoothing);
  v["train.clip_norm"] = real_text(c.train.clip_norm);
  v["train.aggregate"] = c.train.mean_over_tasks ? "mean" : "sum";
  v["train.seed"] = std::to_string(c.train.seed);
  v["train.checkpoint_every"] = std::to_string(c.checkpoint_every);
  v["eval.split"] = std::string(split_name(c.eval_split));
  v["eval.tasks"] = c.eval_tasks.empty() ? "" : task_list(c.eval_tasks);
  v["eval.variant"] = c.eval_variant ? c.eval_variant->name() : "";
  v["eval.max_len"] = std::to_string(c.eval_max_len);
  v["run.out_dir"] = c.out_dir.string();
  std::string vars, counts, seeds;
  for (const auto& x : c.ablate_variants) vars += (vars.empty() ? "" : ",") + x.name();
  for (int x : c.ablate_task_counts) counts += (counts.empty() ? "" : ",") + std::to_string(x);
  for (auto x : c.ablate_seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(x);
  v["ablate.variants"] = vars;
  v["ablate.task_counts"] = counts;
  v["ablate.seeds"] = seeds;

  std::string out;
  for (const auto& k : kSchema) {
    out += std::string(k.name) + " = " + v.at(std::string(k.name)) + "\n";
  }
  return out;
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  std::istringstream in(resolved_config_text(config));
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("train.seed ", 0) == 0 || line.rfind("run.out_dir ", 0) == 0 ||
        line.rfind("ablate.", 0) == 0) {
      continue;
    }
    for (unsigned char ch : line) {
      h ^= ch;
      h *= 0x100000001b3ull;
    }
    h ^= '\n';
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf, 12);
}

std::vector<std::vector<Task>> task_ladder(int n_tasks) {
  using T = Task;
  switch (n_tasks) {
    case 1: return {{T::kGrounding}, {T::kEntailment}, {T::kCaption}};
    case 3: return {{T::kCaption, T::kGrounding, T::kEntailment}};
    case 5: return {{T::kCaption, T::kGrounding, T::kEntailment, T::kVqa, T::kDetection}};
    case 7: return {{kAllTasks.begin(), kAllTasks.end()}};
    default:
      throw Error(ErrorCode::kConfigError, "task count must be 1, 3, 5 or 7");
  }
}

}  // namespace jointseq
