#include "jointseq/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "jointseq/analysis.hpp"
#include "jointseq/checkpoint.hpp"
#include "jointseq/decode.hpp"
#include "jointseq/error.hpp"
#include "jointseq/rng.hpp"
#include "jointseq/trainer.hpp"

namespace jointseq {
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string real_text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  // Write then rename so a reader never sees half a file.
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + tmp.string());
    out << text;
    if (!out) throw Error(ErrorCode::kIoError, "write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool scored_by_accuracy(Task t) {
  return t == Task::kEntailment || t == Task::kVqa || t == Task::kClassification;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::vector<Detection> gold_detections(const TaskSample& s) {
  std::vector<Detection> out;
  for (std::size_t i = 0; i < s.gold_boxes.size(); ++i) {
    out.push_back(Detection{s.gold_boxes[i], s.gold_labels.at(i)});
  }
  return out;
}

PredictionRecord run_one(const ModelParams& params, const UnifiedVocab& vocab,
                         const PromptVariant& variant, const TaskSample& sample,
                         std::size_t index, std::size_t max_len) {
  const PreparedSample prepared = prepare_sample(vocab, variant, sample);
  const EncoderInput input = assemble_encoder_input(prepared.prompt, prepared.sample,
                                                    params.hyper().d_model,
                                                    params.hyper().max_length);
  const auto constraint = constraint_for(sample.task, vocab);
  const Generation gen = generate(params, input, constraint.get(), max_len);

  PredictionRecord r;
  r.task = sample.task;
  r.index = index;
  r.seed = sample.seed;
  r.tokens = gen.tokens;
  r.prediction = vocab.describe(gen.tokens);
  // Box tasks keep the referring text in target_text; dump the gold tokens instead.
  const bool boxes = sample.task == Task::kGrounding || sample.task == Task::kDetection;
  r.target = boxes ? vocab.describe(sample.target) : sample.target_text;
  r.ended = gen.ended;
  if (scored_by_accuracy(sample.task)) r.correct = r.prediction == r.target;
  if (sample.task == Task::kGrounding) {
    const auto box = parse_box(vocab, gen.tokens);
    r.iou = box ? iou(*box, sample.gold_boxes.at(0)) : 0.0;
    r.correct = grounding_correct(vocab, gen.tokens, sample.gold_boxes.at(0));
  }
  return r;
}

}  // namespace

std::string params_fingerprint(const ModelParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const Tensor& t : params.tensors()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
    for (std::size_t i = 0; i < t.size() * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  }
  return hex64(h);
}

MetricReport score_predictions(const UnifiedVocab& vocab,
                               const std::vector<PredictionRecord>& records) {
  MetricReport report;
  for (Task task : kAllTasks) {
    std::vector<const PredictionRecord*> rs;
    for (const auto& r : records) {
      if (r.task == task) rs.push_back(&r);
    }
    if (rs.empty()) continue;
    auto& m = report.values[std::string(task_name(task))];
    report.counts[std::string(task_name(task))] = rs.size();

    if (scored_by_accuracy(task) || task == Task::kGrounding) {
      double hits = 0.0;
      for (const auto* r : rs) hits += r->correct.value_or(false) ? 1.0 : 0.0;
      m["accuracy"] = hits / static_cast<double>(rs.size());
    }
    if (task == Task::kGrounding) {
      std::vector<double> ious;
      for (const auto* r : rs) ious.push_back(r->iou.value_or(0.0));
      m["mean_iou"] = mean(ious);
    }
    if (task == Task::kCaption || task == Task::kSummarization) {
      std::vector<std::string> cands;
      std::vector<std::vector<std::string>> refs;
      std::vector<double> r1, r2, rl;
      for (const auto* r : rs) {
        cands.push_back(r->prediction);
        refs.push_back({r->target});
        r1.push_back(rouge_n(r->prediction, r->target, 1));
        r2.push_back(rouge_n(r->prediction, r->target, 2));
        rl.push_back(rouge_l(r->prediction, r->target));
      }
      m["bleu4"] = corpus_bleu4(cands, refs);
      m["rouge_1"] = mean(r1);
      m["rouge_2"] = mean(r2);
      m["rouge_l"] = mean(rl);
      if (task == Task::kCaption) m["cider"] = cider_lite(cands, refs);
    }
    if (task == Task::kDetection) {
      std::vector<std::vector<Detection>> preds, gold;
      for (const auto* r : rs) {
        preds.push_back(parse_detections(vocab, r->tokens));
        gold.push_back(gold_detections(make_sample(vocab, task, r->seed)));
      }
      const DetectionScores d = map_lite(preds, gold);
      m["map"] = d.map;
      m["mar"] = d.mar;
    }
    double ended = 0.0;
    for (const auto* r : rs) ended += r->ended ? 1.0 : 0.0;
    m["ended_rate"] = ended / static_cast<double>(rs.size());
  }
  return report;
}

EvalOutput evaluate(const ModelParams& params, const UnifiedVocab& vocab,
                    const EvalRequest& request, std::ostream* progress) {
  EvalOutput out;
  for (Task task : request.tasks) {
    const auto samples = make_split(vocab, task, request.split, request.n, request.data_seed);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      out.predictions.push_back(
          run_one(params, vocab, request.variant, samples[i], i, request.max_len));
    }
    if (progress) *progress << "eval " << task_name(task) << ": " << samples.size() << " samples\n";
  }
  out.report = score_predictions(vocab, out.predictions);
  out.report.fingerprint = params_fingerprint(params) + "/" + request.variant.name() + "/" +
                           std::string(split_name(request.split)) + "/" +
                           std::to_string(request.n) + "/" + std::to_string(request.data_seed);
  return out;
}

std::string prediction_to_json(const PredictionRecord& r) {
  json j;
  j["task"] = task_name(r.task);
  j["index"] = r.index;
  j["seed"] = r.seed;
  j["tokens"] = r.tokens;
  j["prediction"] = r.prediction;
  j["target"] = r.target;
  j["ended"] = r.ended;
  if (r.correct) j["correct"] = *r.correct;
  if (r.iou) j["iou"] = *r.iou;
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

std::string eval_stem(const PromptVariant& variant, Split split) {
  return "eval-" + variant.name() + "-" + std::string(split_name(split));
}

EvalFiles write_eval_outputs(const fs::path& dir, const std::string& stem,
                             const EvalOutput& output, const PromptVariant& variant,
                             Split split, std::uint64_t seed) {
  fs::create_directories(dir);
  EvalFiles files{dir / (stem + ".json"), dir / (stem + ".csv"),
                  dir / (stem + ".predictions.jsonl")};
  write_file(files.json, output.report.to_json() + "\n");

  std::string csv = "task,variant,seed,split,n,primary_metric,primary_value,metrics\n";
  for (Task task : kAllTasks) {
    const std::string name(task_name(task));
    auto it = output.report.values.find(name);
    if (it == output.report.values.end()) continue;
    std::string all;
    for (const auto& [k, v] : it->second) all += (all.empty() ? "" : ";") + k + "=" + real_text(v);
    const std::string primary(primary_metric(task));
    csv += name + "," + variant.name() + "," + std::to_string(seed) + "," +
           std::string(split_name(split)) + "," + std::to_string(output.report.counts.at(name)) +
           "," + primary + "," + real_text(it->second.at(primary)) + "," + all + "\n";
  }
  write_file(files.csv, csv);

  std::string lines;
  for (const auto& r : output.predictions) lines += prediction_to_json(r) + "\n";
  write_file(files.predictions, lines);
  return files;
}

fs::path run_directory(const RunConfig& config) {
  return config.out_dir / (config_hash(config) + "-s" + std::to_string(config.train.seed));
}

TrainOutcome cmd_train(const RunConfig& config, bool force, std::ostream* progress) {
  const fs::path dir = run_directory(config);
  const std::string resolved = resolved_config_text(config);
  const fs::path report_path = dir / "metrics.json";
  TrainOutcome outcome{dir, false, {}};

  if (!force && fs::exists(report_path) && fs::exists(dir / "config.txt") &&
      read_file(dir / "config.txt") == resolved) {
    outcome.reused = true;
    outcome.report = MetricReport::from_json(read_file(report_path));
    if (progress) *progress << "reusing completed run " << dir.string() << "\n";
    return outcome;
  }
  fs::create_directories(dir);
  fs::remove(report_path);
  write_file(dir / "config.txt", resolved);

  const UnifiedVocab vocab(config.n_loc);
  TrainConfig train = config.train;
  train.tasks = config.training_tasks();
  train.validate();

  // Training data, one pool per active task.
  std::vector<std::vector<PreparedSample>> pools;
  std::vector<std::size_t> sizes;
  for (Task task : train.tasks) {
    const std::size_t n =
        (config.shot_task && task == *config.shot_task) ? config.shot_k : config.train_size;
    std::vector<PreparedSample> pool;
    for (auto& s : make_split(vocab, task, Split::kTrain, n, config.data_seed)) {
      pool.push_back(prepare_sample(vocab, train.variant, std::move(s)));
    }
    sizes.push_back(pool.size());
    pools.push_back(std::move(pool));
  }

  ModelParams params = init_params(config.model, train.seed);
  OptimizerState state = OptimizerState::zeros_like(params);
  BalancedSampler sampler(sizes, derive_seed(train.seed, 0x5a3b1e00));

  json extra;
  extra["config_hash"] = config_hash(config);
  extra["variant"] = train.variant.name();
  std::vector<std::string> task_names;
  for (Task t : train.tasks) task_names.emplace_back(task_name(t));
  extra["tasks"] = task_names;
  const std::string extra_text = extra.dump();

  std::string log = "step,lr";
  for (Task t : train.tasks) log += ",loss_" + std::string(task_name(t));
  log += ",aggregate,grad_norm,wall_s\n";
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t step = 0; step < train.total_steps; ++step) {
    const auto idx = sampler.next(train.n_per_task);
    Batch batch(train.tasks.size());
    for (std::size_t k = 0; k < train.tasks.size(); ++k) {
      for (std::size_t i : idx[k]) batch[k].push_back(&pools[k][i]);
    }
    const StepResult res = train_step(params, state, batch, train, step);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log += std::to_string(step) + "," + real_text(res.lr);
    for (double l : res.task_losses) log += "," + real_text(l);
    log += "," + real_text(res.aggregate_loss) + "," + real_text(res.grad_norm) + "," +
           real_text(wall) + "\n";
    if (progress && (step % 50 == 0 || step + 1 == train.total_steps)) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "step %zu/%zu loss %.4f lr %.3g %.0fs\n", step,
                    train.total_steps, res.aggregate_loss, res.lr, wall);
      *progress << buf << std::flush;
    }
    if (config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 &&
        step + 1 < train.total_steps) {
      save_checkpoint(dir / ("ckpt-" + std::to_string(step + 1) + ".bin"), params, vocab,
                      CheckpointMeta{step + 1, train.seed, extra_text});
      write_file(dir / "train_log.csv", log);
    }
  }
  write_file(dir / "train_log.csv", log);
  save_checkpoint(dir / "final.bin", params, vocab,
                  CheckpointMeta{train.total_steps, train.seed, extra_text});

  EvalRequest req;
  req.tasks = config.evaluation_tasks();
  req.variant = config.evaluation_variant();
  req.split = config.eval_split;
  req.n = config.eval_split == Split::kTest ? config.test_size : config.val_size;
  req.data_seed = config.data_seed;
  req.max_len = config.eval_max_len;
  const double train_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EvalOutput out = evaluate(params, vocab, req, progress);
  const double total_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_file(dir / "timing.json",
             json{{"train_s", train_s}, {"eval_s", total_s - train_s}}.dump() + "\n");
  write_eval_outputs(dir, "metrics", out, req.variant, req.split, train.seed);
  outcome.report = std::move(out.report);
  return outcome;
}

EvalOutput cmd_eval(const fs::path& checkpoint, const EvalRequest& request,
                    const fs::path& out_dir, std::ostream* progress) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  EvalOutput out = evaluate(ck.params, ck.vocab, request, progress);
  write_eval_outputs(out_dir, eval_stem(request.variant, request.split), out, request.variant,
                     request.split, ck.meta.seed);
  return out;
}

std::vector<AblationCell> ablation_grid(const RunConfig& config) {
  std::vector<AblationCell> cells;
  const auto variants = config.ablate_variants.empty()
                            ? std::vector<PromptVariant>{config.train.variant}
                            : config.ablate_variants;
  const auto seeds = config.ablate_seeds.empty() ? std::vector<std::uint64_t>{config.train.seed}
                                                 : config.ablate_seeds;
  std::vector<std::vector<Task>> sets;
  if (config.ablate_task_counts.empty()) {
    sets.push_back(config.train.tasks);
  } else {
    for (int n : config.ablate_task_counts) {
      for (auto& s : task_ladder(n)) sets.push_back(std::move(s));
    }
  }
  for (const auto& v : variants) {
    for (const auto& tasks : sets) {
      for (std::uint64_t seed : seeds) {
        AblationCell cell{v, tasks, seed, config};
        cell.config.train.variant = v;
        cell.config.train.tasks = tasks;
        cell.config.train.seed = seed;
        // Evaluation follows the cell, not the parent config.
        cell.config.eval_variant.reset();
        cell.config.eval_tasks.clear();
        if (cell.config.training_tasks().empty()) continue;
        cells.push_back(std::move(cell));
      }
    }
  }
  return cells;
}

std::string ablation_csv(const std::vector<AblationCell>& cells,
                         const std::vector<TrainOutcome>& outcomes) {
  std::string csv = "variant,n_tasks,tasks,seed,shot_task,shot_k";
  for (Task t : kAllTasks) {
    csv += "," + std::string(task_name(t)) + "_" + std::string(primary_metric(t));
  }
  csv += ",run_dir\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const AblationCell& c = cells[i];
    std::string tasks;
    for (Task t : c.tasks) tasks += (tasks.empty() ? "" : " ") + std::string(task_name(t));
    csv += c.variant.name() + "," + std::to_string(c.tasks.size()) + "," + tasks + "," +
           std::to_string(c.seed) + "," +
           (c.config.shot_task ? std::string(task_name(*c.config.shot_task)) : "") + "," +
           (c.config.shot_task ? std::to_string(c.config.shot_k) : "");
    const MetricReport& r = outcomes.at(i).report;
    for (Task t : kAllTasks) {
      csv += ",";
      auto it = r.values.find(std::string(task_name(t)));
      if (it != r.values.end()) {
        auto m = it->second.find(std::string(primary_metric(t)));
        if (m != it->second.end()) csv += real_text(m->second);
      }
    }
    csv += "," + outcomes.at(i).run_dir.string() + "\n";
  }
  return csv;
}

AblationResult cmd_ablate(const RunConfig& config, bool force, std::ostream* progress) {
  AblationResult result;
  result.cells = ablation_grid(config);
  for (const auto& cell : result.cells) {
    if (progress) {
      *progress << "cell " << result.outcomes.size() + 1 << "/" << result.cells.size() << ": "
                << cell.variant.name() << " x " << cell.tasks.size() << " tasks, seed "
                << cell.seed << "\n";
    }
    result.outcomes.push_back(cmd_train(cell.config, force, progress));
  }
  fs::create_directories(config.out_dir);
  result.csv = config.out_dir / ("ablation-" + config_hash(config) + ".csv");
  write_file(result.csv, ablation_csv(result.cells, result.outcomes));
  return result;
}

std::vector<fs::path> cmd_analyze(const fs::path& checkpoint, const fs::path& out_dir) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  fs::create_directories(out_dir);
  std::vector<fs::path> files;
  for (Subprompt kind : kAllSubprompts) {
    const SimilarityMatrix m = similarity_matrix(ck.params, ck.vocab, kind);
    const fs::path p = out_dir / (std::string(subprompt_name(kind)) + ".csv");
    write_file(p, m.to_csv());
    files.push_back(p);
  }
  return files;
}

std::string sample_to_json(const TaskSample& s, const UnifiedVocab& vocab) {
  json j;
  j["task"] = task_name(s.task);
  j["seed"] = s.seed;
  if (s.instance_text) j["instance_text"] = *s.instance_text;
  j["target_text"] = s.target_text;
  j["target"] = vocab.describe(s.target);
  if (s.scene) {
    json objs = json::array();
    for (const auto& o : s.scene->objects) {
      objs.push_back(json{{"label", o.label()}, {"cells", {o.col0, o.row0, o.col1, o.row1}}});
    }
    j["objects"] = objs;
  }
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

TaskSample sample_from_json(const UnifiedVocab& vocab, const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    const Task task = parse_task(j.at("task").get<std::string>());
    return make_sample(vocab, task, j.at("seed").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIoError, std::string("sample line: ") + e.what());
  }
}

}  // namespace jointseq
