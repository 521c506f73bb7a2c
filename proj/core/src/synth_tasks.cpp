#include "jointseq/synth_tasks.hpp"

#include <algorithm>
#include <array>
#include <random>
#include <string>
#include <tuple>

#include "jointseq/error.hpp"
#include "jointseq/rng.hpp"

namespace jointseq {
namespace {

constexpr std::array<std::string_view, kNumShapes> kShapeNames = {"square", "circle",
                                                                  "triangle"};
constexpr std::array<std::string_view, kNumColors> kColorNames = {"red", "green", "blue",
                                                                  "yellow"};

constexpr std::array<std::string_view, 8> kPeople = {"alice", "bob",  "carol", "dave",
                                                     "erin",  "frank", "grace", "henry"};
constexpr std::array<std::string_view, 8> kCities = {"paris", "tokyo", "lima",  "oslo",
                                                     "cairo", "delhi", "rome",  "quito"};
constexpr std::array<std::string_view, 6> kItems = {"a lamp", "a bike", "a kite",
                                                    "a drum", "a vase", "a coat"};
constexpr std::array<std::string_view, 5> kDays = {"monday", "tuesday", "friday",
                                                   "saturday", "sunday"};
constexpr std::array<std::string_view, 4> kWeather = {"sunny", "rainy", "cold", "windy"};
constexpr std::array<std::string_view, 3> kMaterials = {"wooden", "metallic", "plastic"};

constexpr int kMaxSampleAttempts = 64;

std::uint64_t derive(std::uint64_t a, std::uint64_t b) { return derive_seed(a, b); }

std::size_t draw(std::mt19937_64& rng, std::size_t n) { return draw_index(rng, n); }

template <typename Array>
std::string_view pick(std::mt19937_64& rng, const Array& a) {
  return a[draw(rng, a.size())];
}

std::string article(std::string_view noun) {
  return std::string("a ") + std::string(noun);
}

std::string object_phrase(const SceneObject& o) { return article(o.label()); }

std::string join_objects(const std::vector<SceneObject>& objs) {
  std::string out;
  for (std::size_t i = 0; i < objs.size(); ++i) {
    if (i > 0) out += (i + 1 == objs.size()) ? " and " : ", ";
    out += object_phrase(objs[i]);
  }
  return out;
}

void push_box(const UnifiedVocab& vocab, const Box& b, TokenSeq& out) {
  out.push_back(vocab.quantize_coord(b.x0));
  out.push_back(vocab.quantize_coord(b.y0));
  out.push_back(vocab.quantize_coord(b.x1));
  out.push_back(vocab.quantize_coord(b.y1));
}

void push_text(const UnifiedVocab& vocab, std::string_view s, TokenSeq& out) {
  const TokenSeq t = vocab.encode_text(s);
  out.insert(out.end(), t.begin(), t.end());
}

std::optional<TaskSample> build_image_sample(const UnifiedVocab& vocab, Task task,
                                             const Scene& scene, std::mt19937_64& rng) {
  TaskSample s;
  s.task = task;
  s.scene = scene;
  const auto objs = scene.scan_order();

  switch (task) {
    case Task::kCaption: {
      s.target_text = caption_for(scene);
      push_text(vocab, s.target_text, s.target);
      break;
    }
    case Task::kGrounding: {
      const SceneObject& pick_obj = objs[draw(rng, objs.size())];
      const std::string query = "the " + pick_obj.label();
      const SceneObject& ref = resolve_referent(scene, query);
      s.instance_text = query;
      s.gold_boxes = {ref.box()};
      s.gold_labels = {ref.label()};
      s.target_text = ref.label();
      push_box(vocab, ref.box(), s.target);
      break;
    }
    case Task::kEntailment: {
      const std::size_t kind = draw(rng, 3);
      std::string premise;
      std::string answer;
      if (kind == 0) {
        if (draw(rng, 2) == 0) {
          premise = caption_for(scene);
        } else {
          premise = "there is " + object_phrase(objs[draw(rng, objs.size())]);
        }
        answer = "yes";
      } else if (kind == 1) {
        // A present shape in a color the scene does not have for it.
        std::vector<std::pair<Shape, Color>> absent;
        for (const auto& o : objs) {
          for (int c = 0; c < kNumColors; ++c) {
            const auto color = static_cast<Color>(c);
            const bool present = std::any_of(objs.begin(), objs.end(), [&](const auto& p) {
              return p.shape == o.shape && p.color == color;
            });
            if (!present) absent.emplace_back(o.shape, color);
          }
        }
        if (absent.empty()) return std::nullopt;
        const auto [shape, color] = absent[draw(rng, absent.size())];
        premise = "there is a " + std::string(color_name(color)) + " " +
                  std::string(shape_name(shape));
        answer = "no";
      } else {
        const SceneObject& o = objs[draw(rng, objs.size())];
        premise = "the " + o.label() + " is " + std::string(pick(rng, kMaterials));
        answer = "maybe";
      }
      s.instance_text = premise;
      s.closed_set = LabelSet::kEntailmentAnswers;
      s.target_text = answer;
      push_text(vocab, answer, s.target);
      break;
    }
    case Task::kVqa: {
      std::vector<const SceneObject*> singles;
      for (const auto& o : objs) {
        const auto same = std::count_if(objs.begin(), objs.end(),
                                        [&](const auto& p) { return p.shape == o.shape; });
        if (same == 1) singles.push_back(&o);
      }
      if (singles.empty()) return std::nullopt;
      const SceneObject& o = *singles[draw(rng, singles.size())];
      s.instance_text = "what color is the " + std::string(shape_name(o.shape)) + "?";
      s.closed_set = LabelSet::kColors;
      s.target_text = std::string(color_name(o.color));
      push_text(vocab, s.target_text, s.target);
      break;
    }
    case Task::kClassification: {
      int best = -1;
      int best_area = -1;
      bool tie = false;
      for (std::size_t i = 0; i < objs.size(); ++i) {
        if (objs[i].area() > best_area) {
          best = static_cast<int>(i);
          best_area = objs[i].area();
          tie = false;
        } else if (objs[i].area() == best_area) {
          tie = true;
        }
      }
      if (tie) return std::nullopt;
      s.closed_set = LabelSet::kClassNames;
      s.target_text = objs[best].label();
      push_text(vocab, s.target_text, s.target);
      break;
    }
    case Task::kDetection: {
      std::string labels;
      for (const auto& o : objs) {
        push_box(vocab, o.box(), s.target);
        push_text(vocab, o.label(), s.target);
        s.gold_boxes.push_back(o.box());
        s.gold_labels.push_back(o.label());
        if (!labels.empty()) labels += "; ";
        labels += o.label();
      }
      s.target_text = labels;
      break;
    }
    case Task::kSummarization:
      throw Error(ErrorCode::kUnknownTask, "summarization has no scene");
  }
  s.target.push_back(UnifiedVocab::kEos);
  return s;
}

TaskSample build_summary_sample(const UnifiedVocab& vocab, std::mt19937_64& rng) {
  const std::string person(pick(rng, kPeople));
  const std::string city(pick(rng, kCities));
  const std::string item(pick(rng, kItems));
  const std::string day(pick(rng, kDays));
  const std::string weather(pick(rng, kWeather));

  std::string text;
  if (draw(rng, 2) == 0) {
    text = person + " traveled to " + city + " on " + day + ". the weather in " + city +
           " was " + weather + ". while there, " + person + " bought " + item + ".";
  } else {
    text = "on " + day + " the weather in " + city + " was " + weather + ". " + person +
           " was visiting " + city + " and bought " + item + " at a market.";
  }

  TaskSample s;
  s.task = Task::kSummarization;
  s.instance_text = text;
  s.target_text = person + " buys " + item + " in " + city;
  push_text(vocab, s.target_text, s.target);
  s.target.push_back(UnifiedVocab::kEos);
  return s;
}

}  // namespace

std::string_view shape_name(Shape s) { return kShapeNames.at(static_cast<std::size_t>(s)); }
std::string_view color_name(Color c) { return kColorNames.at(static_cast<std::size_t>(c)); }

Box SceneObject::box() const {
  return Box{static_cast<double>(col0) / kGridSize, static_cast<double>(row0) / kGridSize,
             static_cast<double>(col1) / kGridSize, static_cast<double>(row1) / kGridSize};
}

std::string SceneObject::label() const {
  return std::string(color_name(color)) + " " + std::string(shape_name(shape));
}

std::vector<SceneObject> Scene::scan_order() const {
  auto out = objects;
  std::stable_sort(out.begin(), out.end(), [](const SceneObject& a, const SceneObject& b) {
    return std::tie(a.row0, a.col0) < std::tie(b.row0, b.col0);
  });
  return out;
}

const SceneObject* Scene::object_at(int row, int col) const {
  for (const auto& o : objects) {
    if (o.covers(row, col)) return &o;
  }
  return nullptr;
}

bool Scene::satisfies_invariants() const {
  if (objects.empty() || objects.size() > 4) return false;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto& a = objects[i];
    if (!(0 <= a.col0 && a.col0 < a.col1 && a.col1 <= kGridSize)) return false;
    if (!(0 <= a.row0 && a.row0 < a.row1 && a.row1 <= kGridSize)) return false;
    if (!a.box().valid()) return false;
    for (std::size_t j = i + 1; j < objects.size(); ++j) {
      const auto& b = objects[j];
      if (a.shape == b.shape && a.color == b.color) return false;
      const bool overlap = a.col0 < b.col1 && b.col0 < a.col1 && a.row0 < b.row1 &&
                           b.row0 < a.row1;
      if (overlap) return false;
    }
  }
  return true;
}

Scene gen_scene(std::uint64_t seed) {
  std::mt19937_64 rng(derive(seed, 0x5ce9e));
  Scene scene;
  scene.seed = seed;

  std::array<int, kNumShapes * kNumColors> kinds{};
  for (int i = 0; i < static_cast<int>(kinds.size()); ++i) kinds[i] = i;
  for (std::size_t i = kinds.size() - 1; i > 0; --i) {
    std::swap(kinds[i], kinds[draw(rng, i + 1)]);
  }

  const std::size_t n = 1 + draw(rng, 4);
  for (std::size_t k = 0; k < n; ++k) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      const int w = 1 + static_cast<int>(draw(rng, 3));
      const int h = 1 + static_cast<int>(draw(rng, 3));
      const int col0 = static_cast<int>(draw(rng, kGridSize - w + 1));
      const int row0 = static_cast<int>(draw(rng, kGridSize - h + 1));
      SceneObject o{static_cast<Shape>(kinds[k] / kNumColors),
                    static_cast<Color>(kinds[k] % kNumColors), col0, row0, col0 + w,
                    row0 + h};
      const bool clash = std::any_of(scene.objects.begin(), scene.objects.end(),
                                     [&](const SceneObject& p) {
                                       return o.col0 < p.col1 && p.col0 < o.col1 &&
                                              o.row0 < p.row1 && p.row0 < o.row1;
                                     });
      if (!clash) {
        scene.objects.push_back(o);
        break;
      }
    }
  }
  return scene;
}

Tensor render_patches(const Scene& scene, std::size_t d_model) {
  if (d_model < static_cast<std::size_t>(kPatchCodeWidth)) {
    throw Error(ErrorCode::kInvalidHyper, "d_model too small for patch codes");
  }
  Tensor out = Tensor::matrix(kNumCells, d_model);
  for (int r = 0; r < kGridSize; ++r) {
    for (int c = 0; c < kGridSize; ++c) {
      const SceneObject* o = scene.object_at(r, c);
      if (o == nullptr) continue;
      auto row = out.row(static_cast<std::size_t>(r * kGridSize + c));
      row[0] = 1.0;
      row[1 + static_cast<int>(o->shape)] = 1.0;
      row[1 + kNumShapes + static_cast<int>(o->color)] = 1.0;
    }
  }
  return out;
}

const std::vector<std::string>& closed_set_labels(LabelSet set) {
  static const std::vector<std::string> kClassNames = [] {
    std::vector<std::string> out;
    for (auto c : kColorNames) {
      for (auto s : kShapeNames) out.push_back(std::string(c) + " " + std::string(s));
    }
    return out;
  }();
  static const std::vector<std::string> kAnswers = {"yes", "no", "maybe"};
  static const std::vector<std::string> kColors(kColorNames.begin(), kColorNames.end());
  switch (set) {
    case LabelSet::kClassNames: return kClassNames;
    case LabelSet::kEntailmentAnswers: return kAnswers;
    case LabelSet::kColors: return kColors;
  }
  throw Error(ErrorCode::kOutOfRange, "label set");
}

const SceneObject& resolve_referent(const Scene& scene, std::string_view query) {
  const SceneObject* found = nullptr;
  int matches = 0;
  for (const auto& o : scene.objects) {
    if (query == "the " + o.label()) {
      found = &o;
      ++matches;
    }
  }
  if (matches != 1) {
    throw Error(ErrorCode::kAmbiguousReferent,
                "'" + std::string(query) + "' matches " + std::to_string(matches) +
                    " objects");
  }
  return *found;
}

std::string caption_for(const Scene& scene) { return join_objects(scene.scan_order()); }

std::optional<TaskSample> make_sample_for_scene(const UnifiedVocab& vocab, Task task,
                                                const Scene& scene, std::uint64_t choice_seed) {
  std::mt19937_64 rng(choice_seed);
  return build_image_sample(vocab, task, scene, rng);
}

TaskSample make_sample(const UnifiedVocab& vocab, Task task, std::uint64_t seed) {
  const std::uint64_t stream = derive(seed, 0x7a5c0000 + task_index(task));
  if (task == Task::kSummarization) {
    std::mt19937_64 rng(stream);
    TaskSample s = build_summary_sample(vocab, rng);
    s.seed = seed;
    return s;
  }
  for (int attempt = 0; attempt < kMaxSampleAttempts; ++attempt) {
    const std::uint64_t scene_seed = derive(stream, static_cast<std::uint64_t>(attempt));
    const Scene scene = gen_scene(scene_seed);
    std::mt19937_64 rng(derive(scene_seed, 0xc401ce));
    try {
      if (auto s = build_image_sample(vocab, task, scene, rng)) {
        s->seed = seed;
        return *std::move(s);
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kAmbiguousReferent) throw;
    }
  }
  throw Error(ErrorCode::kEmptyDataset, "no valid scene for " + std::string(task_name(task)) +
                                            " seed " + std::to_string(seed));
}

EncoderInput assemble_encoder_input(const TokenSeq& prompt_tokens, const TaskSample& sample,
                                    std::size_t d_model, std::size_t max_length) {
  EncoderInput in;
  const std::size_t n_patches = sample.scene ? kNumCells : 0;
  const std::size_t total = prompt_tokens.size() + n_patches + 3;
  if (total > max_length) {
    throw Error(ErrorCode::kSequenceTooLong, std::to_string(total) + " > " +
                                                 std::to_string(max_length));
  }
  in.tokens.reserve(total);
  in.tokens.push_back(UnifiedVocab::kBos);
  in.tokens.insert(in.tokens.end(), prompt_tokens.begin(), prompt_tokens.end());
  in.tokens.push_back(UnifiedVocab::kSep);
  if (sample.scene) {
    in.patches = render_patches(*sample.scene, d_model);
    in.tokens.insert(in.tokens.end(), n_patches, kPatchSlot);
  }
  in.tokens.push_back(UnifiedVocab::kEos);
  return in;
}

TokenSeq decoder_input_for(const TokenSeq& target) {
  TokenSeq out;
  out.reserve(target.size());
  out.push_back(UnifiedVocab::kBos);
  if (!target.empty()) out.insert(out.end(), target.begin(), target.end() - 1);
  return out;
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    if (split_name(s) == name) return s;
  }
  throw Error(ErrorCode::kConfigError, "unknown split '" + std::string(name) + "'");
}

std::uint64_t sample_seed(std::uint64_t data_seed, Split split, std::size_t index) {
  return derive(derive(data_seed, 0x5b117000 + static_cast<std::uint64_t>(split)), index);
}

std::vector<TaskSample> make_split(const UnifiedVocab& vocab, Task task, Split split,
                                   std::size_t n, std::uint64_t data_seed) {
  std::vector<TaskSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(make_sample(vocab, task, sample_seed(data_seed, split, i)));
  }
  return out;
}

}  // namespace jointseq
