#include <random>

#include <benchmark/benchmark.h>

#include "jointseq/autodiff.hpp"
#include "jointseq/decode.hpp"
#include "jointseq/model.hpp"
#include "jointseq/synth_tasks.hpp"
#include "jointseq/tep.hpp"

using namespace jointseq;

namespace {

struct Fixture {
  UnifiedVocab vocab;
  ModelParams params = init_params(ModelHyper{}, 0);
  TaskSample sample;
  EncoderInput input;

  explicit Fixture(Task task, const PromptVariant& variant = PromptVariant::tep())
      : sample(make_sample(vocab, task, 3)) {
    std::optional<std::string_view> text;
    if (sample.instance_text) text = *sample.instance_text;
    input = assemble_encoder_input(render_prompt(vocab, variant, task, text), sample,
                                   params.hyper().d_model);
  }
};

void BM_Forward(benchmark::State& state) {
  const Fixture f(static_cast<Task>(state.range(0)));
  const TokenSeq dec = decoder_input_for(f.sample.target);
  for (auto _ : state) {
    ForwardPass pass(f.params, ForwardOptions::inference());
    benchmark::DoNotOptimize(pass.tape().value(forward(pass, f.input, dec)).data());
  }
  state.counters["enc_len"] = static_cast<double>(f.input.tokens.size());
}
BENCHMARK(BM_Forward)->Arg(static_cast<int>(Task::kGrounding))->Arg(static_cast<int>(Task::kCaption))
    ->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  const Fixture f(static_cast<Task>(state.range(0)));
  const TokenSeq dec = decoder_input_for(f.sample.target);
  for (auto _ : state) {
    ForwardOptions o;
    o.train = true;
    o.dropout_seed = 1;
    ForwardPass pass(f.params, o);
    forward(pass, f.input, dec);
    Gradients g = Gradients::zeros_like(f.params);
    pass.backward(pass.loss(f.sample.target, 0.1), g);
    benchmark::DoNotOptimize(g.tensors.front().data());
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(static_cast<int>(Task::kGrounding))
    ->Arg(static_cast<int>(Task::kCaption))->Unit(benchmark::kMillisecond);

void BM_Attention(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  auto random = [&](std::size_t r) {
    Tensor t = Tensor::matrix(r, 64);
    for (double& x : t.values()) x = g(rng);
    return t;
  };
  const Tensor q = random(n), k = random(n), v = random(n);
  const Tensor hs = Tensor::vector(4, 1.0);
  const Tensor rb = Tensor::matrix(4, 2 * 32 + 1, 0.01);
  ops::AttentionSpec spec;
  spec.n_heads = 4;
  for (auto _ : state) {
    benchmark::DoNotOptimize(attention_forward(q, k, v, &hs, &rb, spec).output.data());
  }
}
BENCHMARK(BM_Attention)->Arg(64)->Arg(256)->Arg(1024)->Unit(benchmark::kMicrosecond);

void BM_Generate(benchmark::State& state) {
  const Task task = static_cast<Task>(state.range(0));
  const Fixture f(task);
  const auto c = constraint_for(task, f.vocab);
  for (auto _ : state) {
    benchmark::DoNotOptimize(generate(f.params, f.input, c.get(), 64).tokens.size());
  }
}
BENCHMARK(BM_Generate)->Arg(static_cast<int>(Task::kGrounding))
    ->Arg(static_cast<int>(Task::kEntailment))->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
