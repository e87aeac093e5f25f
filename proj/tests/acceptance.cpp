// Acceptance suite: one PASS/FAIL line per criterion. Oracles live in this
// file or oracles.hpp; the library is only ever the system under test.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <regdrop/analytics.hpp>
#include <regdrop/errors.hpp>
#include <regdrop/inference.hpp>
#include <regdrop/trainer.hpp>

#include "commands.hpp"
#include "oracles.hpp"
#include "run_config.hpp"

using namespace regdrop;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Options {
  fs::path golden;
  fs::path reference;
  fs::path throughput;
  bool write_golden = false;
  std::set<std::string> only;
};

SyntheticImage random_image(const ModelConfig& c, Rng& rng) {
  return SyntheticImage{c.grid, c.patch_dim, oracle::random_values(c.visual_tokens() * c.patch_dim, rng),
                        std::vector<int>(c.visual_tokens(), 0)};
}

std::vector<int> random_text(std::size_t vocab, std::size_t n, Rng& rng) {
  std::uniform_int_distribution<int> pick(0, static_cast<int>(vocab) - 1);
  std::vector<int> t(n);
  for (auto& x : t) x = pick(rng);
  return t;
}

std::size_t uniform(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

ModelConfig small_model(StrategyTag tag, std::size_t layers, std::size_t grid, std::size_t tokens, std::size_t k,
                        std::uint64_t seed) {
  ModelConfig c;
  c.n_layers = layers;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 24;
  c.vocab_size = 16;
  c.grid = grid;
  c.patch_dim = 4;
  c.d_vision = 8;
  c.seed = seed;
  c.strategy.tag = tag;
  c.strategy.tokens = tokens;
  c.strategy.drop_layer = k;
  return c;
}

std::vector<double> last_row(const Tensor& logits) {
  const auto d = logits.data();
  return {d.end() - static_cast<std::ptrdiff_t>(logits.cols()), d.end()};
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome algorithm_fidelity() {
  Rng rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = uniform(rng, 1, 8), g = uniform(rng, 1, 8), m = uniform(rng, 0, 16);
    const std::size_t l = uniform(rng, 1, 32), k = uniform(rng, 0, n), N = g * g;
    const VlmModel model(small_model(StrategyTag::victor, n, g, m, k, 1000 + trial));
    const PromptInput in = model.build_input(random_image(model.config(), rng), random_text(16, l, rng));
    NoGradGuard ng;
    ForwardOptions opts;
    opts.keep_pre_drop_hidden = true;
    const ForwardResult f = model.forward(in.embeddings, in.layout, opts);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t want = i < k ? N + m + l : m + l;
      if (f.layer_lengths[i] != want) {
        return {false, "trial " + std::to_string(trial) + " layer " + std::to_string(i) + ": length " +
                           std::to_string(f.layer_lengths[i]) + ", expected " + std::to_string(want)};
      }
    }
    if (k < n && f.pre_drop_hidden.rows() != N + m + l) {
      return {false, "trial " + std::to_string(trial) + ": pre-drop hidden has wrong length"};
    }
  }
  return {true, "100 configs, lengths exact"};
}

Outcome degenerate_equivalence() {
  Rng rng(102);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = uniform(rng, 1, 4), g = uniform(rng, 2, 4);
    const VlmModel victor(small_model(StrategyTag::victor, n, g, 0, n, 200 + trial));
    const VlmModel baseline(small_model(StrategyTag::baseline, n, g, 0, n, 200 + trial));
    const SyntheticImage img = random_image(victor.config(), rng);
    const auto text = random_text(16, uniform(rng, 1, 6), rng);
    NoGradGuard ng;
    const PromptInput a = victor.build_input(img, text), b = baseline.build_input(img, text);
    const Tensor ta = victor.forward(a.embeddings, a.layout).logits;
    const Tensor tb = baseline.forward(b.embeddings, b.layout).logits;
    const auto la = ta.data(), lb = tb.data();
    if (!std::equal(la.begin(), la.end(), lb.begin(), lb.end())) {
      return {false, "trial " + std::to_string(trial) + ": logits differ"};
    }
  }
  return {true, "20 inputs bit-identical"};
}

Outcome kv_cache_equivalence() {
  Rng rng(103);
  double worst = 0.0;
  const StrategyTag tags[] = {StrategyTag::baseline,  StrategyTag::victor,           StrategyTag::fastv,
                              StrategyTag::resampler, StrategyTag::registers_no_drop, StrategyTag::tail_retention};
  for (StrategyTag tag : tags) {
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t n = uniform(rng, 2, 4), g = uniform(rng, 2, 4);
      const std::size_t m = uniform(rng, 1, g * g), k = uniform(rng, 1, n);
      const VlmModel model(small_model(tag, n, g, m, k, 300 + trial));
      const SyntheticImage img = random_image(model.config(), rng);
      auto text = random_text(16, uniform(rng, 1, 6), rng);
      const std::size_t prompt_len = text.size();
      NoGradGuard ng;
      PrefillResult p = prefill(model, model.build_input(img, text));
      for (int step = 0; step < 4; ++step) {
        text.push_back(argmax(p.logits.data()));
        const Tensor cached = decode_step(model, p.cache, text.back());
        // Uncached oracle: the whole sequence again, prompt rows ranking fastv.
        const PromptInput full = model.build_input(img, text);
        ForwardOptions opts;
        opts.selection_text_len = prompt_len;
        const auto want = last_row(model.forward(full.embeddings, full.layout, opts).logits);
        worst = std::max(worst, oracle::max_abs_diff(cached.data(), want));
        p.logits = cached;
      }
    }
  }
  return {worst < 1e-8, "6 tags x 50 trials x 4 decode steps, max |diff| " + fmt(worst)};
}

Outcome gradient_correctness() {
  DataConfig d;
  d.grid = 3;
  d.colors = 4;
  d.patch_dim = 4;
  ModelConfig c = small_model(StrategyTag::victor, 2, 3, 2, 1, 7);
  c.vocab_size = TaskVocab{d.grid, d.colors}.size();
  const VlmModel model(c);
  const SyntheticSample sample = gen_dataset(5, 1, d).front();
  auto params = model.parameters();
  for (auto& p : params) p.tensor.set_requires_grad(true);
  sample_loss(model, sample).backward();

  const double h = 1e-5;
  double worst = 0.0;
  std::string where;
  std::size_t checked = 0;
  NoGradGuard ng;
  for (auto& p : params) {
    const auto grad = p.tensor.grad();
    auto data = p.tensor.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + h;
      const double up = sample_loss(model, sample).item();
      data[i] = keep - h;
      const double down = sample_loss(model, sample).item();
      data[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double err = std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
      if (err > worst) worst = err, where = p.name + "[" + std::to_string(i) + "]";
      ++checked;
    }
  }
  return {worst < 1e-4, std::to_string(checked) + " parameters, max rel error " + fmt(worst) + " at " + where};
}

AttentionRecord random_record(std::size_t heads, std::size_t len, Rng& rng, int kind) {
  AttentionRecord rec;
  rec.heads = heads;
  rec.queries = rec.keys = len;
  rec.probs.assign(heads * len * len, 0.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> level(1, 3);
  const double flat = 1.0 / static_cast<double>(len + 1);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t q = 0; q < len; ++q) {
      double total = 0.0;
      for (std::size_t k = 0; k <= q; ++k) {
        double w = kind == 0 ? u(rng) : static_cast<double>(level(rng));
        if (kind == 2) w = k < q ? flat : 1.0 - flat * static_cast<double>(q);  // every visual column ties
        rec.probs[(h * len + q) * len + k] = w;
        total += w;
      }
      if (kind != 2) {
        for (std::size_t k = 0; k <= q; ++k) rec.probs[(h * len + q) * len + k] /= total;
      }
    }
  }
  return rec;
}

Outcome fastv_oracle() {
  Rng rng(105);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t heads = uniform(rng, 1, 4), n = uniform(rng, 1, 24), text = uniform(rng, 1, 8);
    const std::size_t len = n + text;
    const AttentionRecord rec = random_record(heads, len, rng, trial % 3);
    const std::size_t keep = uniform(rng, 0, n);
    const std::size_t query_end = trial % 4 == 0 ? uniform(rng, n + 1, len) : len;
    const TokenLayout layout{n, 0, text};
    const auto got = fastv_select(&rec, layout, keep, query_end);
    const auto want = oracle::fastv_exhaustive([&](auto h, auto q, auto k) { return rec.prob(h, q, k); }, heads, n,
                                               query_end, keep);
    if (got != want) return {false, "record " + std::to_string(trial) + " selects a different set"};
  }
  return {true, "200 records (random, quantized, all-tied) match exhaustive sort"};
}

std::uint64_t flops_oracle(const ModelConfig& c, std::uint64_t text) {
  const auto& s = c.strategy;
  const std::uint64_t N = c.visual_tokens(), M = s.tokens, d = c.d_model, f = c.d_ff;
  const bool drops = s.drop_layer < c.n_layers;
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < c.n_layers; ++i) {
    const bool after = drops && i >= s.drop_layer;
    std::uint64_t n = N + text;
    if (s.tag == StrategyTag::victor) n = after ? M + text : N + M + text;
    if (s.tag == StrategyTag::fastv || s.tag == StrategyTag::tail_retention) n = after ? M + text : N + text;
    if (s.tag == StrategyTag::resampler) n = M + text;
    if (s.tag == StrategyTag::registers_no_drop) n = N + M + text;
    total += 4 * n * d * d + 2 * n * n * d + 2 * n * d * f;
  }
  if (s.tag == StrategyTag::resampler) {
    total += s.resampler_blocks * (2 * M * d * d + 2 * N * d * d + 2 * M * N * d + 2 * M * d * f);
  }
  return total;
}

Outcome flops_accounting() {
  Rng rng(106);
  for (int trial = 0; trial < 50; ++trial) {
    ModelConfig c;
    c.n_layers = uniform(rng, 1, 12);
    c.d_model = 8 * uniform(rng, 1, 32);
    c.d_ff = 8 * uniform(rng, 1, 64);
    c.grid = uniform(rng, 2, 24);
    c.strategy.tag = static_cast<StrategyTag>(uniform(rng, 0, 5));
    c.strategy.tokens = uniform(rng, 1, c.visual_tokens());
    c.strategy.drop_layer = uniform(rng, 1, c.n_layers);
    const std::uint64_t text = uniform(rng, 1, 64);
    if (model_flops(c, text).total != flops_oracle(c, text)) {
      return {false, "config " + std::to_string(trial) + " (" + to_string(c.strategy.tag) + ") disagrees"};
    }
  }
  ModelConfig c;
  c.grid = 24;
  std::string ratios;
  for (std::size_t m : {8u, 16u, 32u, 64u, 128u, 256u}) {
    c.strategy.tokens = m;
    c.strategy.tag = StrategyTag::victor;
    const double v = model_flops(c, 64).ratio;
    c.strategy.tag = StrategyTag::fastv;
    const double f = model_flops(c, 64).ratio;
    if (!(v > f)) return {false, "M=" + std::to_string(m) + ": victor ratio " + fmt(v) + " <= fastv " + fmt(f)};
    if (m == 8) ratios = "victor " + fmt(v) + " vs fastv " + fmt(f) + " at M=8";
  }
  return {true, "50 configs exact; " + ratios};
}

fs::path golden_file(const Options& o, const std::string& name) { return o.golden / name; }

std::vector<double> read_losses(const fs::path& path) {
  std::ifstream in(path);
  std::vector<double> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(json::parse(line).at("loss").get<double>());
  }
  return out;
}

Outcome learning_analog(const Options& o) {
  const cli::RunConfig config = cli::load_run_config(o.reference.string());
  ModelConfig base = config.model;
  base.strategy.tag = StrategyTag::baseline;
  ModelConfig victor = config.model;
  victor.strategy.tag = StrategyTag::victor;
  victor.strategy.tokens = 8;
  victor.strategy.drop_layer = 3;

  struct Arm {
    std::string name;
    ModelConfig model;
    cli::TrainedRun* run = nullptr;
  };
  std::string drift;
  double acc[2] = {0.0, 0.0};
  const std::pair<std::string, ModelConfig> arms[] = {{"baseline", base}, {"victor", victor}};
  for (std::size_t a = 0; a < 2; ++a) {
    const auto& [name, model] = arms[a];
    const auto start = std::chrono::steady_clock::now();
    const cli::TrainedRun run = cli::train_and_evaluate(config, model);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    acc[a] = run.eval.accuracy;
    std::cerr << "  [learning] " << name << ": accuracy " << fmt(acc[a]) << " in " << fmt(secs) << " s\n";
    const fs::path log_path = golden_file(o, "reference_" + name + ".jsonl");
    if (o.write_golden) {
      fs::create_directories(o.golden);
      std::ofstream out(log_path);
      for (const auto& e : run.log) out << to_json(e).dump() << "\n";
      std::ofstream ev(golden_file(o, "reference_" + name + "_eval.json"));
      ev << to_json(run.eval).dump(2) << "\n";
      continue;
    }
    const auto golden = read_losses(log_path);
    if (golden.size() != run.log.size()) {
      drift += name + " log has " + std::to_string(run.log.size()) + " steps, golden " +
               std::to_string(golden.size()) + "; ";
      continue;
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < golden.size(); ++i) worst = std::max(worst, std::abs(golden[i] - run.log[i].loss));
    if (worst > 1e-6) drift += name + " loss drifts from golden by " + fmt(worst) + "; ";
  }
  const double ratio = acc[0] > 0.0 ? acc[1] / acc[0] : 0.0;
  const bool ok = drift.empty() && acc[0] > 0.95 && ratio >= 0.90;
  return {ok, "baseline " + fmt(acc[0]) + ", victor " + fmt(acc[1]) + ", ratio " + fmt(ratio) +
                  (drift.empty() ? "" : "; " + drift)};
}

Outcome throughput_direction(const Options& o) {
  const cli::RunConfig config = cli::load_run_config(o.throughput.string());
  Scenario scenario = config.scenario;
  scenario.workers = workers_from_env(scenario.workers);
  ModelConfig base = config.model;
  base.strategy.tag = StrategyTag::baseline;
  const ThroughputReport b = bench(VlmModel(base), scenario, "baseline");
  std::vector<std::pair<std::size_t, double>> tps;
  for (std::size_t m : {8u, 16u, 32u, 64u, 128u, 256u}) {
    ModelConfig c = config.model;
    c.strategy.tag = StrategyTag::victor;
    c.strategy.tokens = m;
    c.strategy.drop_layer = 3;
    tps.emplace_back(m, bench(VlmModel(c), scenario, "victor").tps);
  }
  const double ratio = tps.front().second / b.tps;
  std::string detail = "N=" + std::to_string(base.visual_tokens()) + " baseline " + fmt(b.tps) + " tok/s; victor";
  bool monotone = true;
  for (std::size_t i = 0; i < tps.size(); ++i) {
    detail += " M" + std::to_string(tps[i].first) + "=" + fmt(tps[i].second);
    // Nonincreasing in M, allowing 10% measurement noise against every smaller M.
    for (std::size_t j = 0; j < i; ++j) monotone = monotone && tps[i].second <= 1.10 * tps[j].second;
  }
  return {ratio >= 1.5 && monotone, detail + "; ratio at M=8 " + fmt(ratio) + (monotone ? "" : "; not monotone")};
}

Outcome training_time_direction(const Options& o) {
  const cli::RunConfig config = cli::load_run_config(o.reference.string());
  const auto data = gen_dataset(config.train_seed(), 256, config.data.task);
  StageConfig stage = config.stages.empty() ? StageConfig{} : config.stages.back();
  auto probe = [&](StrategyTag tag) {
    ModelConfig c = config.model;
    c.strategy.tag = tag;
    c.strategy.tokens = 8;
    c.strategy.drop_layer = 3;
    return timing_probe(VlmModel(c), data, stage, 2, 20).step_seconds;
  };
  // Arms alternate round by round so slow drifts in machine load hit all three alike.
  std::vector<double> samples[3];
  const StrategyTag arms[3] = {StrategyTag::baseline, StrategyTag::victor, StrategyTag::fastv};
  for (int round = 0; round < 5; ++round) {
    for (int a = 0; a < 3; ++a) samples[a].push_back(probe(arms[a]));
  }
  auto median = [](std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
    return v[v.size() / 2];
  };
  const double base = median(samples[0]), victor = median(samples[1]), fastv = median(samples[2]);
  const bool ok = victor < base && fastv >= victor;
  return {ok, "median step s: baseline " + fmt(base) + ", victor " + fmt(victor) + " (ratio " + fmt(victor / base) +
                  "), fastv " + fmt(fastv) + " (ratio " + fmt(fastv / base) + ")"};
}

Outcome freeze_contract(const Options& o) {
  const cli::RunConfig config = cli::load_run_config(o.reference.string());
  const auto data = gen_dataset(config.train_seed(), 256, config.data.task);
  std::size_t frozen = 0, moved = 0;
  for (StrategyTag tag : {StrategyTag::victor, StrategyTag::resampler, StrategyTag::baseline}) {
    ModelConfig c = config.model;
    c.strategy.tag = tag;
    VlmModel model(c);
    std::vector<std::vector<double>> before;
    for (const auto& p : model.parameters()) before.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    StageConfig stage;
    stage.stage = Stage::pretrain;
    stage.steps = 5;
    stage.batch_size = 4;
    stage.learning_rate = 1e-3;
    train(model, data, stage);
    const auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto now = params[i].tensor.data();
      const bool same = std::equal(now.begin(), now.end(), before[i].begin(), before[i].end());
      const bool must_freeze = params[i].group == ParamGroup::language || params[i].group == ParamGroup::vision;
      if (must_freeze && !same) return {false, to_string(tag) + ": " + params[i].name + " changed in stage 1"};
      if (must_freeze) ++frozen;
      if (!must_freeze && !same) ++moved;
    }
  }
  return {moved > 0, std::to_string(frozen) + " frozen tensors bit-identical, " + std::to_string(moved) +
                         " trainable tensors updated"};
}

Outcome analysis_instruments() {
  Rng rng(111);
  // Attention maps against raw records.
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t g = uniform(rng, 2, 5), m = uniform(rng, 1, 4), n = uniform(rng, 2, 4);
    const std::size_t k = uniform(rng, 1, n);
    const VlmModel model(small_model(StrategyTag::victor, n, g, m, k, 500 + trial));
    const PromptInput in = model.build_input(random_image(model.config(), rng), random_text(16, 3, rng));
    ForwardOptions opts;
    opts.capture = true;
    NoGradGuard ng;
    const ForwardResult f = model.forward(in.embeddings, in.layout, opts);
    std::vector<std::size_t> layers(k);
    std::iota(layers.begin(), layers.end(), 0);
    const RegisterAttentionMap map = register_attention_map(f.records, in.layout, layers);
    const std::size_t N = g * g;
    for (std::size_t li = 0; li < k; ++li) {
      const auto& rec = f.records[li];
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t v = 0; v < N; ++v) {
          double want = 0.0;
          for (std::size_t h = 0; h < rec.heads; ++h) want += rec.prob(h, N + r, v);
          want /= static_cast<double>(rec.heads);
          if (map.at(li, r, v) != want) return {false, "attention map differs from raw record"};
        }
      }
    }
  }
  // Similarity stats against the pairwise oracle.
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = uniform(rng, 2, 30), cols = uniform(rng, 1, 16);
    const auto raw = oracle::random_values(rows * cols, rng);
    const SimilarityStats s = cosine_similarity_stats(Tensor::from({rows, cols}, raw));
    std::size_t idx = 0;
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = i + 1; j < rows; ++j) {
        const double want = oracle::cosine(std::span(raw).subspan(i * cols, cols), std::span(raw).subspan(j * cols, cols));
        worst = std::max(worst, std::abs(s.values[idx++] - want));
      }
    }
  }
  if (worst > 1e-12) return {false, "similarity differs from oracle by " + fmt(worst)};
  // Grid reshape round trip.
  for (std::size_t g = 1; g <= 24; ++g) {
    const auto row = oracle::random_values(g * g, rng);
    std::vector<double> flat;
    for (const auto& r : attention_to_grid(row, g)) flat.insert(flat.end(), r.begin(), r.end());
    if (flat != row) return {false, "grid reshape is lossy at g=" + std::to_string(g)};
  }
  return {true, "maps exact, similarity max |diff| " + fmt(worst) + ", reshape exact for g=1..24"};
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  const fs::path here = fs::path(__FILE__).parent_path();
  o.golden = here / "golden";
  o.reference = here.parent_path() / "tools" / "configs" / "reference.json";
  o.throughput = here.parent_path() / "tools" / "configs" / "throughput.json";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--golden" && i + 1 < argc) o.golden = argv[++i];
    else if (a == "--reference" && i + 1 < argc) o.reference = argv[++i];
    else if (a == "--throughput" && i + 1 < argc) o.throughput = argv[++i];
    else if (a == "--write-golden") o.write_golden = true;
    else if (a == "--only" && i + 1 < argc) o.only.insert(argv[++i]);
    else {
      std::cerr << "usage: acceptance [--golden dir] [--reference cfg] [--throughput cfg] [--write-golden] "
                   "[--only name]...\n";
      return 2;
    }
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"algorithm_fidelity", algorithm_fidelity},
      {"degenerate_equivalence", degenerate_equivalence},
      {"kv_cache_equivalence", kv_cache_equivalence},
      {"gradient_correctness", gradient_correctness},
      {"fastv_oracle", fastv_oracle},
      {"flops_accounting", flops_accounting},
      {"learning_analog", [&] { return learning_analog(o); }},
      {"throughput_direction", [&] { return throughput_direction(o); }},
      {"training_time_direction", [&] { return training_time_direction(o); }},
      {"freeze_contract", [&] { return freeze_contract(o); }},
      {"analysis_instruments", analysis_instruments},
  };

  int failures = 0;
  for (const auto& [name, run] : criteria) {
    if (!o.only.empty() && !o.only.count(name)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = run();
    } catch (const std::exception& e) {
      r = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (r.pass ? "PASS " : "FAIL ") << name << ": " << r.detail << " (" << fmt(secs) << " s)" << std::endl;
    if (!r.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
