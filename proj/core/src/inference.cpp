#include "regdrop/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <sstream>
#include <thread>

#include "regdrop/errors.hpp"
#include "regdrop/json_fields.hpp"

namespace regdrop {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

struct Stream {
  SyntheticImage image;
  std::vector<int> prompt;
};

std::vector<Stream> make_streams(const ModelConfig& c, const Scenario& s) {
  Rng rng(s.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> token(0, static_cast<int>(c.vocab_size) - 1);
  std::vector<Stream> streams(s.batch);
  for (auto& st : streams) {
    st.image.grid = c.grid;
    st.image.patch_dim = c.patch_dim;
    st.image.patches.resize(c.visual_tokens() * c.patch_dim);
    for (auto& v : st.image.patches) v = normal(rng);
    st.image.labels.assign(c.visual_tokens(), 0);
    st.prompt.resize(s.prompt_len);
    for (auto& t : st.prompt) t = token(rng);
  }
  return streams;
}

struct RepTiming {
  double wall = 0.0;
  double prefill = 0.0;
  double decode = 0.0;
};

RepTiming run_batch(const VlmModel& model, const std::vector<Stream>& streams, const Scenario& s) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(s.workers, streams.size()));
  std::vector<RepTiming> per_worker(workers);
  auto work = [&](std::size_t w) {
    NoGradGuard no_grad;
    for (std::size_t i = w; i < streams.size(); i += workers) {
      const PromptInput input = model.build_input(streams[i].image, streams[i].prompt);
      const GenerationResult g = generate(model, input, s.gen_tokens);
      per_worker[w].prefill += g.prefill_seconds;
      per_worker[w].decode += g.decode_seconds;
    }
  };
  const auto start = Clock::now();
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work, w);
    for (auto& t : threads) t.join();
  }
  RepTiming total;
  total.wall = seconds_since(start);
  for (const auto& r : per_worker) {
    total.prefill += r.prefill;
    total.decode += r.decode;
  }
  return total;
}

}  // namespace

std::string cache_fingerprint(const VlmModel& model) {
  std::ostringstream out;
  out << to_json(model.config()).dump() << '@' << static_cast<const void*>(model.token_embedding().data().data());
  return out.str();
}

PrefillResult prefill(const VlmModel& model, const PromptInput& input) {
  PrefillResult result;
  ForwardResult f = model.forward(input.embeddings, input.layout, ForwardOptions{}, &result.cache.layers);
  result.cache.fingerprint = cache_fingerprint(model);
  result.cache.layout = f.layout;
  result.cache.prompt_rows = input.layout.total();
  result.layer_lengths = std::move(f.layer_lengths);
  const std::size_t last = f.logits.rows() - 1;
  result.logits = slice_rows(f.logits, last, last + 1);
  return result;
}

Tensor decode_step(const VlmModel& model, KVCache& cache, int token) {
  if (cache.empty()) throw CacheError("decode_step: cache is empty; run prefill first");
  if (cache.fingerprint != cache_fingerprint(model)) {
    throw CacheError("decode_step: cache was filled by a different model or configuration");
  }
  if (token < 0 || static_cast<std::size_t>(token) >= model.config().vocab_size) {
    throw ContractError("decode_step: token " + std::to_string(token) + " is outside the vocabulary");
  }
  Tensor logits = model.decode(token, cache.layers);
  ++cache.layout.text;
  return logits;
}

int argmax(std::span<const double> row) {
  if (row.empty()) throw ContractError("argmax: empty row");
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

GenerationResult generate(const VlmModel& model, const PromptInput& input, std::size_t n_tokens) {
  GenerationResult g;
  if (n_tokens == 0) return g;
  NoGradGuard no_grad;
  auto start = Clock::now();
  PrefillResult p = prefill(model, input);
  int next = argmax(p.logits.data());
  g.tokens.push_back(next);
  g.prefill_seconds = seconds_since(start);

  start = Clock::now();
  for (std::size_t i = 1; i < n_tokens; ++i) {
    const Tensor logits = decode_step(model, p.cache, next);
    next = argmax(logits.data());
    g.tokens.push_back(next);
  }
  g.decode_seconds = seconds_since(start);
  return g;
}

bool Scenario::same_workload(const Scenario& o) const {
  return batch == o.batch && prompt_len == o.prompt_len && gen_tokens == o.gen_tokens;
}

std::size_t workers_from_env(std::size_t fallback) {
  const char* env = std::getenv("REGDROP_WORKERS");
  if (env == nullptr || *env == '\0') return fallback;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError("REGDROP_WORKERS: expected a positive integer, got '" + std::string(env) + "'");
  return static_cast<std::size_t>(v);
}

json to_json(const Scenario& s) {
  return json{{"batch", s.batch},   {"prompt_len", s.prompt_len}, {"gen_tokens", s.gen_tokens},
              {"warmup", s.warmup}, {"reps", s.reps},             {"workers", s.workers},
              {"seed", s.seed}};
}

Scenario scenario_from_json(const json& j, const std::string& path) {
  Scenario s;
  FieldReader r(j, path);
  r.read_size("batch", s.batch);
  r.read_size("prompt_len", s.prompt_len);
  r.read_size("gen_tokens", s.gen_tokens);
  r.read_size("warmup", s.warmup);
  r.read_size("reps", s.reps);
  r.read_size("workers", s.workers);
  r.read("seed", s.seed);
  r.finish();
  if (s.batch == 0) throw ConfigError(path + ".batch: must be positive");
  if (s.prompt_len == 0) throw ConfigError(path + ".prompt_len: must be positive");
  if (s.gen_tokens == 0) throw ConfigError(path + ".gen_tokens: must be positive");
  if (s.reps == 0) throw ConfigError(path + ".reps: must be positive");
  if (s.workers == 0) throw ConfigError(path + ".workers: must be positive");
  return s;
}

json to_json(const ThroughputReport& r) {
  json j{{"label", r.label},
         {"tps", r.tps},
         {"tps_min", r.tps_min},
         {"tps_max", r.tps_max},
         {"prefill_ms", r.prefill_ms},
         {"decode_ms", r.decode_ms},
         {"rep_tps", r.rep_tps},
         {"visual_tokens", r.visual_tokens},
         {"final_length", r.final_length},
         {"scenario", to_json(r.scenario)},
         {"config", r.config}};
  j["ratio_vs_baseline"] = r.ratio_vs_baseline ? json(*r.ratio_vs_baseline) : json(nullptr);
  return j;
}

ThroughputReport bench(const VlmModel& model, const Scenario& scenario, const std::string& label) {
  if (scenario.reps == 0) throw ConfigError("bench: reps must be positive");
  const auto streams = make_streams(model.config(), scenario);
  for (std::size_t i = 0; i < scenario.warmup; ++i) run_batch(model, streams, scenario);

  ThroughputReport report;
  report.label = label.empty() ? to_string(model.config().strategy.tag) : label;
  report.scenario = scenario;
  report.config = to_json(model.config());
  report.visual_tokens = model.config().visual_tokens();
  report.final_length = model.plan().final_length(model.config().visual_tokens(), scenario.prompt_len);

  std::vector<double> prefill_ms, decode_ms;
  const double generated = static_cast<double>(scenario.batch * scenario.gen_tokens);
  for (std::size_t i = 0; i < scenario.reps; ++i) {
    const RepTiming t = run_batch(model, streams, scenario);
    report.rep_tps.push_back(generated / t.wall);
    prefill_ms.push_back(1e3 * t.prefill);
    decode_ms.push_back(1e3 * t.decode);
  }
  report.tps = median(report.rep_tps);
  report.tps_min = *std::min_element(report.rep_tps.begin(), report.rep_tps.end());
  report.tps_max = *std::max_element(report.rep_tps.begin(), report.rep_tps.end());
  report.prefill_ms = median(prefill_ms);
  report.decode_ms = median(decode_ms);
  return report;
}

double throughput_ratio(const ThroughputReport& report, const ThroughputReport& baseline) {
  if (!report.scenario.same_workload(baseline.scenario)) {
    throw ContractError("throughput_ratio: reports were measured on different workloads (" +
                        to_json(report.scenario).dump() + " vs " + to_json(baseline.scenario).dump() + ")");
  }
  if (!(baseline.tps > 0.0)) throw ContractError("throughput_ratio: baseline throughput is not positive");
  return report.tps / baseline.tps;
}

}  // namespace regdrop
