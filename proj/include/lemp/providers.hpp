#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "lemp/tensor.hpp"

namespace lemp {

// --- prompt rendering --------------------------------------------------------

struct PromptTemplate {
  std::string id;
  std::string body;    // with {A} / {B} placeholders
  std::string frame;   // sentence frame every rendering must contain
};

const std::vector<std::string>& builtin_template_ids();
const PromptTemplate& prompt_template(const std::string& id);

/// Substitutes both placeholders; rejects empty content.
std::string render_prompt(const PromptTemplate& tmpl, const std::string& content_a,
                          const std::string& content_b);
std::string render_prompt(const std::string& template_id, const std::string& content_a,
                          const std::string& content_b);

// --- pair messages and their cache --------------------------------------------

/// Cached LM output for an unordered node pair. The embedding is stored (and
/// served) at float32 precision, matching the cache blob, so cold and warm
/// runs see bit-identical vectors.
struct PairMessage {
  int u = 0, v = 0;  // u < v
  std::string model;
  std::string text;
  std::vector<double> embedding;
  long tokens_in = 0;
  long tokens_out = 0;
  int64_t timestamp = 0;
};

std::string base64_encode(const unsigned char* data, size_t len);
std::vector<unsigned char> base64_decode(const std::string& s);

/// Append-only JSONL store, one object per line:
/// {u, v, model, text, emb_b64, dim, tok_in, tok_out, ts}.
/// Later lines win on duplicate pairs; compact() rewrites the dedup'd view.
class MessageCache {
 public:
  explicit MessageCache(std::string path);

  std::optional<PairMessage> get(int u, int v) const;
  void put(const PairMessage& msg);
  void compact();

  size_t size() const;
  int dim() const;  // -1 while empty
  const std::string& path() const { return path_; }
  std::vector<PairMessage> records() const;

 private:
  void load();
  mutable std::mutex mu_;
  std::string path_;
  std::map<std::pair<int, int>, PairMessage> index_;
  int dim_ = -1;
};

// --- budget & cost -------------------------------------------------------------

struct Prices {
  double input_per_million = 0.02;
  double output_per_million = 0.04;
};

struct TokenUsage {
  long tokens_in = 0;
  long tokens_out = 0;
};

/// Sum(prompt*p_in + completion*p_out) / 1e6, accumulated over exact integer
/// token totals.
double estimate_cost(const std::vector<TokenUsage>& usage, const Prices& prices);
double estimate_cost(const std::vector<PairMessage>& messages, const Prices& prices);

/// Pair-query budget with per-round history and running cost.
class BudgetLedger {
 public:
  BudgetLedger(long budget, Prices prices);

  long budget() const { return budget_; }
  long used() const;
  long remaining() const;
  double cost() const;

  /// Records one charged pair-query. Throws once the budget is exhausted.
  void charge(long tokens_in, long tokens_out);
  void begin_round();

  struct Round {
    long queries = 0;
    long tokens_in = 0;
    long tokens_out = 0;
  };
  std::vector<Round> history() const;

 private:
  mutable std::mutex mu_;
  long budget_;
  Prices prices_;
  long used_ = 0;
  long total_in_ = 0, total_out_ = 0;
  std::vector<Round> rounds_;
};

// --- rate limiting ---------------------------------------------------------------

/// Injectable time source so rate-limit behavior is testable without real
/// waiting.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now() = 0;               // seconds
  virtual void wait_until(double t) = 0;
};

class SystemClock : public Clock {
 public:
  double now() override;
  void wait_until(double t) override;
};

class ManualClock : public Clock {
 public:
  explicit ManualClock(double start = 0.0) : now_(start) {}
  double now() override { return now_; }
  void wait_until(double t) override { now_ = std::max(now_, t); }
  void advance(double dt) { now_ += dt; }

 private:
  double now_;
};

/// Sliding 60-second windows over queries and tokens plus a concurrency cap.
/// Limits <= 0 mean unlimited.
class RateLimiter {
 public:
  RateLimiter(double queries_per_minute, double tokens_per_minute,
              int max_concurrent, std::shared_ptr<Clock> clock);

  /// Blocks (advancing the clock) until a dispatch of `tokens` fits both
  /// windows and a concurrency slot is free, then records it.
  void acquire(long tokens);
  void release();

  int max_concurrent() const { return max_concurrent_; }

  struct Dispatch {
    double time = 0.0;
    long tokens = 0;
  };
  std::vector<Dispatch> log() const;

 private:
  static constexpr double kWindow = 60.0;
  mutable std::mutex mu_;
  double qpm_, tpm_;
  int max_concurrent_;
  int in_flight_ = 0;
  std::shared_ptr<Clock> clock_;
  std::deque<Dispatch> window_;
  std::vector<Dispatch> log_;
};

// --- providers ----------------------------------------------------------------------

class Provider {
 public:
  virtual ~Provider() = default;
  virtual PairMessage query(int u, int v, const std::string& text_a,
                            const std::string& text_b,
                            const PromptTemplate& tmpl) = 0;
  virtual std::string model_name() const = 0;
  virtual long estimate_tokens(const std::string& text_a,
                               const std::string& text_b) const;
};

enum class SyntheticMode { Mean, ClassInformative };

SyntheticMode synthetic_mode_from_string(const std::string& s);

/// Deterministic offline test double: "mean" returns the L2-normalized
/// average of the endpoint features plus seeded low-amplitude noise;
/// "class-informative" returns the mean of the two class prototypes
/// (per-class feature means over labeled nodes). Byte-identical output for
/// identical (pair, mode, seed).
PairMessage synthetic_oracle(int u, int v, const Tensor& features,
                             const std::vector<int>* labels, int num_classes,
                             SyntheticMode mode, uint64_t seed,
                             double noise = 0.01);

class SyntheticProvider : public Provider {
 public:
  SyntheticProvider(Tensor features, std::vector<int> labels, int num_classes,
                    SyntheticMode mode, uint64_t seed, double noise = 0.01);

  PairMessage query(int u, int v, const std::string& text_a,
                    const std::string& text_b, const PromptTemplate& tmpl) override;
  std::string model_name() const override { return "synthetic"; }

 private:
  Tensor features_;
  std::vector<int> labels_;
  int num_classes_;
  SyntheticMode mode_;
  uint64_t seed_;
  double noise_;
};

/// OpenAI-compatible chat + embeddings client (POST {base}/chat/completions,
/// POST {base}/embeddings). Token counts come from the response usage block.
struct HttpProviderConfig {
  std::string base_url = "http://127.0.0.1:8080/v1";
  std::string chat_model = "qwen-turbo";
  std::string embedding_model = "text-embedding";
  std::string api_key_env = "OPENAI_API_KEY";
  int max_attempts = 3;
  double backoff_initial_s = 0.5;  // doubled after each failed attempt
  int timeout_s = 120;
};

class HttpProvider : public Provider {
 public:
  explicit HttpProvider(HttpProviderConfig cfg);

  PairMessage query(int u, int v, const std::string& text_a,
                    const std::string& text_b, const PromptTemplate& tmpl) override;
  std::string model_name() const override { return cfg_.chat_model; }

 private:
  std::string post_json(const std::string& path, const std::string& body);
  HttpProviderConfig cfg_;
  std::string origin_;       // scheme://host:port
  std::string path_prefix_;  // e.g. /v1
};

// --- orchestration --------------------------------------------------------------------

struct QueryStats {
  int provider_calls = 0;
  int cache_hits = 0;
};

/// Resolves a batch of unordered pairs: cached pairs are served without
/// budget charges, the rest are dispatched concurrently under the rate
/// limiter, persisted to the cache, and charged to the ledger (one charge
/// per newly queried pair). Results come back in input order, deduplicated.
std::vector<PairMessage> query_connection_analysis(
    const std::vector<std::pair<int, int>>& pairs,
    const std::vector<std::string>& texts, const PromptTemplate& tmpl,
    Provider& provider, MessageCache& cache, BudgetLedger& ledger,
    RateLimiter& rate, QueryStats* stats = nullptr);

}  // namespace lemp
