#include "lemp/providers.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <stdexcept>
#include <cstring>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "lemp/linalg.hpp"

namespace lemp {

using nlohmann::json;

// --- prompt templates -----------------------------------------------------

namespace {

const std::vector<PromptTemplate>& templates() {
  static const std::string kFrame = "The relational implications between";
  static const std::vector<PromptTemplate> kTemplates = {
      {"webpage",
       "Analyze the hyperlink relationship between Webpage A and Webpage B of "
       "the computer science department of a university, based on their "
       "contents provided below.\n\n"
       "Your response should:\n"
       "1. Summarize the key content of both webpages and any notable features.\n"
       "2. Clearly explain the intellectual connection or relevance between the "
       "two webpages, highlighting how they might be related.\n"
       "3. Keep the response concise (within 200 words) and emphasize the "
       "connection between the two webpages.\n"
       "4. Use the following sentence structure: \"The relational implications "
       "between [Webpage A] and [Webpage B] are as below.\"\n\n"
       "Webpage A: {A}. Webpage B: {B}.",
       kFrame},
      {"cs-citation",
       "Analyze the citation relationship between Paper A and Paper B in the "
       "field of computer science, based on their titles and abstracts provided "
       "below.\n\n"
       "Your response should:\n"
       "1. Summarize the key content of both papers, focusing on their research "
       "questions, methods, and contributions.\n"
       "2. Clearly explain the intellectual connection or relevance between the "
       "two papers.\n"
       "3. Keep the response concise (within 200 words).\n"
       "4. Use the following sentence structure: \"The relational implications "
       "between [Paper A] and [Paper B] are as below.\"\n\n"
       "Paper A: {A}. Paper B: {B}.",
       kFrame},
      {"e-commerce",
       "Analyze the co-purchased or co-viewed relationship between two items "
       "sold on Amazon based on their descriptions provided below.\n\n"
       "Your response should:\n"
       "1. Summarize the main points of both items.\n"
       "2. Clearly explain the relationship between the two items.\n"
       "3. Keep the response concise (within 200 words) and emphasize the "
       "relationship between the two items.\n"
       "4. Use the following sentence structure: \"The relational implications "
       "between [Item A] and [Item B] are as below.\"\n\n"
       "Item A: {A}. Item B: {B}.",
       kFrame},
      {"knowledge",
       "Analyze the hyperlink relationship between two Wikipedia entries based "
       "on their titles and contents provided below.\n\n"
       "Your response should:\n"
       "1. Summarize the main points of both entries.\n"
       "2. Clearly explain the relationship between the two entries.\n"
       "3. Keep the response concise (within 200 words).\n"
       "4. Use the following sentence structure: \"The relational implications "
       "between [Entry A] and [Entry B] are as below.\"\n\n"
       "Entry A: {A}. Entry B: {B}.",
       kFrame},
      {"anomaly",
       "Analyze the co-work relationship between two tolokers (workers) based "
       "on their profile information and task performance statistics provided "
       "below.\n\n"
       "Your response should:\n"
       "1. Summarize the main points of both workers' profiles and performance.\n"
       "2. Clearly explain the relationship or relevance between the two "
       "workers.\n"
       "3. Keep the response concise (within 200 words) and emphasize the "
       "relationship between the two workers.\n"
       "4. Use the following sentence structure: \"The relational implications "
       "between [Toloker A] and [Toloker B] are as below.\"\n\n"
       "Toloker A: {A}. Toloker B: {B}.",
       kFrame},
      {"generic",
       "Analyze the relationship between Entity A and Entity B based on their "
       "contents provided below.\n\n"
       "Your response should:\n"
       "1. Summarize the main points of both entities.\n"
       "2. Clearly explain the relationship or relevance between the two "
       "entities.\n"
       "3. Keep the response concise (within 200 words) and emphasize the "
       "relationship between the two entities.\n"
       "4. Use the following sentence structure: \"The relational implications "
       "between [Entity A] and [Entity B] are as below.\"\n\n"
       "Entity A: {A}. Entity B: {B}.",
       kFrame},
  };
  return kTemplates;
}

void replace_once(std::string& s, const std::string& from, const std::string& to) {
  const auto pos = s.find(from);
  if (pos == std::string::npos)
    throw std::logic_error("render_prompt: template lacks placeholder " + from);
  s.replace(pos, from.size(), to);
}

}  // namespace

const std::vector<std::string>& builtin_template_ids() {
  static const std::vector<std::string> ids = [] {
    std::vector<std::string> out;
    for (const auto& t : templates()) out.push_back(t.id);
    return out;
  }();
  return ids;
}

const PromptTemplate& prompt_template(const std::string& id) {
  for (const auto& t : templates())
    if (t.id == id) return t;
  throw std::invalid_argument("unknown prompt template id: '" + id + "'");
}

std::string render_prompt(const PromptTemplate& tmpl, const std::string& content_a,
                          const std::string& content_b) {
  if (content_a.empty() || content_b.empty())
    throw std::invalid_argument("render_prompt: empty content");
  std::string out = tmpl.body;
  replace_once(out, "{A}", content_a);
  replace_once(out, "{B}", content_b);
  return out;
}

std::string render_prompt(const std::string& template_id, const std::string& content_a,
                          const std::string& content_b) {
  return render_prompt(prompt_template(template_id), content_a, content_b);
}

// --- base64 ------------------------------------------------------------------

static const char kB64[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const unsigned char* data, size_t len) {
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (size_t i = 0; i < len; i += 3) {
    uint32_t chunk = static_cast<uint32_t>(data[i]) << 16;
    if (i + 1 < len) chunk |= static_cast<uint32_t>(data[i + 1]) << 8;
    if (i + 2 < len) chunk |= static_cast<uint32_t>(data[i + 2]);
    out.push_back(kB64[(chunk >> 18) & 63]);
    out.push_back(kB64[(chunk >> 12) & 63]);
    out.push_back(i + 1 < len ? kB64[(chunk >> 6) & 63] : '=');
    out.push_back(i + 2 < len ? kB64[chunk & 63] : '=');
  }
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& s) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    if (c == '=') return -1;
    throw std::invalid_argument("base64_decode: bad character");
  };
  if (s.size() % 4 != 0) throw std::invalid_argument("base64_decode: bad length");
  std::vector<unsigned char> out;
  out.reserve(s.size() / 4 * 3);
  for (size_t i = 0; i < s.size(); i += 4) {
    int v[4];
    for (int j = 0; j < 4; ++j) v[j] = val(s[i + j]);
    uint32_t chunk = (static_cast<uint32_t>(v[0]) << 18) |
                     (static_cast<uint32_t>(v[1]) << 12) |
                     (v[2] < 0 ? 0u : static_cast<uint32_t>(v[2]) << 6) |
                     (v[3] < 0 ? 0u : static_cast<uint32_t>(v[3]));
    out.push_back(static_cast<unsigned char>((chunk >> 16) & 0xff));
    if (v[2] >= 0) out.push_back(static_cast<unsigned char>((chunk >> 8) & 0xff));
    if (v[3] >= 0) out.push_back(static_cast<unsigned char>(chunk & 0xff));
  }
  return out;
}

namespace {

std::string embedding_to_b64(const std::vector<double>& emb) {
  std::vector<unsigned char> bytes(emb.size() * 4);
  for (size_t i = 0; i < emb.size(); ++i) {
    const float f = static_cast<float>(emb[i]);
    uint32_t x;
    std::memcpy(&x, &f, 4);
    for (int b = 0; b < 4; ++b)
      bytes[i * 4 + b] = static_cast<unsigned char>(x >> (8 * b));
  }
  return base64_encode(bytes.data(), bytes.size());
}

std::vector<double> embedding_from_b64(const std::string& s, int dim) {
  auto bytes = base64_decode(s);
  if (bytes.size() != static_cast<size_t>(dim) * 4)
    throw std::invalid_argument("cache: embedding blob size disagrees with dim");
  std::vector<double> out(dim);
  for (int i = 0; i < dim; ++i) {
    uint32_t x = 0;
    for (int b = 0; b < 4; ++b)
      x |= static_cast<uint32_t>(bytes[i * 4 + b]) << (8 * b);
    float f;
    std::memcpy(&f, &x, 4);
    out[i] = static_cast<double>(f);
  }
  return out;
}

void round_to_f32(std::vector<double>& v) {
  for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

}  // namespace

// --- message cache -------------------------------------------------------------

MessageCache::MessageCache(std::string path) : path_(std::move(path)) { load(); }

void MessageCache::load() {
  std::ifstream is(path_);
  if (!is) return;  // fresh cache
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error("cache " + path_ + ":" + std::to_string(lineno) +
                               ": bad JSON: " + e.what());
    }
    PairMessage m;
    m.u = j.at("u").get<int>();
    m.v = j.at("v").get<int>();
    m.model = j.at("model").get<std::string>();
    m.text = j.at("text").get<std::string>();
    const int dim = j.at("dim").get<int>();
    m.embedding = embedding_from_b64(j.at("emb_b64").get<std::string>(), dim);
    m.tokens_in = j.at("tok_in").get<long>();
    m.tokens_out = j.at("tok_out").get<long>();
    m.timestamp = j.at("ts").get<int64_t>();
    if (dim_ < 0) dim_ = dim;
    if (dim != dim_)
      throw std::runtime_error("cache " + path_ + ": mixed embedding dimensions " +
                               std::to_string(dim_) + " vs " + std::to_string(dim));
    index_[{std::min(m.u, m.v), std::max(m.u, m.v)}] = std::move(m);
  }
}

std::optional<PairMessage> MessageCache::get(int u, int v) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = index_.find({std::min(u, v), std::max(u, v)});
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void MessageCache::put(const PairMessage& msg) {
  std::lock_guard<std::mutex> lock(mu_);
  PairMessage m = msg;
  if (m.u > m.v) std::swap(m.u, m.v);
  round_to_f32(m.embedding);
  const int dim = static_cast<int>(m.embedding.size());
  if (dim_ >= 0 && dim != dim_)
    throw std::invalid_argument("cache: embedding dimension " + std::to_string(dim) +
                                " does not match cache dimension " +
                                std::to_string(dim_));
  if (dim_ < 0) dim_ = dim;

  json j{{"u", m.u},
         {"v", m.v},
         {"model", m.model},
         {"text", m.text},
         {"emb_b64", embedding_to_b64(m.embedding)},
         {"dim", dim},
         {"tok_in", m.tokens_in},
         {"tok_out", m.tokens_out},
         {"ts", m.timestamp}};
  std::ofstream os(path_, std::ios::app);
  if (!os) throw std::runtime_error("cache: cannot append to " + path_);
  os << j.dump() << "\n";
  os.flush();
  index_[{m.u, m.v}] = std::move(m);
}

void MessageCache::compact() {
  std::lock_guard<std::mutex> lock(mu_);
  const std::string tmp = path_ + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw std::runtime_error("cache: cannot write " + tmp);
    for (const auto& [key, m] : index_) {
      json j{{"u", m.u},
             {"v", m.v},
             {"model", m.model},
             {"text", m.text},
             {"emb_b64", embedding_to_b64(m.embedding)},
             {"dim", static_cast<int>(m.embedding.size())},
             {"tok_in", m.tokens_in},
             {"tok_out", m.tokens_out},
             {"ts", m.timestamp}};
      os << j.dump() << "\n";
    }
  }
  if (std::rename(tmp.c_str(), path_.c_str()) != 0)
    throw std::runtime_error("cache: compaction rename failed");
}

size_t MessageCache::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return index_.size();
}

int MessageCache::dim() const {
  std::lock_guard<std::mutex> lock(mu_);
  return dim_;
}

std::vector<PairMessage> MessageCache::records() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<PairMessage> out;
  out.reserve(index_.size());
  for (const auto& [key, m] : index_) out.push_back(m);
  return out;
}

// --- cost & budget ---------------------------------------------------------------

double estimate_cost(const std::vector<TokenUsage>& usage, const Prices& prices) {
  long in = 0, out = 0;
  for (const auto& u : usage) {
    if (u.tokens_in < 0 || u.tokens_out < 0)
      throw std::invalid_argument("estimate_cost: negative token count");
    in += u.tokens_in;
    out += u.tokens_out;
  }
  if (prices.input_per_million < 0.0 || prices.output_per_million < 0.0)
    throw std::invalid_argument("estimate_cost: negative price");
  return (static_cast<double>(in) * prices.input_per_million +
          static_cast<double>(out) * prices.output_per_million) /
         1e6;
}

double estimate_cost(const std::vector<PairMessage>& messages, const Prices& prices) {
  std::vector<TokenUsage> usage;
  usage.reserve(messages.size());
  for (const auto& m : messages) usage.push_back({m.tokens_in, m.tokens_out});
  return estimate_cost(usage, prices);
}

BudgetLedger::BudgetLedger(long budget, Prices prices)
    : budget_(budget), prices_(prices) {
  if (budget < 0) throw std::invalid_argument("BudgetLedger: negative budget");
  rounds_.emplace_back();
}

long BudgetLedger::used() const {
  std::lock_guard<std::mutex> lock(mu_);
  return used_;
}

long BudgetLedger::remaining() const {
  std::lock_guard<std::mutex> lock(mu_);
  return budget_ - used_;
}

double BudgetLedger::cost() const {
  std::lock_guard<std::mutex> lock(mu_);
  return (static_cast<double>(total_in_) * prices_.input_per_million +
          static_cast<double>(total_out_) * prices_.output_per_million) /
         1e6;
}

void BudgetLedger::charge(long tokens_in, long tokens_out) {
  std::lock_guard<std::mutex> lock(mu_);
  if (used_ >= budget_)
    throw std::runtime_error("BudgetLedger: budget exhausted (" +
                             std::to_string(budget_) + " queries)");
  ++used_;
  total_in_ += tokens_in;
  total_out_ += tokens_out;
  rounds_.back().queries++;
  rounds_.back().tokens_in += tokens_in;
  rounds_.back().tokens_out += tokens_out;
}

void BudgetLedger::begin_round() {
  std::lock_guard<std::mutex> lock(mu_);
  rounds_.emplace_back();
}

std::vector<BudgetLedger::Round> BudgetLedger::history() const {
  std::lock_guard<std::mutex> lock(mu_);
  return rounds_;
}

// --- clocks & rate limiter ----------------------------------------------------------

double SystemClock::now() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void SystemClock::wait_until(double t) {
  const double dt = t - now();
  if (dt > 0) std::this_thread::sleep_for(std::chrono::duration<double>(dt));
}

RateLimiter::RateLimiter(double queries_per_minute, double tokens_per_minute,
                         int max_concurrent, std::shared_ptr<Clock> clock)
    : qpm_(queries_per_minute),
      tpm_(tokens_per_minute),
      max_concurrent_(max_concurrent),
      clock_(std::move(clock)) {
  if (!clock_) throw std::invalid_argument("RateLimiter: null clock");
}

void RateLimiter::acquire(long tokens) {
  if (tpm_ > 0 && tokens > static_cast<long>(tpm_))
    throw std::invalid_argument("RateLimiter: single request exceeds the token window");
  for (;;) {
    double target = 0.0;
    {
      std::lock_guard<std::mutex> lock(mu_);
      const double t = clock_->now();
      while (!window_.empty() && window_.front().time <= t - kWindow)
        window_.pop_front();

      bool ok = true;
      if (max_concurrent_ > 0 && in_flight_ >= max_concurrent_) {
        ok = false;
        target = t + 0.01;  // slot frees on release(); poll
      }
      if (ok && qpm_ > 0 && static_cast<double>(window_.size()) >= qpm_) {
        ok = false;
        target = std::max(target, window_.front().time + kWindow);
      }
      if (ok && tpm_ > 0) {
        long in_window = 0;
        for (const auto& d : window_) in_window += d.tokens;
        if (in_window + tokens > static_cast<long>(tpm_)) {
          ok = false;
          long freed = 0;
          for (const auto& d : window_) {
            freed += d.tokens;
            target = std::max(target, d.time + kWindow);
            if (in_window - freed + tokens <= static_cast<long>(tpm_)) break;
          }
        }
      }
      if (ok) {
        Dispatch d{t, tokens};
        window_.push_back(d);
        log_.push_back(d);
        ++in_flight_;
        return;
      }
    }
    clock_->wait_until(target);
  }
}

void RateLimiter::release() {
  std::lock_guard<std::mutex> lock(mu_);
  --in_flight_;
}

std::vector<RateLimiter::Dispatch> RateLimiter::log() const {
  std::lock_guard<std::mutex> lock(mu_);
  return log_;
}

// --- synthetic oracle -------------------------------------------------------------

long Provider::estimate_tokens(const std::string& text_a,
                               const std::string& text_b) const {
  return static_cast<long>((text_a.size() + text_b.size()) / 4 + 300);
}

SyntheticMode synthetic_mode_from_string(const std::string& s) {
  if (s == "mean") return SyntheticMode::Mean;
  if (s == "class-informative") return SyntheticMode::ClassInformative;
  throw std::invalid_argument("unknown synthetic mode: '" + s + "'");
}

PairMessage synthetic_oracle(int u, int v, const Tensor& features,
                             const std::vector<int>* labels, int num_classes,
                             SyntheticMode mode, uint64_t seed, double noise) {
  if (u < 0 || v < 0 || u >= features.rows || v >= features.rows)
    throw std::out_of_range("synthetic_oracle: endpoint without features");
  const int lo = std::min(u, v), hi = std::max(u, v);
  const int d = features.cols;
  std::vector<double> emb(d, 0.0);

  if (mode == SyntheticMode::Mean) {
    double norm = 0.0;
    for (int c = 0; c < d; ++c) {
      emb[c] = 0.5 * (features.at(lo, c) + features.at(hi, c));
      norm += emb[c] * emb[c];
    }
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (double& e : emb) e /= norm;
    if (noise > 0.0) {
      // keyed per pair: results are query-order independent
      auto rng = make_rng(seed, streams::kOracle,
                          splitmix64(static_cast<uint64_t>(lo) * 0x1f123bb5ULL + hi));
      std::normal_distribution<double> nd(0.0, noise);
      for (double& e : emb) e += nd(rng);
    }
  } else {
    if (!labels)
      throw std::invalid_argument("synthetic_oracle: class-informative mode needs labels");
    const int yu = (*labels)[lo], yv = (*labels)[hi];
    if (yu < 0 || yv < 0)
      throw std::invalid_argument("synthetic_oracle: endpoint without a label");
    Tensor proto(num_classes, d);
    std::vector<int> counts(num_classes, 0);
    for (int i = 0; i < features.rows; ++i) {
      const int y = (*labels)[i];
      if (y < 0) continue;
      ++counts[y];
      for (int c = 0; c < d; ++c) proto.at(y, c) += features.at(i, c);
    }
    for (int k = 0; k < num_classes; ++k)
      if (counts[k])
        for (int c = 0; c < d; ++c) proto.at(k, c) /= counts[k];
    for (int c = 0; c < d; ++c)
      emb[c] = 0.5 * (proto.at(yu, c) + proto.at(yv, c));
  }

  PairMessage m;
  m.u = lo;
  m.v = hi;
  m.model = "synthetic";
  m.text = "The relational implications between node " + std::to_string(lo) +
           " and node " + std::to_string(hi) +
           " are as below. Their feature profiles were compared in closed form; "
           "the shared embedding summarizes both endpoints.";
  m.embedding = std::move(emb);
  m.tokens_in = 64 + d / 2;
  m.tokens_out = static_cast<long>(m.text.size() / 4);
  m.timestamp = static_cast<int64_t>(std::time(nullptr));
  return m;
}

SyntheticProvider::SyntheticProvider(Tensor features, std::vector<int> labels,
                                     int num_classes, SyntheticMode mode,
                                     uint64_t seed, double noise)
    : features_(std::move(features)),
      labels_(std::move(labels)),
      num_classes_(num_classes),
      mode_(mode),
      seed_(seed),
      noise_(noise) {}

PairMessage SyntheticProvider::query(int u, int v, const std::string&,
                                     const std::string&, const PromptTemplate&) {
  return synthetic_oracle(u, v, features_, labels_.empty() ? nullptr : &labels_,
                          num_classes_, mode_, seed_, noise_);
}

// --- http provider -----------------------------------------------------------------

HttpProvider::HttpProvider(HttpProviderConfig cfg) : cfg_(std::move(cfg)) {
  const auto scheme_end = cfg_.base_url.find("://");
  if (scheme_end == std::string::npos)
    throw std::invalid_argument("HttpProvider: base_url needs a scheme");
  const auto path_start = cfg_.base_url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    origin_ = cfg_.base_url;
  } else {
    origin_ = cfg_.base_url.substr(0, path_start);
    path_prefix_ = cfg_.base_url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  }
}

std::string HttpProvider::post_json(const std::string& path, const std::string& body) {
  httplib::Client client(origin_);
  client.set_connection_timeout(cfg_.timeout_s);
  client.set_read_timeout(cfg_.timeout_s);
  httplib::Headers headers;
  if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key)
    headers.emplace("Authorization", std::string("Bearer ") + key);

  std::string last_error;
  double backoff = cfg_.backoff_initial_s;
  for (int attempt = 1; attempt <= cfg_.max_attempts; ++attempt) {
    auto res = client.Post(path_prefix_ + path, headers, body, "application/json");
    if (res && res->status >= 200 && res->status < 300) return res->body;
    bool transient = true;
    if (!res) {
      last_error = "transport error (" + httplib::to_string(res.error()) + ")";
    } else {
      last_error = "HTTP " + std::to_string(res->status);
      transient = res->status >= 500 || res->status == 429;
    }
    if (!transient || attempt == cfg_.max_attempts) break;
    std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
    backoff *= 2.0;
  }
  throw std::runtime_error("HttpProvider: POST " + path_prefix_ + path +
                           " failed after retries: " + last_error);
}

PairMessage HttpProvider::query(int u, int v, const std::string& text_a,
                                const std::string& text_b,
                                const PromptTemplate& tmpl) {
  const std::string prompt = render_prompt(tmpl, text_a, text_b);

  json chat_req{{"model", cfg_.chat_model},
                {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})}};
  json chat = json::parse(post_json("/chat/completions", chat_req.dump()));

  PairMessage m;
  m.u = std::min(u, v);
  m.v = std::max(u, v);
  m.model = cfg_.chat_model;
  try {
    m.text = chat.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("HttpProvider: malformed chat response: ") +
                             e.what());
  }
  if (chat.contains("usage")) {
    m.tokens_in = chat["usage"].value("prompt_tokens", 0L);
    m.tokens_out = chat["usage"].value("completion_tokens", 0L);
  } else {
    log_warn("chat response carried no usage block; token counts recorded as 0");
  }

  json emb_req{{"model", cfg_.embedding_model}, {"input", json::array({m.text})}};
  json emb = json::parse(post_json("/embeddings", emb_req.dump()));
  try {
    m.embedding = emb.at("data").at(0).at("embedding").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw std::runtime_error(
        std::string("HttpProvider: malformed embeddings response: ") + e.what());
  }
  if (emb.contains("usage"))
    m.tokens_in += emb["usage"].value("prompt_tokens", 0L);

  m.timestamp = static_cast<int64_t>(std::time(nullptr));
  return m;
}

// --- orchestration --------------------------------------------------------------------

std::vector<PairMessage> query_connection_analysis(
    const std::vector<std::pair<int, int>>& pairs,
    const std::vector<std::string>& texts, const PromptTemplate& tmpl,
    Provider& provider, MessageCache& cache, BudgetLedger& ledger,
    RateLimiter& rate, QueryStats* stats) {
  // dedupe to unordered pairs, preserving first-seen order
  std::vector<std::pair<int, int>> unique;
  {
    std::map<std::pair<int, int>, bool> seen;
    for (auto [u, v] : pairs) {
      if (u == v) throw std::invalid_argument("query_connection_analysis: self pair");
      auto key = std::minmax(u, v);
      if (!seen.emplace(std::pair{key.first, key.second}, true).second) continue;
      unique.emplace_back(key.first, key.second);
    }
  }

  std::vector<std::pair<int, int>> uncached;
  for (auto& p : unique) {
    if (cache.get(p.first, p.second)) {
      if (stats) stats->cache_hits++;
    } else {
      uncached.push_back(p);
    }
  }

  if (static_cast<long>(uncached.size()) > ledger.remaining())
    throw std::runtime_error(
        "query_connection_analysis: budget exhausted (" +
        std::to_string(uncached.size()) + " uncached pairs, " +
        std::to_string(ledger.remaining()) + " queries remaining)");

  if (!uncached.empty()) {
    const int workers = std::max(
        1, std::min<int>(rate.max_concurrent() > 0 ? rate.max_concurrent() : 8,
                         static_cast<int>(uncached.size())));
    std::atomic<size_t> next{0};
    std::atomic<bool> failed{false};
    std::atomic<int> calls{0};
    std::mutex err_mu;
    std::exception_ptr first_error;

    auto text_of = [&](int node) -> std::string {
      if (node < static_cast<int>(texts.size())) return texts[node];
      return {};
    };

    auto work = [&]() {
      for (;;) {
        if (failed.load()) return;
        const size_t i = next.fetch_add(1);
        if (i >= uncached.size()) return;
        const auto [u, v] = uncached[i];
        try {
          rate.acquire(provider.estimate_tokens(text_of(u), text_of(v)));
          PairMessage msg;
          try {
            msg = provider.query(u, v, text_of(u), text_of(v), tmpl);
          } catch (...) {
            rate.release();
            throw;
          }
          rate.release();
          cache.put(msg);
          ledger.charge(msg.tokens_in, msg.tokens_out);
          calls.fetch_add(1);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!first_error) first_error = std::current_exception();
          failed.store(true);
          return;
        }
      }
    };

    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
    if (stats) stats->provider_calls += calls.load();
    if (first_error) std::rethrow_exception(first_error);
  }

  std::vector<PairMessage> out;
  out.reserve(unique.size());
  for (auto& p : unique) {
    auto m = cache.get(p.first, p.second);
    if (!m)
      throw std::logic_error("query_connection_analysis: pair missing after dispatch");
    out.push_back(std::move(*m));
  }
  return out;
}

}  // namespace lemp
