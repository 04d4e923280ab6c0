#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "evrep/error.hpp"
#include "evrep/hashing.hpp"
#include "evrep/image.hpp"
#include "evrep/parallel.hpp"
#include "evrep/png_io.hpp"
#include "evrep/random.hpp"

namespace evrep {

inline constexpr std::string_view kCaptionPrompt = "Describe the main object in this image in one sentence.";
inline constexpr std::string_view kRecognitionPromptPrefix =
    "Which one of the following categories best matches the image? Answer with the category name only: ";

struct CaptionRequest {
  Image image;
  std::string prompt{kCaptionPrompt};
  int max_tokens = 64;
  double temperature = 0.0;
};

struct TokenUsage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct LLMResponse {
  std::string text;
  std::string backend_id;
  double latency_ms = 0.0;
  std::optional<TokenUsage> usage;
};

/// A frozen vision-language model. The interface is read-only: callers can
/// query it but never push anything that would alter the model.
class Backend {
 public:
  virtual ~Backend() = default;

  LLMResponse complete(const CaptionRequest& req) {
    calls_.fetch_add(1, std::memory_order_relaxed);
    const auto start = std::chrono::steady_clock::now();
    auto resp = do_complete(req);
    resp.backend_id = id();
    resp.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return resp;
  }

  virtual std::string id() const = 0;
  /// Upper bound on simultaneous in-flight requests callers should use.
  virtual std::size_t concurrency_cap() const { return 1; }
  std::uint64_t call_count() const noexcept { return calls_.load(std::memory_order_relaxed); }

 protected:
  virtual LLMResponse do_complete(const CaptionRequest& req) = 0;

 private:
  std::atomic<std::uint64_t> calls_{0};
};

inline std::string recognition_prompt(const std::vector<std::string>& class_list) {
  std::string p(kRecognitionPromptPrefix);
  for (std::size_t i = 0; i < class_list.size(); ++i) {
    if (i) p += ", ";
    p += class_list[i];
  }
  return p + ".";
}

/// Recovers the class list from a recognition prompt, or nullopt if the
/// prompt is not one.
inline std::optional<std::vector<std::string>> classes_from_prompt(std::string_view prompt) {
  if (!prompt.starts_with(kRecognitionPromptPrefix)) return std::nullopt;
  std::string_view list = prompt.substr(kRecognitionPromptPrefix.size());
  if (list.ends_with('.')) list.remove_suffix(1);
  std::vector<std::string> out;
  while (!list.empty()) {
    const auto comma = list.find(", ");
    out.emplace_back(list.substr(0, comma));
    if (comma == std::string_view::npos) break;
    list.remove_prefix(comma + 2);
  }
  return out;
}

inline LLMResponse caption(Backend& backend, const CaptionRequest& req) {
  if (req.max_tokens <= 0) throw Error(Errc::Precondition, "max_tokens must be positive");
  if (!values_in_unit_range(req.image)) throw Error(Errc::Precondition, "caption image values outside [0,1]");
  return backend.complete(req);
}

inline LLMResponse recognize(Backend& backend, const Image& image, const std::vector<std::string>& class_list,
                             int max_tokens = 32) {
  if (class_list.empty()) throw Error(Errc::Precondition, "recognition needs a nonempty class list");
  return caption(backend, {image, recognition_prompt(class_list), max_tokens, 0.0});
}

/// Case-insensitive whole-word search for each class name ('_' matches a
/// space). The earliest match in the text wins; equal positions go to the
/// class listed first. nullopt means Unknown.
inline std::optional<std::string> parse_prediction(std::string_view text, const std::vector<std::string>& class_list) {
  auto normalize = [](std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = c == '_' ? ' ' : char(std::tolower(static_cast<unsigned char>(c)));
    return out;
  };
  auto is_word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
  const std::string hay = normalize(text);
  std::optional<std::size_t> best_pos, best_cls;
  for (std::size_t k = 0; k < class_list.size(); ++k) {
    const std::string needle = normalize(class_list[k]);
    if (needle.empty()) continue;
    for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
      const bool left_ok = pos == 0 || !is_word(hay[pos - 1]);
      const std::size_t end = pos + needle.size();
      const bool right_ok = end == hay.size() || !is_word(hay[end]);
      if (left_ok && right_ok) {
        if (!best_pos || pos < *best_pos) {
          best_pos = pos;
          best_cls = k;
        }
        break;
      }
    }
  }
  if (!best_cls) return std::nullopt;
  return class_list[*best_cls];
}

// ---------------------------------------------------------------------------
// Mock backend
// ---------------------------------------------------------------------------

/// Deterministic stand-in for a vision-language model.
///
/// Captions describe image statistics. The image is cut into a 3x3 grid and
/// each cell's mean gray level (0.299 R + 0.587 G + 0.114 B) computed. When
/// the cells differ by less than `uniform_tolerance` the caption is
/// "uniform dark image" or "uniform bright image" (mean below / at least
/// 0.5). Otherwise it is "bright region <cell>, <channel> dominant", naming
/// the brightest cell and the channel with the highest image mean.
///
/// Recognition prompts are answered with the class whose FNV-1a name hash is
/// numerically nearest the FNV-1a hash of the image's content hash.
class MockBackend final : public Backend {
 public:
  explicit MockBackend(double uniform_tolerance = 0.05) : tolerance_(uniform_tolerance) {}

  std::string id() const override { return "mock"; }
  std::size_t concurrency_cap() const override { return 4; }

  static constexpr std::array<const char*, 9> kCellNames = {
      "top left", "top center", "top right", "middle left", "center",
      "middle right", "bottom left", "bottom center", "bottom right"};

  std::string describe(const Image& img) const {
    std::array<double, 9> sum{};
    std::array<std::size_t, 9> count{};
    std::array<double, 3> channel{};
    for (int y = 0; y < img.height; ++y) {
      const int row = std::min(2, y * 3 / std::max(1, img.height));
      for (int x = 0; x < img.width; ++x) {
        const int col = std::min(2, x * 3 / std::max(1, img.width));
        const double r = img.at(y, x, 0), g = img.at(y, x, 1), b = img.at(y, x, 2);
        sum[row * 3 + col] += 0.299 * r + 0.587 * g + 0.114 * b;
        ++count[row * 3 + col];
        channel[0] += r;
        channel[1] += g;
        channel[2] += b;
      }
    }
    double lo = 1e300, hi = -1e300, total = 0;
    std::size_t brightest = 0, pixels = 0;
    for (std::size_t i = 0; i < 9; ++i) {
      if (!count[i]) continue;
      const double m = sum[i] / double(count[i]);
      if (m > hi) {
        hi = m;
        brightest = i;
      }
      lo = std::min(lo, m);
      total += sum[i];
      pixels += count[i];
    }
    if (pixels == 0 || hi - lo < tolerance_) {
      const double mean = pixels ? total / double(pixels) : 0.0;
      return mean < 0.5 ? "uniform dark image" : "uniform bright image";
    }
    static constexpr const char* kChannelNames[] = {"red", "green", "blue"};
    const auto dominant = std::max_element(channel.begin(), channel.end()) - channel.begin();
    return std::string("bright region ") + kCellNames[brightest] + ", " + kChannelNames[dominant] + " dominant";
  }

  static std::string nearest_class(const Image& img, const std::vector<std::string>& classes) {
    const std::uint64_t h = fnv1a64(image_sha256(img));
    std::size_t best = 0;
    std::uint64_t best_d = ~0ull;
    for (std::size_t i = 0; i < classes.size(); ++i) {
      const std::uint64_t c = fnv1a64(classes[i]);
      const std::uint64_t d = c > h ? c - h : h - c;
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return classes.empty() ? std::string() : classes[best];
  }

 protected:
  LLMResponse do_complete(const CaptionRequest& req) override {
    if (auto classes = classes_from_prompt(req.prompt)) return {nearest_class(req.image, *classes), {}, 0.0, {}};
    return {describe(req.image), {}, 0.0, {}};
  }

 private:
  double tolerance_;
};

// ---------------------------------------------------------------------------
// Record / replay
// ---------------------------------------------------------------------------

struct FixtureEntry {
  std::string prompt_sha256;
  std::string image_sha256;
  std::string text;
};

inline std::string fixture_key(const std::string& prompt_sha, const std::string& image_sha) {
  return prompt_sha + ":" + image_sha;
}

inline std::string fixture_line(const FixtureEntry& e) {
  return nlohmann::json{{"prompt_sha256", e.prompt_sha256}, {"image_sha256", e.image_sha256}, {"text", e.text}}
      .dump();
}

/// Serves responses from a JSON-lines fixture keyed by (prompt sha256, image
/// sha256). When a key repeats, the first line wins.
class ReplayBackend final : public Backend {
 public:
  explicit ReplayBackend(const std::filesystem::path& fixture) : path_(fixture) {
    std::ifstream in(fixture);
    if (!in) throw Error(Errc::IOFailure, "cannot open replay fixture " + fixture.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        entries_.emplace(fixture_key(j.at("prompt_sha256"), j.at("image_sha256")), j.at("text").get<std::string>());
      } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::MalformedRow, fixture.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  }

  explicit ReplayBackend(const std::vector<FixtureEntry>& entries) : path_("<memory>") {
    for (const auto& e : entries) entries_.emplace(fixture_key(e.prompt_sha256, e.image_sha256), e.text);
  }

  std::string id() const override { return "replay"; }
  std::size_t concurrency_cap() const override { return 4; }
  std::size_t size() const noexcept { return entries_.size(); }

 protected:
  LLMResponse do_complete(const CaptionRequest& req) override {
    const auto key = fixture_key(sha256_hex(req.prompt), image_sha256(req.image));
    auto it = entries_.find(key);
    if (it == entries_.end()) throw Error(Errc::ReplayMiss, "no fixture entry for " + key + " in " + path_.string());
    return {it->second, {}, 0.0, {}};
  }

 private:
  std::filesystem::path path_;
  std::map<std::string, std::string> entries_;
};

/// Forwards to another backend and appends every exchange to a fixture file
/// that ReplayBackend can read back.
class RecordingBackend final : public Backend {
 public:
  RecordingBackend(Backend& inner, const std::filesystem::path& fixture) : inner_(inner), out_(fixture, std::ios::app) {
    if (!out_) throw Error(Errc::IOFailure, "cannot open fixture for appending: " + fixture.string());
  }

  std::string id() const override { return inner_.id(); }
  std::size_t concurrency_cap() const override { return inner_.concurrency_cap(); }

 protected:
  LLMResponse do_complete(const CaptionRequest& req) override {
    auto resp = inner_.complete(req);
    std::lock_guard lock(mu_);
    out_ << fixture_line({sha256_hex(req.prompt), image_sha256(req.image), resp.text}) << '\n';
    out_.flush();
    return resp;
  }

 private:
  Backend& inner_;
  std::mutex mu_;
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// OpenAI-compatible HTTP backend
// ---------------------------------------------------------------------------

enum class BackendKind { http, mock, replay };

inline BackendKind parse_backend_kind(std::string_view s) {
  if (s == "http") return BackendKind::http;
  if (s == "mock") return BackendKind::mock;
  if (s == "replay") return BackendKind::replay;
  throw Error(Errc::InvalidConfig, "unknown backend kind '" + std::string(s) + "'");
}

struct BackendConfig {
  BackendKind kind = BackendKind::mock;
  std::string endpoint;                      // e.g. http://127.0.0.1:8000/v1
  std::string model;
  std::string api_key_env = "OPENAI_API_KEY";  // name of the variable, never the key
  double timeout_s = 60.0;
  int max_retries = 3;
  std::size_t concurrency = 4;
  double backoff_initial_ms = 500.0;
  std::optional<int> max_image_side;  // downscale images before upload
  std::filesystem::path fixture;      // replay source

  void validate() const {
    if (kind == BackendKind::http && (endpoint.empty() || model.empty())) {
      throw Error(Errc::InvalidConfig, "http backend requires endpoint and model");
    }
    if (kind == BackendKind::replay && fixture.empty()) throw Error(Errc::InvalidConfig, "replay backend requires a fixture");
    if (concurrency == 0) throw Error(Errc::InvalidConfig, "concurrency cap must be >= 1");
    if (max_retries < 0) throw Error(Errc::InvalidConfig, "max_retries must be >= 0");
  }
};

namespace detail {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // without trailing slash
};

inline ParsedUrl parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(Errc::InvalidConfig, "endpoint must include a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl out{url.substr(0, path_start), path_start == std::string::npos ? "" : url.substr(path_start)};
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  return out;
}

inline std::string extract_content(const nlohmann::json& body) {
  const auto& content = body.at("choices").at(0).at("message").at("content");
  if (content.is_string()) return content.get<std::string>();
  std::string text;
  for (const auto& part : content) {
    if (part.value("type", "") == "text") text += part.value("text", "");
  }
  return text;
}

}  // namespace detail

/// POSTs {endpoint}/chat/completions with the image inlined as a base64 PNG
/// data URL. 429, 5xx and transport errors are retried with exponential
/// backoff; other statuses surface immediately.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(BackendConfig cfg)
      : cfg_(std::move(cfg)), url_(detail::parse_url(cfg_.endpoint)), slots_(std::ptrdiff_t(cfg_.concurrency)) {
    cfg_.validate();
  }

  std::string id() const override { return "http:" + cfg_.model; }
  std::size_t concurrency_cap() const override { return cfg_.concurrency; }

  nlohmann::json request_body(const CaptionRequest& req) const {
    Image img = req.image;
    if (cfg_.max_image_side && std::max(img.height, img.width) > *cfg_.max_image_side) {
      const double s = double(*cfg_.max_image_side) / std::max(img.height, img.width);
      img = resize_bilinear(img, std::max(1, int(img.height * s)), std::max(1, int(img.width * s)));
    }
    const auto png = encode_png(img);
    const std::string data_url = "data:image/png;base64," + base64_encode(png);
    return {{"model", cfg_.model},
            {"messages",
             {{{"role", "user"},
               {"content",
                {{{"type", "text"}, {"text", req.prompt}},
                 {{"type", "image_url"}, {"image_url", {{"url", data_url}}}}}}}}},
            {"temperature", req.temperature},
            {"max_tokens", req.max_tokens}};
  }

 protected:
  LLMResponse do_complete(const CaptionRequest& req) override {
    const std::string body = request_body(req).dump();
    httplib::Headers headers;
    if (!cfg_.api_key_env.empty()) {
      if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
      }
    }
    slots_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{slots_};

    double backoff = cfg_.backoff_initial_ms;
    for (int attempt = 0;; ++attempt) {
      httplib::Client client(url_.origin);
      const auto timeout = std::chrono::duration<double>(cfg_.timeout_s);
      client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
      auto res = client.Post(url_.path + "/chat/completions", headers, body, "application/json");

      std::optional<Error> failure;
      if (!res) {
        failure = Error(Errc::Timeout, "request to " + cfg_.endpoint + " failed: " + httplib::to_string(res.error()));
      } else if (res->status == 429) {
        failure = Error(Errc::RateLimited, "rate limited by " + cfg_.endpoint);
      } else if (res->status >= 500) {
        failure = Error(Errc::HTTPError, "status " + std::to_string(res->status) + " from " + cfg_.endpoint);
      } else if (res->status != 200) {
        throw Error(Errc::HTTPError, "status " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
      } else {
        try {
          const auto j = nlohmann::json::parse(res->body);
          LLMResponse out;
          out.text = detail::extract_content(j);
          if (j.contains("usage")) {
            out.usage = TokenUsage{j["usage"].value("prompt_tokens", 0), j["usage"].value("completion_tokens", 0)};
          }
          return out;
        } catch (const nlohmann::json::exception& e) {
          throw Error(Errc::HTTPError, std::string("malformed completion body: ") + e.what());
        }
      }
      if (attempt >= cfg_.max_retries) throw *failure;
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(backoff));
      backoff *= 2;
    }
  }

 private:
  BackendConfig cfg_;
  detail::ParsedUrl url_;
  std::counting_semaphore<> slots_;
};

inline std::unique_ptr<Backend> make_backend(const BackendConfig& cfg) {
  cfg.validate();
  switch (cfg.kind) {
    case BackendKind::mock: return std::make_unique<MockBackend>();
    case BackendKind::replay: return std::make_unique<ReplayBackend>(cfg.fixture);
    case BackendKind::http: return std::make_unique<HttpBackend>(cfg);
  }
  throw Error(Errc::InvalidConfig, "unhandled backend kind");
}

/// Outcome of one request in a batch; `id` is the request's input index.
struct CompletedRequest {
  std::size_t id = 0;
  std::optional<LLMResponse> response;
  std::optional<Error> error;
};

/// Issues all requests with at most backend.concurrency_cap() in flight and
/// returns the outcomes in completion order.
inline std::vector<CompletedRequest> caption_batch(Backend& backend, const std::vector<CaptionRequest>& requests) {
  std::vector<CompletedRequest> done;
  done.reserve(requests.size());
  std::mutex mu;
  parallel_for(requests.size(), backend.concurrency_cap(), [&](std::size_t i) {
    CompletedRequest r{i, std::nullopt, std::nullopt};
    try {
      r.response = caption(backend, requests[i]);
    } catch (const Error& e) {
      r.error = e;
    }
    std::lock_guard lock(mu);
    done.push_back(std::move(r));
  });
  return done;
}

}  // namespace evrep
