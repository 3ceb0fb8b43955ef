#pragma once

// HTTP backends: an OpenAI-style chat-completion generator and an embedding
// similarity model. Requires cpp-httplib (httplib.h) on the include path and
// a thread library at link time.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <httplib.h>

#include "star/beam_search.hpp"
#include "star/errors.hpp"
#include "star/io.hpp"
#include "star/similarity.hpp"

namespace star {

struct HttpEndpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // /v1/chat/completions

  static HttpEndpoint parse(std::string_view url) {
    const auto scheme = url.find("://");
    if (scheme == std::string_view::npos) throw ValidationError("endpoint must include a scheme: " + std::string(url));
    const auto slash = url.find('/', scheme + 3);
    HttpEndpoint e;
    e.origin = std::string(url.substr(0, slash));
    e.path = slash == std::string_view::npos ? "/" : std::string(url.substr(slash));
    if (e.origin.size() <= scheme + 3) throw ValidationError("endpoint has no host: " + std::string(url));
    return e;
  }
};

inline std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

namespace detail {

inline io::json post_json(const HttpEndpoint& ep, const std::string& api_key, const io::json& body,
                          double timeout_seconds) {
  httplib::Client client(ep.origin);
  const auto timeout = std::chrono::duration<double>(timeout_seconds);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  httplib::Headers headers;
  if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
  auto res = client.Post(ep.path, headers, body.dump(), "application/json");
  if (!res) throw IoError("request to " + ep.origin + ep.path + " failed: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw IoError("request to " + ep.origin + ep.path + " returned HTTP " + std::to_string(res->status));
  try {
    return io::json::parse(res->body);
  } catch (const io::json::exception& e) {
    throw IoError("unparseable response from " + ep.origin + ep.path + ": " + e.what());
  }
}

}  // namespace detail

// Chat-completion client configured by STAR_LLM_ENDPOINT (full URL of the
// completions route), STAR_LLM_MODEL and optionally STAR_LLM_API_KEY.
class HttpChatGenerator final : public GeneratorClient {
 public:
  HttpChatGenerator(std::string endpoint, std::string model, std::string api_key = {})
      : endpoint_(HttpEndpoint::parse(endpoint)), model_(std::move(model)), api_key_(std::move(api_key)) {}

  static HttpChatGenerator from_env() {
    auto endpoint = env("STAR_LLM_ENDPOINT");
    auto model = env("STAR_LLM_MODEL");
    if (!endpoint || !model) throw ValidationError("the http client needs STAR_LLM_ENDPOINT and STAR_LLM_MODEL");
    return HttpChatGenerator(*endpoint, *model, env("STAR_LLM_API_KEY").value_or(""));
  }

  std::string id() const override { return "http:" + model_; }

  GenerationResponse generate(const GenerationRequest& request) override {
    const auto start = std::chrono::steady_clock::now();
    auto since = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
    const io::json body = {{"model", model_},
                           {"messages", io::json::array({{{"role", "user"}, {"content", request.prompt}}})},
                           {"temperature", request.params.temperature},
                           {"max_tokens", request.params.max_tokens}};
    io::json reply;
    try {
      reply = detail::post_json(endpoint_, api_key_, body, request.params.timeout_seconds);
    } catch (const IoError& e) {
      throw GenerationError(e.what(), since());
    }
    GenerationResponse out;
    try {
      out.text = reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const io::json::exception&) {
      throw GenerationError("response from " + id() + " has no choices[0].message.content", since());
    }
    // trim surrounding whitespace the model may add
    const auto b = out.text.find_first_not_of(" \t\r\n");
    const auto e = out.text.find_last_not_of(" \t\r\n");
    out.text = b == std::string::npos ? std::string{} : out.text.substr(b, e - b + 1);
    out.latency_seconds = since();
    return out;
  }

 private:
  HttpEndpoint endpoint_;
  std::string model_;
  std::string api_key_;
};

// Embeddings from an OpenAI-style /embeddings route, compared by cosine.
// Vectors are cached per text.
class HttpEmbeddingModel final : public SimilarityModel {
 public:
  HttpEmbeddingModel(std::string endpoint, std::string model, std::string api_key = {}, double timeout_seconds = 60)
      : endpoint_(HttpEndpoint::parse(endpoint)),
        model_(std::move(model)),
        api_key_(std::move(api_key)),
        timeout_(timeout_seconds) {}

  static HttpEmbeddingModel from_env() {
    auto endpoint = env("STAR_EMBED_ENDPOINT");
    auto model = env("STAR_EMBED_MODEL");
    if (!endpoint || !model) throw ValidationError("the http embedder needs STAR_EMBED_ENDPOINT and STAR_EMBED_MODEL");
    return HttpEmbeddingModel(*endpoint, *model, env("STAR_EMBED_API_KEY").value_or(""));
  }

  std::string backend_id() const override { return "http:" + model_; }
  std::size_t dimension() const override { return dimension_; }

  std::vector<double> embed(std::string_view text) const {
    std::lock_guard<std::mutex> lock(mutex_);
    if (auto it = cache_.find(std::string(text)); it != cache_.end()) return it->second;
    const io::json reply = detail::post_json(endpoint_, api_key_, {{"model", model_}, {"input", text}}, timeout_);
    std::vector<double> v;
    try {
      v = reply.at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const io::json::exception&) {
      throw IoError("embedding response from " + backend_id() + " has no data[0].embedding");
    }
    if (v.empty()) throw IoError("empty embedding from " + backend_id());
    if (dimension_ == 0) dimension_ = v.size();
    if (v.size() != dimension_) throw IoError("embedding dimension changed between requests");
    cache_.emplace(std::string(text), v);
    return v;
  }

 protected:
  double similarity(std::string_view a, std::string_view b) const override {
    const auto va = embed(a);
    const auto vb = embed(b);
    return cosine(va, vb);
  }

 private:
  HttpEndpoint endpoint_;
  std::string model_;
  std::string api_key_;
  double timeout_;
  mutable std::mutex mutex_;
  mutable std::map<std::string, std::vector<double>> cache_;
  mutable std::size_t dimension_ = 0;
};

}  // namespace star
