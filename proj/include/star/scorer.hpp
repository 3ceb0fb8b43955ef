#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "star/errors.hpp"
#include "star/io.hpp"
#include "star/kg.hpp"
#include "star/nn.hpp"
#include "star/path_scorer.hpp"
#include "star/similarity.hpp"

namespace star {

// Word-level vocabulary. The first six ids are the special tokens.
class Vocabulary {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kCls = 1;
  static constexpr int kSep = 2;
  static constexpr int kQsp = 3;
  static constexpr int kPsp = 4;
  static constexpr int kEop = 5;
  static constexpr std::size_t kSpecialCount = 6;

  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

  // `words` excludes the special tokens; order is preserved.
  explicit Vocabulary(std::vector<std::string> words) {
    tokens_ = {"[UNK]", std::string(kClsToken), std::string(kSepToken),
               std::string(kQspToken), std::string(kPspToken), std::string(kEopToken)};
    for (auto& w : words) tokens_.push_back(std::move(w));
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
        throw ValidationError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }

  // Sorted distinct words of all texts.
  static Vocabulary from_texts(std::span<const std::string> texts) {
    std::vector<std::string> words;
    for (const auto& t : texts)
      for (auto& w : word_tokens(t)) words.push_back(std::move(w));
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    return Vocabulary(std::move(words));
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  int id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
  }

  std::vector<std::string> words() const { return {tokens_.begin() + kSpecialCount, tokens_.end()}; }

  // Whitespace chunks that are exactly a special token map to it; everything
  // else is split into lowercase alphanumeric words.
  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
      std::size_t j = i;
      while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
      if (j == i) break;
      std::string_view chunk = text.substr(i, j - i);
      int special = special_id(chunk);
      if (special >= 0) {
        ids.push_back(special);
      } else {
        for (const auto& w : word_tokens(chunk)) ids.push_back(id(w));
      }
      i = j;
    }
    return ids;
  }

 private:
  static int special_id(std::string_view chunk) {
    if (chunk == kClsToken) return kCls;
    if (chunk == kSepToken) return kSep;
    if (chunk == kQspToken) return kQsp;
    if (chunk == kPspToken) return kPsp;
    if (chunk == kEopToken) return kEop;
    return -1;
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct ScorerConfig {
  std::size_t hidden = 64;   // d
  std::size_t key_dim = 64;  // d_k of the cross-attention projections
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn = 128;     // backbone feed-forward width
  std::size_t max_len = 64;
  std::uint64_t seed = 7;
  std::string backbone_id = "tiny-transformer-v1";

  void validate() const {
    if (hidden < 1 || key_dim < 1) throw ValidationError("hidden and key dimensions must be >= 1");
    if (heads < 1 || hidden % heads != 0) throw ValidationError("heads must divide the hidden dimension");
    if (ffn < 1) throw ValidationError("ffn width must be >= 1");
    if (max_len < 7) throw ValidationError("max_len must leave room for one query and one path token");
  }
};

inline io::json to_json(const ScorerConfig& c) {
  return {{"hidden", c.hidden}, {"key_dim", c.key_dim}, {"layers", c.layers},  {"heads", c.heads},
          {"ffn", c.ffn},       {"max_len", c.max_len}, {"seed", c.seed},       {"backbone_id", c.backbone_id}};
}

inline ScorerConfig scorer_config_from_json(const io::json& j) {
  ScorerConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.key_dim = j.value("key_dim", c.key_dim);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.ffn = j.value("ffn", c.ffn);
  c.max_len = j.value("max_len", c.max_len);
  c.seed = j.value("seed", c.seed);
  c.backbone_id = j.value("backbone_id", c.backbone_id);
  return c;
}

// [CLS] [SEP] [QSP] query... [SEP] [PSP] path...
struct InputSequence {
  std::vector<int> ids;
  std::size_t cls = 0;
  std::size_t qsp = 2;
  std::size_t psp = 0;
  std::size_t query_begin = 3;
  std::size_t query_end = 3;
  std::size_t path_begin = 0;
  std::size_t path_end = 0;

  std::size_t query_len() const { return query_end - query_begin; }
  std::size_t path_len() const { return path_end - path_begin; }
};

inline constexpr std::size_t kSpecialsPerSequence = 5;

// Overflow drops path tokens from the tail first, then query tokens; specials
// and at least one token of each span always survive.
inline InputSequence build_input_sequence(const Vocabulary& vocab, std::size_t max_len, std::string_view query,
                                          std::string_view path_text) {
  if (max_len < kSpecialsPerSequence + 2) throw ValidationError("max_len too small");
  std::vector<int> q = vocab.encode(query);
  std::vector<int> p = vocab.encode(path_text);
  if (q.empty()) q.push_back(Vocabulary::kUnk);
  if (p.empty()) p.push_back(Vocabulary::kUnk);
  const std::size_t budget = max_len - kSpecialsPerSequence;
  if (q.size() + p.size() > budget) {
    p.resize(std::max<std::size_t>(1, budget > q.size() ? budget - q.size() : 1));
    if (q.size() + p.size() > budget) q.resize(budget - p.size());
  }

  InputSequence seq;
  seq.ids = {Vocabulary::kCls, Vocabulary::kSep, Vocabulary::kQsp};
  seq.ids.insert(seq.ids.end(), q.begin(), q.end());
  seq.query_end = seq.ids.size();
  seq.ids.push_back(Vocabulary::kSep);
  seq.psp = seq.ids.size();
  seq.ids.push_back(Vocabulary::kPsp);
  seq.path_begin = seq.ids.size();
  seq.ids.insert(seq.ids.end(), p.begin(), p.end());
  seq.path_end = seq.ids.size();
  return seq;
}

inline InputSequence build_input_sequence(const Vocabulary& vocab, std::size_t max_len, std::string_view query,
                                          const KnowledgeGraph& g, const Path& path) {
  return build_input_sequence(vocab, max_len, query, serialize_path(g, path));
}

struct AttentionResult {
  nn::RowVector output;  // 1 x d, combination of the raw value rows
  nn::Vector weights;    // n, a probability vector
};

// softmax((probe W_Q)(rows W_K)^T / sqrt(d_k)) rows. There is no value projection.
inline AttentionResult cross_attention(const Eigen::Ref<const nn::Matrix>& w_q, const Eigen::Ref<const nn::Matrix>& w_k,
                                       const nn::RowVector& probe, const Eigen::Ref<const nn::Matrix>& rows,
                                       nn::RowVector* projected_probe = nullptr, nn::Matrix* projected_keys = nullptr) {
  if (rows.rows() == 0) throw ValidationError("cross-attention over an empty span");
  const double scale = 1.0 / std::sqrt(static_cast<double>(w_q.cols()));
  nn::RowVector t = probe * w_q;
  nn::Matrix keys = rows * w_k;
  nn::Vector logits = (keys * t.transpose()) * scale;
  AttentionResult r;
  r.weights = nn::softmax(logits);
  r.output = r.weights.transpose() * rows;
  if (projected_probe) *projected_probe = std::move(t);
  if (projected_keys) *projected_keys = std::move(keys);
  return r;
}

class CrossAttentiveScorer final : public PathScorer {
 public:
  struct LayerSlots {
    std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  struct Slots {
    std::size_t tok_emb, pos_emb;
    std::vector<LayerSlots> layers;
    std::size_t lnf_g, lnf_b;
    std::size_t qsp_wq, qsp_wk, psp_wq, psp_wk;
    std::size_t head_w1, head_b1, head_w2, head_b2;
  };

  struct LayerCache {
    nn::LayerNormCache ln1, ln2;
    nn::Matrix a, q, k, v, o, b, u, g;
    std::vector<nn::Matrix> probs;
  };
  struct CrossCache {
    nn::RowVector probe, projected_probe, output;
    nn::Matrix keys;
    nn::Vector weights;
  };
  struct Cache {
    InputSequence seq;
    std::vector<LayerCache> layers;
    nn::LayerNormCache lnf;
    nn::Matrix hidden;
    CrossCache qsp, psp;
    nn::RowVector concat, u, g;
    double score = 0;
  };

  // Fresh, seeded initialization.
  CrossAttentiveScorer(ScorerConfig cfg, Vocabulary vocab) : cfg_(std::move(cfg)), vocab_(std::move(vocab)) {
    cfg_.validate();
    build_layout();
    params_ = nn::Parameters(layout_);
    initialize();
  }

  CrossAttentiveScorer(ScorerConfig cfg, Vocabulary vocab, std::vector<double> values)
      : cfg_(std::move(cfg)), vocab_(std::move(vocab)) {
    cfg_.validate();
    build_layout();
    params_ = nn::Parameters(layout_);
    if (values.size() != params_.size()) throw ValidationError("parameter count does not match the configuration");
    params_.data() = std::move(values);
  }

  const ScorerConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  const Slots& slots() const { return slots_; }
  nn::Parameters& params() { return params_; }
  const nn::Parameters& params() const { return params_; }

  InputSequence sequence(std::string_view query, std::string_view path_text) const {
    return build_input_sequence(vocab_, cfg_.max_len, query, path_text);
  }

  double score_text(std::string_view query, std::string_view path_text) const {
    return forward(sequence(query, path_text), nullptr);
  }

  double score(std::string_view query, const KnowledgeGraph& g, const Path& p) const {
    return score_text(query, serialize_path(g, p));
  }

  // Sequences are encoded one at a time, so no padding ever enters a result.
  std::vector<double> score_batch(std::string_view query, std::span<const std::string> paths) const override {
    std::vector<double> out;
    out.reserve(paths.size());
    for (const auto& p : paths) out.push_back(score_text(query, p));
    return out;
  }

  // Contextual hidden states, one row per token.
  nn::Matrix encode(const InputSequence& seq) const {
    Cache c;
    run_backbone(seq, nullptr, c.hidden);
    return c.hidden;
  }

  double forward(const InputSequence& seq, Cache* cache) const {
    if (seq.ids.size() > cfg_.max_len) throw ValidationError("sequence longer than max_len");
    Cache local;
    Cache& c = cache ? *cache : local;
    c.seq = seq;
    run_backbone(seq, cache, c.hidden);
    const nn::Matrix& h = c.hidden;
    const auto d = static_cast<Eigen::Index>(cfg_.hidden);

    auto attend = [&](std::size_t wq, std::size_t wk, std::size_t probe_row, std::size_t begin, std::size_t end,
                      CrossCache& cc) {
      cc.probe = h.row(static_cast<Eigen::Index>(probe_row));
      auto rows = h.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin));
      AttentionResult r = cross_attention(params_[wq], params_[wk], cc.probe, rows, &cc.projected_probe, &cc.keys);
      cc.output = std::move(r.output);
      cc.weights = std::move(r.weights);
    };
    attend(slots_.qsp_wq, slots_.qsp_wk, seq.qsp, seq.query_begin, seq.query_end, c.qsp);
    attend(slots_.psp_wq, slots_.psp_wk, seq.psp, seq.path_begin, seq.path_end, c.psp);

    c.concat.resize(3 * d);
    c.concat << h.row(static_cast<Eigen::Index>(seq.cls)), c.qsp.probe + c.qsp.output, c.psp.probe + c.psp.output;
    c.u = c.concat * params_[slots_.head_w1] + params_[slots_.head_b1];
    c.g = c.u.unaryExpr([](double x) { return nn::gelu(x); });
    const double z = (c.g * params_[slots_.head_w2])(0, 0) + params_[slots_.head_b2](0, 0);
    c.score = nn::sigmoid(z);
    return c.score;
  }

  // Accumulates d(loss)/d(params) into grad given d(loss)/d(score).
  void backward(const Cache& c, double d_score, nn::Parameters& grad) const {
    const auto d = static_cast<Eigen::Index>(cfg_.hidden);
    const InputSequence& seq = c.seq;
    const double dz = d_score * c.score * (1.0 - c.score);
    grad[slots_.head_w2] += c.g.transpose() * dz;
    grad[slots_.head_b2](0, 0) += dz;
    nn::RowVector dg = dz * params_[slots_.head_w2].transpose();
    nn::RowVector du = dg.array() * c.u.unaryExpr([](double x) { return nn::gelu_grad(x); }).array();
    grad[slots_.head_w1] += c.concat.transpose() * du;
    grad[slots_.head_b1] += du;
    nn::RowVector dc = du * params_[slots_.head_w1].transpose();

    nn::Matrix dh = nn::Matrix::Zero(c.hidden.rows(), c.hidden.cols());
    dh.row(static_cast<Eigen::Index>(seq.cls)) += dc.segment(0, d);
    auto cross_back = [&](std::size_t wq, std::size_t wk, const CrossCache& cc, const nn::RowVector& dout,
                          std::size_t probe_row, std::size_t begin, std::size_t end) {
      const auto n = static_cast<Eigen::Index>(end - begin);
      const auto b = static_cast<Eigen::Index>(begin);
      const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.key_dim));
      auto rows = c.hidden.middleRows(b, n);
      // residual path
      dh.row(static_cast<Eigen::Index>(probe_row)) += dout;
      nn::Vector da = rows * dout.transpose();
      nn::Matrix drows = cc.weights * dout;
      nn::Vector dlogits = cc.weights.array() * (da.array() - cc.weights.dot(da));
      nn::Matrix dkeys = dlogits * cc.projected_probe * scale;
      nn::RowVector dt = dlogits.transpose() * cc.keys * scale;
      grad[wk] += rows.transpose() * dkeys;
      drows += dkeys * params_[wk].transpose();
      grad[wq] += cc.probe.transpose() * dt;
      dh.row(static_cast<Eigen::Index>(probe_row)) += dt * params_[wq].transpose();
      dh.middleRows(b, n) += drows;
    };
    cross_back(slots_.qsp_wq, slots_.qsp_wk, c.qsp, dc.segment(d, d), seq.qsp, seq.query_begin, seq.query_end);
    cross_back(slots_.psp_wq, slots_.psp_wk, c.psp, dc.segment(2 * d, d), seq.psp, seq.path_begin, seq.path_end);

    nn::Matrix dx = nn::layer_norm_backward(dh, c.lnf, params_[slots_.lnf_g], grad[slots_.lnf_g], grad[slots_.lnf_b]);
    for (std::size_t l = cfg_.layers; l-- > 0;) dx = layer_backward(slots_.layers[l], c.layers[l], dx, grad);
    auto tok = grad[slots_.tok_emb];
    auto pos = grad[slots_.pos_emb];
    for (std::size_t i = 0; i < seq.ids.size(); ++i) {
      tok.row(seq.ids[i]) += dx.row(static_cast<Eigen::Index>(i));
      pos.row(static_cast<Eigen::Index>(i)) += dx.row(static_cast<Eigen::Index>(i));
    }
  }

 private:
  void build_layout() {
    auto layout = std::make_shared<nn::ParameterLayout>();
    const auto d = static_cast<Eigen::Index>(cfg_.hidden);
    const auto dk = static_cast<Eigen::Index>(cfg_.key_dim);
    const auto f = static_cast<Eigen::Index>(cfg_.ffn);
    slots_.tok_emb = layout->add("backbone.token_embedding", static_cast<Eigen::Index>(vocab_.size()), d);
    slots_.pos_emb = layout->add("backbone.position_embedding", static_cast<Eigen::Index>(cfg_.max_len), d);
    slots_.layers.clear();
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = "backbone.layer" + std::to_string(l) + ".";
      LayerSlots s{};
      s.ln1_g = layout->add(p + "ln1.gamma", 1, d);
      s.ln1_b = layout->add(p + "ln1.beta", 1, d);
      s.wq = layout->add(p + "attn.wq", d, d);
      s.bq = layout->add(p + "attn.bq", 1, d);
      s.wk = layout->add(p + "attn.wk", d, d);
      s.bk = layout->add(p + "attn.bk", 1, d);
      s.wv = layout->add(p + "attn.wv", d, d);
      s.bv = layout->add(p + "attn.bv", 1, d);
      s.wo = layout->add(p + "attn.wo", d, d);
      s.bo = layout->add(p + "attn.bo", 1, d);
      s.ln2_g = layout->add(p + "ln2.gamma", 1, d);
      s.ln2_b = layout->add(p + "ln2.beta", 1, d);
      s.w1 = layout->add(p + "ffn.w1", d, f);
      s.b1 = layout->add(p + "ffn.b1", 1, f);
      s.w2 = layout->add(p + "ffn.w2", f, d);
      s.b2 = layout->add(p + "ffn.b2", 1, d);
      slots_.layers.push_back(s);
    }
    slots_.lnf_g = layout->add("backbone.final_ln.gamma", 1, d);
    slots_.lnf_b = layout->add("backbone.final_ln.beta", 1, d);
    slots_.qsp_wq = layout->add("cross_qsp.w_q", d, dk);
    slots_.qsp_wk = layout->add("cross_qsp.w_k", d, dk);
    slots_.psp_wq = layout->add("cross_psp.w_q", d, dk);
    slots_.psp_wk = layout->add("cross_psp.w_k", d, dk);
    slots_.head_w1 = layout->add("head.w1", 3 * d, d);
    slots_.head_b1 = layout->add("head.b1", 1, d);
    slots_.head_w2 = layout->add("head.w2", d, 1);
    slots_.head_b2 = layout->add("head.b2", 1, 1);
    layout_ = std::move(layout);
  }

  void initialize() {
    std::mt19937_64 rng(cfg_.seed);
    const double d = static_cast<double>(cfg_.hidden);
    auto fan_in = [](double n) { return 1.0 / std::sqrt(n); };
    nn::fill_normal(params_[slots_.tok_emb], 0.5, rng);
    nn::fill_normal(params_[slots_.pos_emb], 0.1, rng);
    for (const auto& s : slots_.layers) {
      params_[s.ln1_g].setOnes();
      params_[s.ln2_g].setOnes();
      for (auto w : {s.wq, s.wk, s.wv, s.wo}) nn::fill_normal(params_[w], fan_in(d), rng);
      nn::fill_normal(params_[s.w1], fan_in(d), rng);
      nn::fill_normal(params_[s.w2], fan_in(static_cast<double>(cfg_.ffn)), rng);
    }
    params_[slots_.lnf_g].setOnes();
    for (auto w : {slots_.qsp_wq, slots_.qsp_wk, slots_.psp_wq, slots_.psp_wk})
      nn::fill_normal(params_[w], fan_in(d), rng);
    nn::fill_normal(params_[slots_.head_w1], fan_in(3 * d), rng);
    nn::fill_normal(params_[slots_.head_w2], fan_in(d), rng);
  }

  void run_backbone(const InputSequence& seq, Cache* cache, nn::Matrix& hidden) const {
    const auto L = static_cast<Eigen::Index>(seq.ids.size());
    const auto d = static_cast<Eigen::Index>(cfg_.hidden);
    auto tok = params_[slots_.tok_emb];
    auto pos = params_[slots_.pos_emb];
    nn::Matrix x(L, d);
    for (Eigen::Index i = 0; i < L; ++i) {
      const int id = seq.ids[static_cast<std::size_t>(i)];
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) throw ValidationError("token id out of range");
      x.row(i) = tok.row(id) + pos.row(i);
    }
    if (cache) cache->layers.resize(cfg_.layers);
    for (std::size_t l = 0; l < cfg_.layers; ++l)
      x = layer_forward(slots_.layers[l], x, cache ? &cache->layers[l] : nullptr);
    hidden = nn::layer_norm(x, params_[slots_.lnf_g], params_[slots_.lnf_b], cache ? &cache->lnf : nullptr);
  }

  nn::Matrix layer_forward(const LayerSlots& s, const nn::Matrix& x, LayerCache* c) const {
    const auto& P = params_;
    const auto L = x.rows();
    const auto heads = static_cast<Eigen::Index>(cfg_.heads);
    const auto dh = static_cast<Eigen::Index>(cfg_.hidden / cfg_.heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    LayerCache local;
    LayerCache& lc = c ? *c : local;
    lc.a = nn::layer_norm(x, P[s.ln1_g], P[s.ln1_b], &lc.ln1);
    lc.q = (lc.a * P[s.wq]).rowwise() + P[s.bq].row(0);
    lc.k = (lc.a * P[s.wk]).rowwise() + P[s.bk].row(0);
    lc.v = (lc.a * P[s.wv]).rowwise() + P[s.bv].row(0);
    lc.o.resize(L, x.cols());
    lc.probs.resize(static_cast<std::size_t>(heads));
    for (Eigen::Index h = 0; h < heads; ++h) {
      nn::Matrix& pr = lc.probs[static_cast<std::size_t>(h)];
      pr = lc.q.middleCols(h * dh, dh) * lc.k.middleCols(h * dh, dh).transpose() * scale;
      nn::softmax_rows(pr);
      lc.o.middleCols(h * dh, dh) = pr * lc.v.middleCols(h * dh, dh);
    }
    nn::Matrix x1 = x + ((lc.o * P[s.wo]).rowwise() + P[s.bo].row(0));
    lc.b = nn::layer_norm(x1, P[s.ln2_g], P[s.ln2_b], &lc.ln2);
    lc.u = (lc.b * P[s.w1]).rowwise() + P[s.b1].row(0);
    lc.g = lc.u.unaryExpr([](double v) { return nn::gelu(v); });
    return x1 + ((lc.g * P[s.w2]).rowwise() + P[s.b2].row(0));
  }

  nn::Matrix layer_backward(const LayerSlots& s, const LayerCache& c, const nn::Matrix& dx2,
                            nn::Parameters& grad) const {
    const auto& P = params_;
    const auto heads = static_cast<Eigen::Index>(cfg_.heads);
    const auto dh = static_cast<Eigen::Index>(cfg_.hidden / cfg_.heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    grad[s.w2] += c.g.transpose() * dx2;
    grad[s.b2] += dx2.colwise().sum();
    nn::Matrix du = (dx2 * P[s.w2].transpose()).array() * c.u.unaryExpr([](double v) { return nn::gelu_grad(v); }).array();
    grad[s.w1] += c.b.transpose() * du;
    grad[s.b1] += du.colwise().sum();
    nn::Matrix db = du * P[s.w1].transpose();
    nn::Matrix dx1 = dx2 + nn::layer_norm_backward(db, c.ln2, P[s.ln2_g], grad[s.ln2_g], grad[s.ln2_b]);

    grad[s.wo] += c.o.transpose() * dx1;
    grad[s.bo] += dx1.colwise().sum();
    nn::Matrix dout = dx1 * P[s.wo].transpose();
    nn::Matrix dq(c.q.rows(), c.q.cols()), dk(c.k.rows(), c.k.cols()), dv(c.v.rows(), c.v.cols());
    for (Eigen::Index h = 0; h < heads; ++h) {
      const nn::Matrix& pr = c.probs[static_cast<std::size_t>(h)];
      nn::Matrix doh = dout.middleCols(h * dh, dh);
      nn::Matrix dp = doh * c.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = pr.transpose() * doh;
      nn::Vector rowdot = (dp.array() * pr.array()).rowwise().sum();
      nn::Matrix ds = pr.array() * (dp.colwise() - rowdot).array();
      dq.middleCols(h * dh, dh) = ds * c.k.middleCols(h * dh, dh) * scale;
      dk.middleCols(h * dh, dh) = ds.transpose() * c.q.middleCols(h * dh, dh) * scale;
    }
    grad[s.wq] += c.a.transpose() * dq;
    grad[s.bq] += dq.colwise().sum();
    grad[s.wk] += c.a.transpose() * dk;
    grad[s.bk] += dk.colwise().sum();
    grad[s.wv] += c.a.transpose() * dv;
    grad[s.bv] += dv.colwise().sum();
    nn::Matrix da = dq * P[s.wq].transpose() + dk * P[s.wk].transpose() + dv * P[s.wv].transpose();
    return dx1 + nn::layer_norm_backward(da, c.ln1, P[s.ln1_g], grad[s.ln1_g], grad[s.ln1_b]);
  }

  ScorerConfig cfg_;
  Vocabulary vocab_;
  std::shared_ptr<nn::ParameterLayout> layout_;
  Slots slots_;
  nn::Parameters params_;
};

inline constexpr std::string_view kCheckpointMagic = "STAR-CHECKPOINT 1";

// Magic line, one-line JSON header, then the raw parameter buffer.
inline void save_checkpoint(const std::filesystem::path& path, const CrossAttentiveScorer& scorer,
                            const io::json& provenance = io::json::object()) {
  io::json tensors = io::json::array();
  for (const auto& t : scorer.params().layout().tensors())
    tensors.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
  io::json header = {{"format_version", 1},
                     {"backbone_id", scorer.config().backbone_id},
                     {"config", to_json(scorer.config())},
                     {"vocabulary", scorer.vocab().words()},
                     {"tensors", tensors},
                     {"parameter_count", scorer.params().size()},
                     {"provenance", provenance}};
  std::string bytes(kCheckpointMagic);
  bytes += '\n';
  bytes += header.dump();
  bytes += '\n';
  const auto& data = scorer.params().data();
  bytes.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
  io::write_text(path, bytes);
}

inline CrossAttentiveScorer load_checkpoint(const std::filesystem::path& path, io::json* provenance = nullptr) {
  std::string bytes = io::read_text(path);
  auto nl1 = bytes.find('\n');
  if (nl1 == std::string::npos || std::string_view(bytes).substr(0, nl1) != kCheckpointMagic)
    throw IngestError(path.string() + ": not a STAR checkpoint");
  auto nl2 = bytes.find('\n', nl1 + 1);
  if (nl2 == std::string::npos) throw IngestError(path.string() + ": truncated checkpoint header");
  io::json header;
  try {
    header = io::json::parse(bytes.substr(nl1 + 1, nl2 - nl1 - 1));
  } catch (const io::json::exception& e) {
    throw IngestError(path.string() + ": " + e.what());
  }
  const auto count = header.at("parameter_count").get<std::size_t>();
  if (bytes.size() - nl2 - 1 != count * sizeof(double))
    throw IngestError(path.string() + ": parameter payload size mismatch");
  std::vector<double> values(count);
  std::memcpy(values.data(), bytes.data() + nl2 + 1, count * sizeof(double));
  if (provenance) *provenance = header.value("provenance", io::json::object());
  return CrossAttentiveScorer(scorer_config_from_json(header.at("config")),
                              Vocabulary(header.at("vocabulary").get<std::vector<std::string>>()), std::move(values));
}

}  // namespace star
