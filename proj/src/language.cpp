#include "affseq/language.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "affseq/nn.hpp"
#include "affseq/template_text.hpp"

namespace affseq::lang {

using ad::Var;

namespace {
constexpr size_t kMarkerLen = 5;  // strlen("<SEG>")

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
}  // namespace

std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < text.size()) {
    if (text.compare(i, kMarkerLen, kSegMarker) == 0) {
      out.emplace_back(kSegMarker);
      i += kMarkerLen;
      continue;
    }
    if (!is_word_char(text[i])) {
      ++i;
      continue;
    }
    size_t j = i;
    while (j < text.size() && is_word_char(text[j])) ++j;
    std::string tok = text.substr(i, j - i);
    std::transform(tok.begin(), tok.end(), tok.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    out.push_back(std::move(tok));
    i = j;
  }
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

Vocabulary::Vocabulary() {
  id_to_token_ = {"<PAD>", "<UNK>", kSegMarker};
  for (int64_t i = 0; i < 3; ++i) token_to_id_[id_to_token_[i]] = i;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus) {
  std::set<std::string> words;
  for (const auto& text : corpus)
    for (auto& tok : split_tokens(text))
      if (tok != kSegMarker) words.insert(tok);
  Vocabulary v;
  for (const auto& w : words) {
    if (v.token_to_id_.count(w)) continue;
    v.token_to_id_[w] = v.size();
    v.id_to_token_.push_back(w);
  }
  return v;
}

int64_t Vocabulary::id_of(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token_of(int64_t id) const {
  if (id < 0 || id >= size())
    throw std::invalid_argument("Vocabulary: id " + std::to_string(id) + " out of range");
  return id_to_token_[static_cast<size_t>(id)];
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("Vocabulary: cannot open " + path + " for writing");
  for (const auto& [tok, id] : token_to_id_) os << tok << '\t' << id << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("Vocabulary: cannot open " + path);
  std::map<std::string, int64_t> entries;
  std::string line;
  int64_t max_id = -1;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("Vocabulary: malformed line '" + line + "' in " + path);
    const int64_t id = std::stoll(line.substr(tab + 1));
    entries[line.substr(0, tab)] = id;
    max_id = std::max(max_id, id);
  }
  Vocabulary v;
  v.token_to_id_.clear();
  v.id_to_token_.assign(static_cast<size_t>(max_id + 1), "");
  for (auto& [tok, id] : entries) {
    if (id < 0 || id > max_id || !v.id_to_token_[static_cast<size_t>(id)].empty())
      throw std::runtime_error("Vocabulary: invalid or duplicate id in " + path);
    v.token_to_id_[tok] = id;
    v.id_to_token_[static_cast<size_t>(id)] = tok;
  }
  for (const auto& t : v.id_to_token_)
    if (t.empty()) throw std::runtime_error("Vocabulary: id gap in " + path);
  return v;
}

std::vector<int64_t> tokenize(const Vocabulary& vocab, const std::string& text) {
  std::vector<int64_t> ids;
  for (const auto& tok : split_tokens(text)) ids.push_back(vocab.id_of(tok));
  return ids;
}

void LangConfig::validate() const {
  if (width < 1 || max_tokens < 1) throw std::invalid_argument("LangConfig: widths must be positive");
  if (s_max < 1) throw std::invalid_argument("LangConfig: s_max must be at least 1");
  if (width % heads != 0)
    throw std::invalid_argument("LangConfig: width " + std::to_string(width) +
                                " not divisible by heads " + std::to_string(heads));
}

void init_params(const LangConfig& cfg, int64_t vocab_size, uint64_t seed, ad::ParamStore& store) {
  cfg.validate();
  if (vocab_size < 3) throw std::invalid_argument("language: vocabulary too small");
  Rng rng(seed);
  store.create("language/embed", ad::uniform_init({vocab_size, cfg.width}, vocab_size, cfg.width, rng));
  store.create("language/pos", ad::uniform_init({cfg.max_tokens, cfg.width}, cfg.max_tokens, cfg.width, rng));
  nn::make_block(store, "language/block0", cfg.width, cfg.ffn_mult * cfg.width, rng);
  store.create("language/slot_queries", ad::uniform_init({cfg.s_max, cfg.width}, cfg.width, cfg.width, rng));
  nn::make_linear(store, "language/slot_k", cfg.width, cfg.width, rng, false);
  nn::make_linear(store, "language/slot_v", cfg.width, cfg.width, rng, false);
  nn::make_linear(store, "language/route", cfg.width, cfg.s_max, rng);
}

namespace {

struct Encoded {
  Var tokens;  // T x width
  Var logits;  // 1 x s_max
};

Encoded encode_tokens(const Instruction& instr, const LangConfig& cfg, const Vocabulary& vocab,
                      const ad::ParamStore& store) {
  if (instr.text.empty()) throw std::invalid_argument("language: empty instruction text");
  std::vector<int64_t> ids = tokenize(vocab, instr.text);
  if (static_cast<int64_t>(ids.size()) > cfg.max_tokens) ids.resize(static_cast<size_t>(cfg.max_tokens));
  if (ids.empty()) ids.push_back(kUnkId);

  std::vector<int64_t> positions(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int64_t>(i);

  Var x = ad::add(ad::gather_rows(store.get("language/embed"), ids),
                  ad::gather_rows(store.get("language/pos"), positions));
  x = nn::apply_block(nn::load_block(store, "language/block0"), x, cfg.heads);

  Encoded e;
  e.tokens = x;
  e.logits = nn::apply(nn::load_linear(store, "language/route"), ad::mean_rows(x));
  return e;
}

std::vector<std::string> bind_slots(const Instruction& instr, int64_t slots) {
  std::vector<std::string> bindings;
  bindings.reserve(static_cast<size_t>(slots));
  for (int64_t i = 0; i < slots; ++i) {
    if (instr.object_refs.empty()) {
      bindings.emplace_back("object");
    } else {
      const size_t j = std::min(static_cast<size_t>(i), instr.object_refs.size() - 1);
      bindings.push_back(instr.object_refs[j]);
    }
  }
  return bindings;
}

int64_t argmax_slot(const ad::Array& logits) {
  int64_t best = 0;
  for (int64_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best + 1;
}

}  // namespace

RouteResult route_slots(const Instruction& instr, const LangConfig& cfg, const Vocabulary& vocab,
                        const ad::ParamStore& store) {
  cfg.validate();
  Encoded e = encode_tokens(instr, cfg, vocab, store);
  RouteResult r;
  r.logits = e.logits;
  r.slots = argmax_slot(e.logits->value);
  r.bindings = bind_slots(instr, r.slots);
  return r;
}

EmbedResult embed_instruction(const Instruction& instr, const LangConfig& cfg,
                              const Vocabulary& vocab, const ad::ParamStore& store,
                              int64_t forced_slots) {
  cfg.validate();
  if (forced_slots > cfg.s_max)
    throw std::invalid_argument("embed_instruction: forced slot count " +
                                std::to_string(forced_slots) + " exceeds s_max " +
                                std::to_string(cfg.s_max));
  Encoded e = encode_tokens(instr, cfg, vocab, store);

  EmbedResult out;
  out.routing_logits = e.logits;
  out.routed_slots = argmax_slot(e.logits->value);
  const int64_t slots = forced_slots > 0 ? forced_slots : out.routed_slots;

  Var keys = ad::matmul(e.tokens, store.get("language/slot_k.w"));
  Var values = ad::matmul(e.tokens, store.get("language/slot_v.w"));
  const Var queries = store.get("language/slot_queries");
  for (int64_t i = 0; i < slots; ++i) {
    Var q = ad::gather_rows(queries, {i});
    out.seg_embeddings.push_back(ad::attention(q, keys, values));
  }

  const std::vector<std::string> bindings = bind_slots(instr, slots);
  out.response.text = render_response(bindings);
  size_t pos = 0;
  for (int64_t i = 0; i < slots; ++i) {
    pos = out.response.text.find(kSegMarker, pos);
    ResponseSlot slot;
    slot.mention = bindings[static_cast<size_t>(i)];
    slot.offset = static_cast<int64_t>(pos);
    slot.seg_raw = out.seg_embeddings[static_cast<size_t>(i)];
    out.response.slots.push_back(std::move(slot));
    pos += kMarkerLen;
  }
  return out;
}

const std::vector<std::string>& stop_words() {
  static const std::vector<std::string> kStops = {
      "the",  "a",     "an",   "then", "and",  "or",   "to",   "of",    "in",   "on",
      "at",   "it",    "its",  "your", "you",  "with", "for",  "by",    "into", "inside",
      "from", "first", "next", "now",  "this", "that", "these", "those", "be",   "is",
      "are",  "was",   "were", "please"};
  return kStops;
}

std::vector<std::pair<std::string, int64_t>> parse_seg_response(const std::string& text) {
  static const std::unordered_set<std::string> stops(stop_words().begin(), stop_words().end());
  std::vector<std::pair<std::string, int64_t>> out;
  size_t pos = 0;
  while ((pos = text.find(kSegMarker, pos)) != std::string::npos) {
    const std::vector<std::string> before = split_tokens(text.substr(0, pos));
    std::string mention;
    for (auto it = before.rbegin(); it != before.rend(); ++it) {
      if (*it == kSegMarker || stops.count(*it)) continue;
      mention = *it;
      break;
    }
    out.emplace_back(std::move(mention), static_cast<int64_t>(pos));
    pos += kMarkerLen;
  }
  return out;
}

std::string render_response(const std::vector<std::string>& mentions) {
  std::string out;
  for (size_t i = 0; i < mentions.size(); ++i) {
    if (i) out += " then ";
    out += mentions[i];
    out += ' ';
    out += kSegMarker;
  }
  return out;
}

std::string render_prompt(TemplateId id, const std::map<std::string, std::string>& fields) {
  const char* tpl = nullptr;
  switch (id) {
    case TemplateId::Role: tpl = tpl::kRole; break;
    case TemplateId::Task: tpl = tpl::kTask; break;
    case TemplateId::Examples: tpl = tpl::kExamples; break;
    case TemplateId::Instruction: tpl = tpl::kInstruction; break;
  }
  std::string text(tpl);
  std::string out;
  out.reserve(text.size());
  size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '{') {
      out += text[i++];
      continue;
    }
    const size_t close = text.find('}', i);
    if (close == std::string::npos) {
      out += text.substr(i);
      break;
    }
    const std::string field = text.substr(i + 1, close - i - 1);
    auto it = fields.find(field);
    if (it == fields.end())
      throw std::invalid_argument("render_prompt: missing field '" + field + "'");
    out += it->second;
    i = close + 1;
  }
  return out;
}

}  // namespace affseq::lang
