#pragma once

#include <map>
#include <string>
#include <vector>

#include "affseq/params.hpp"

namespace affseq::lang {

inline constexpr int64_t kPadId = 0;
inline constexpr int64_t kUnkId = 1;
inline constexpr int64_t kSegId = 2;
inline constexpr const char* kSegMarker = "<SEG>";

/// Lowercased whitespace/punctuation tokens; the literal "<SEG>" marker is
/// preserved as its own token.
std::vector<std::string> split_tokens(const std::string& text);
std::string join_tokens(const std::vector<std::string>& tokens);

class Vocabulary {
public:
  Vocabulary();
  static Vocabulary build(const std::vector<std::string>& corpus);

  int64_t id_of(const std::string& token) const;  // <UNK> for unknowns
  const std::string& token_of(int64_t id) const;
  int64_t size() const { return static_cast<int64_t>(id_to_token_.size()); }

  void save(const std::string& path) const;  // sorted token/id lines
  static Vocabulary load(const std::string& path);

  bool operator==(const Vocabulary& o) const { return token_to_id_ == o.token_to_id_; }

private:
  std::map<std::string, int64_t> token_to_id_;
  std::vector<std::string> id_to_token_;
};

std::vector<int64_t> tokenize(const Vocabulary& vocab, const std::string& text);

struct Instruction {
  std::string text;
  std::vector<std::string> object_refs;  // object names in mention order
};

struct ResponseSlot {
  std::string mention;
  int64_t offset = 0;  // character offset of the marker in the response text
  ad::Var seg_raw;     // 1 x width
};

struct SegResponse {
  std::string text;
  std::vector<ResponseSlot> slots;
  int64_t slot_count() const { return static_cast<int64_t>(slots.size()); }
};

struct LangConfig {
  int64_t width = 256;  // seg-embedding width
  int64_t s_max = 4;
  int64_t max_tokens = 64;
  int64_t heads = 4;
  int64_t ffn_mult = 4;

  void validate() const;
};

/// Creates parameters under "language/"; the embedding table size is fixed
/// by the vocabulary at init time.
void init_params(const LangConfig& cfg, int64_t vocab_size, uint64_t seed, ad::ParamStore& store);

struct RouteResult {
  int64_t slots = 0;                   // predicted S in 1..s_max
  std::vector<std::string> bindings;   // slot -> object mention (wraps to last)
  ad::Var logits;                      // 1 x s_max
};

RouteResult route_slots(const Instruction& instr, const LangConfig& cfg, const Vocabulary& vocab,
                        const ad::ParamStore& store);

struct EmbedResult {
  SegResponse response;
  std::vector<ad::Var> seg_embeddings;  // slot order, each 1 x width
  ad::Var routing_logits;               // 1 x s_max
  int64_t routed_slots = 0;             // free-running S regardless of forcing
};

/// forced_slots <= 0 runs the routing head; a positive value fixes S
/// (teacher forcing) and must not exceed cfg.s_max.
EmbedResult embed_instruction(const Instruction& instr, const LangConfig& cfg,
                              const Vocabulary& vocab, const ad::ParamStore& store,
                              int64_t forced_slots = 0);

/// Scans for "<SEG>" markers; each binds to the nearest preceding
/// non-stop-word token. Zero markers yield an empty list.
std::vector<std::pair<std::string, int64_t>> parse_seg_response(const std::string& text);

/// "obj0 <SEG> then obj1 <SEG> ..." — the response shape embed_instruction emits.
std::string render_response(const std::vector<std::string>& mentions);

enum class TemplateId { Role, Task, Examples, Instruction };

/// Byte-exact substitution into the shipped prompt templates. Missing
/// fields raise an error naming the field.
std::string render_prompt(TemplateId id, const std::map<std::string, std::string>& fields);

const std::vector<std::string>& stop_words();

}  // namespace affseq::lang
