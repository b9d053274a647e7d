#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace vsteer::tokenizer {

// Byte-level BPE vocabulary. Ids 0..4 are reserved special tokens, the next
// 256 ids are the single-byte alphabet, everything above is a learned merge.
struct Vocab {
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kPad = 2;
  static constexpr int kCtrlPos = 3;
  static constexpr int kCtrlNeg = 4;
  static constexpr int kNumSpecials = 5;
  static constexpr int kFirstByte = kNumSpecials;
  static constexpr int kBaseSize = kNumSpecials + 256;

  // Specials hold display forms ("<bos>" ...); ordinary entries hold raw bytes.
  std::vector<std::string> id_to_token;
  // Ordinary tokens only; specials are resolved by id.
  std::unordered_map<std::string, int> token_to_id;

  int size() const { return static_cast<int>(id_to_token.size()); }
  bool is_special(int id) const { return id >= 0 && id < kNumSpecials; }
  bool in_range(int id) const { return id >= 0 && id < size(); }

  // FNV-1a over the serialized form; checkpoints embed this to detect
  // vocabulary drift between training and decoding.
  uint64_t hash() const;
};

// Greedy byte-pair merges over the corpus until target_size is reached or no
// adjacent pair occurs at least twice. Ties in pair frequency break toward the
// lexicographically smaller (left bytes, right bytes) pair. Deterministic.
Vocab build_vocab(const std::vector<std::string>& corpus_texts, int target_size);

// Encode never emits special ids; byte-level fallback covers arbitrary input.
std::vector<int> encode(std::string_view text, const Vocab& vocab);

// Inverse of encode on ordinary ids; specials render as their display form.
// Out-of-range ids throw.
std::string decode(const std::vector<int>& ids, const Vocab& vocab);

void save_vocab(const Vocab& vocab, const std::string& path);
Vocab load_vocab(const std::string& path);

}  // namespace vsteer::tokenizer
