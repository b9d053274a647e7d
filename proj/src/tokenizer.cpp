#include "vsteer/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace vsteer::tokenizer {

namespace {

const char* kSpecialNames[Vocab::kNumSpecials] = {"<bos>", "<eos>", "<pad>",
                                                  "<ctrl:pos>", "<ctrl:neg>"};
constexpr const char* kFileHeader = "vsteer.vocab v1";

std::string escape_token(const std::string& raw) {
  std::string out;
  out.reserve(raw.size());
  for (unsigned char c : raw) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (c < 0x20 || c >= 0x7f) {
          char buf[5];
          std::snprintf(buf, sizeof(buf), "\\x%02x", c);
          out += buf;
        } else {
          out += static_cast<char>(c);
        }
    }
  }
  return out;
}

std::string unescape_token(const std::string& line) {
  std::string out;
  out.reserve(line.size());
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (c != '\\') {
      out += c;
      continue;
    }
    if (i + 1 >= line.size()) throw std::runtime_error("vocab file: dangling escape");
    char e = line[++i];
    switch (e) {
      case '\\': out += '\\'; break;
      case 'n': out += '\n'; break;
      case 'r': out += '\r'; break;
      case 't': out += '\t'; break;
      case 'x': {
        if (i + 2 >= line.size()) throw std::runtime_error("vocab file: truncated \\x escape");
        int v = std::stoi(line.substr(i + 1, 2), nullptr, 16);
        out += static_cast<char>(v);
        i += 2;
        break;
      }
      default:
        throw std::runtime_error("vocab file: unknown escape");
    }
  }
  return out;
}

Vocab make_base_vocab() {
  Vocab v;
  v.id_to_token.reserve(Vocab::kBaseSize);
  for (int i = 0; i < Vocab::kNumSpecials; ++i) v.id_to_token.push_back(kSpecialNames[i]);
  for (int b = 0; b < 256; ++b) {
    std::string tok(1, static_cast<char>(b));
    v.token_to_id.emplace(tok, v.size());
    v.id_to_token.push_back(std::move(tok));
  }
  return v;
}

// Replaces all non-overlapping left-to-right occurrences of (left,right).
void apply_merge(std::vector<int>& stream, int left, int right, int merged) {
  size_t w = 0;
  for (size_t r = 0; r < stream.size();) {
    if (r + 1 < stream.size() && stream[r] == left && stream[r + 1] == right) {
      stream[w++] = merged;
      r += 2;
    } else {
      stream[w++] = stream[r++];
    }
  }
  stream.resize(w);
}

}  // namespace

uint64_t Vocab::hash() const {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
    h ^= 0xff;
    h *= 1099511628211ull;
  };
  for (const auto& tok : id_to_token) mix(tok);
  return h;
}

Vocab build_vocab(const std::vector<std::string>& corpus_texts, int target_size) {
  size_t total_bytes = 0;
  for (const auto& t : corpus_texts) total_bytes += t.size();
  if (total_bytes == 0) throw std::invalid_argument("build_vocab: empty corpus");
  if (target_size < Vocab::kBaseSize) {
    throw std::invalid_argument("build_vocab: target_size below base alphabet size " +
                                std::to_string(Vocab::kBaseSize));
  }

  Vocab vocab = make_base_vocab();

  std::vector<std::vector<int>> streams;
  streams.reserve(corpus_texts.size());
  for (const auto& text : corpus_texts) {
    std::vector<int> s;
    s.reserve(text.size());
    for (unsigned char c : text) s.push_back(Vocab::kFirstByte + c);
    streams.push_back(std::move(s));
  }

  while (vocab.size() < target_size) {
    // std::map keeps the candidate scan order deterministic.
    std::map<std::pair<int, int>, size_t> pair_counts;
    for (const auto& s : streams) {
      for (size_t i = 0; i + 1 < s.size(); ++i) ++pair_counts[{s[i], s[i + 1]}];
    }

    std::pair<int, int> best{-1, -1};
    size_t best_count = 1;  // require count >= 2
    for (const auto& [pair, count] : pair_counts) {
      if (count < 2) continue;
      if (count > best_count) {
        best = pair;
        best_count = count;
      } else if (count == best_count && best.first >= 0) {
        const auto& bl = vocab.id_to_token[best.first];
        const auto& br = vocab.id_to_token[best.second];
        const auto& cl = vocab.id_to_token[pair.first];
        const auto& cr = vocab.id_to_token[pair.second];
        if (std::tie(cl, cr) < std::tie(bl, br)) best = pair;
      }
    }
    if (best.first < 0) break;

    std::string merged_bytes = vocab.id_to_token[best.first] + vocab.id_to_token[best.second];
    int merged_id;
    auto it = vocab.token_to_id.find(merged_bytes);
    if (it != vocab.token_to_id.end()) {
      // Same byte string reachable through a different split; reuse the id so
      // ids and tokens stay a bijection.
      merged_id = it->second;
    } else {
      merged_id = vocab.size();
      vocab.token_to_id.emplace(merged_bytes, merged_id);
      vocab.id_to_token.push_back(std::move(merged_bytes));
    }
    for (auto& s : streams) apply_merge(s, best.first, best.second, merged_id);
  }
  return vocab;
}

std::vector<int> encode(std::string_view text, const Vocab& vocab) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(Vocab::kFirstByte + c);

  // Repeatedly apply the mergeable pair whose merged token has the smallest
  // id. Merge creation order equals id order, so this replays BPE training.
  while (ids.size() >= 2) {
    int best_id = -1;
    int best_left = -1, best_right = -1;
    for (size_t i = 0; i + 1 < ids.size(); ++i) {
      const std::string& l = vocab.id_to_token[ids[i]];
      const std::string& r = vocab.id_to_token[ids[i + 1]];
      auto it = vocab.token_to_id.find(l + r);
      if (it == vocab.token_to_id.end()) continue;
      if (best_id < 0 || it->second < best_id) {
        best_id = it->second;
        best_left = ids[i];
        best_right = ids[i + 1];
      }
    }
    if (best_id < 0) break;
    apply_merge(ids, best_left, best_right, best_id);
  }
  return ids;
}

std::string decode(const std::vector<int>& ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    if (!vocab.in_range(id)) {
      throw std::out_of_range("decode: token id " + std::to_string(id) + " out of range");
    }
    out += vocab.id_to_token[id];
  }
  return out;
}

void save_vocab(const Vocab& vocab, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_vocab: cannot open " + path);
  f << kFileHeader << ' ' << vocab.size() << '\n';
  for (int i = 0; i < vocab.size(); ++i) {
    if (vocab.is_special(i)) {
      f << vocab.id_to_token[i] << '\n';
    } else {
      f << escape_token(vocab.id_to_token[i]) << '\n';
    }
  }
  if (!f) throw std::runtime_error("save_vocab: write failed for " + path);
}

Vocab load_vocab(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_vocab: cannot open " + path);
  std::string header;
  std::getline(f, header);
  std::istringstream hs(header);
  std::string tag, ver;
  int size = 0;
  hs >> tag >> ver >> size;
  if (tag + " " + ver != kFileHeader || size < Vocab::kBaseSize) {
    throw std::runtime_error("load_vocab: bad header in " + path);
  }
  Vocab vocab;
  vocab.id_to_token.reserve(size);
  std::string line;
  for (int i = 0; i < size; ++i) {
    if (!std::getline(f, line)) throw std::runtime_error("load_vocab: truncated file " + path);
    if (i < Vocab::kNumSpecials) {
      if (line != kSpecialNames[i]) throw std::runtime_error("load_vocab: special token mismatch");
      vocab.id_to_token.push_back(line);
    } else {
      std::string tok = unescape_token(line);
      vocab.token_to_id.emplace(tok, i);
      vocab.id_to_token.push_back(std::move(tok));
    }
  }
  return vocab;
}

}  // namespace vsteer::tokenizer
