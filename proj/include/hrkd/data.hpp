#pragma once

// Corpora: synthetic generation with planted keyword patterns, TSV ingestion,
// vocabulary building, tokenization and few-shot subsampling.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "hrkd/encoder.hpp"
#include "hrkd/errors.hpp"

namespace hrkd {

struct Sample {
  std::string text;
  int label = 0;

  friend bool operator==(const Sample&, const Sample&) = default;
};

enum class Split { train, dev, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected train, dev or test)");
}

struct DomainData {
  std::string name;
  std::size_t num_classes = 2;
  std::vector<Sample> train, dev, test;

  const std::vector<Sample>& split(Split s) const {
    return s == Split::train ? train : (s == Split::dev ? dev : test);
  }
  std::vector<Sample>& split(Split s) { return s == Split::train ? train : (s == Split::dev ? dev : test); }

  friend bool operator==(const DomainData&, const DomainData&) = default;
};

struct Corpus {
  std::vector<DomainData> domains;

  std::size_t num_domains() const { return domains.size(); }
  std::vector<std::size_t> classes_per_domain() const {
    std::vector<std::size_t> out;
    for (const auto& d : domains) out.push_back(d.num_classes);
    return out;
  }

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SyntheticConfig {
  std::size_t domains = 3;
  std::size_t classes = 2;
  std::size_t vocab = 1024;             // budget for distinct words plus special tokens
  std::size_t train = 2000;             // samples per domain
  std::size_t dev = 300;
  std::size_t test = 300;
  double sharing = 0.5;                 // fraction of keyword and filler pools common to all domains
  std::uint64_t seed = 0;
  std::size_t keywords_per_class = 8;
  std::size_t fillers = 40;             // filler pool size per domain
  std::size_t min_words = 6;
  std::size_t max_words = 24;
  std::size_t min_keywords = 2;
  std::size_t max_keywords = 4;

  friend bool operator==(const SyntheticConfig&, const SyntheticConfig&) = default;
};

/// Words the generator can emit plus [PAD], [UNK], [CLS].
inline std::size_t synthetic_vocab_needed(const SyntheticConfig& s) {
  const auto shared = [&](std::size_t n) { return static_cast<std::size_t>(std::llround(s.sharing * static_cast<double>(n))); };
  const std::size_t kw_shared = shared(s.keywords_per_class), fill_shared = shared(s.fillers);
  return 3 + s.classes * (kw_shared + s.domains * (s.keywords_per_class - kw_shared)) + fill_shared +
         s.domains * (s.fillers - fill_shared);
}

namespace detail {

inline void validate_synthetic(const SyntheticConfig& s) {
  if (s.domains == 0) throw ConfigError("synthetic: domains must be >= 1");
  if (s.classes < 2) throw ConfigError("synthetic: classes must be >= 2");
  if (!(s.sharing >= 0.0 && s.sharing <= 1.0)) throw ConfigError("synthetic: sharing must lie in [0, 1]");
  if (s.keywords_per_class == 0 || s.fillers == 0) throw ConfigError("synthetic: keyword and filler pools must be non-empty");
  if (s.min_keywords == 0 || s.min_keywords > s.max_keywords) throw ConfigError("synthetic: bad keyword count range");
  if (s.min_words < s.max_keywords || s.min_words > s.max_words) throw ConfigError("synthetic: bad sentence length range");
  if (s.train == 0) throw ConfigError("synthetic: train split must be non-empty");
  const std::size_t need = synthetic_vocab_needed(s);
  if (need > s.vocab) {
    throw ConfigError("synthetic: vocab budget " + std::to_string(s.vocab) + " too small; patterns need " +
                      std::to_string(need) + " tokens");
  }
}

}  // namespace detail

/// Each sample carries 2-4 keywords of its class among filler words, so the
/// label is a deterministic function of the text.
inline Corpus generate_synthetic_corpus(const SyntheticConfig& s) {
  detail::validate_synthetic(s);
  const auto shared = [&](std::size_t n) { return static_cast<std::size_t>(std::llround(s.sharing * static_cast<double>(n))); };
  const std::size_t kw_shared = shared(s.keywords_per_class), fill_shared = shared(s.fillers);

  std::mt19937_64 rng(s.seed);
  Corpus corpus;
  for (std::size_t d = 0; d < s.domains; ++d) {
    const std::string tag = "d" + std::to_string(d);
    std::vector<std::vector<std::string>> keywords(s.classes);
    for (std::size_t c = 0; c < s.classes; ++c) {
      for (std::size_t j = 0; j < s.keywords_per_class; ++j) {
        const std::string base = "kw" + std::to_string(c) + "_" + std::to_string(j);
        keywords[c].push_back(j < kw_shared ? base : tag + base);
      }
    }
    std::vector<std::string> fillers;
    for (std::size_t j = 0; j < s.fillers; ++j) {
      const std::string base = "w" + std::to_string(j);
      fillers.push_back(j < fill_shared ? base : tag + base);
    }

    std::uniform_int_distribution<std::size_t> n_words(s.min_words, s.max_words);
    std::uniform_int_distribution<std::size_t> n_keys(s.min_keywords, s.max_keywords);
    std::uniform_int_distribution<std::size_t> pick_kw(0, s.keywords_per_class - 1);
    std::uniform_int_distribution<std::size_t> pick_fill(0, s.fillers - 1);
    auto make = [&](std::size_t count) {
      std::vector<Sample> out;
      for (std::size_t i = 0; i < count; ++i) {
        const int label = static_cast<int>(i % s.classes);
        const std::size_t len = n_words(rng), keys = n_keys(rng);
        std::vector<std::string> words;
        for (std::size_t k = 0; k < keys; ++k) words.push_back(keywords[label][pick_kw(rng)]);
        while (words.size() < len) words.push_back(fillers[pick_fill(rng)]);
        std::shuffle(words.begin(), words.end(), rng);
        std::string text;
        for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
        out.push_back({std::move(text), label});
      }
      std::shuffle(out.begin(), out.end(), rng);
      return out;
    };
    DomainData dd;
    dd.name = "domain" + std::to_string(d);
    dd.num_classes = s.classes;
    dd.train = make(s.train);
    dd.dev = make(s.dev);
    dd.test = make(s.test);
    corpus.domains.push_back(std::move(dd));
  }
  return corpus;
}

/// First ⌈rate·n⌉ training samples of every domain; dev and test untouched.
inline Corpus subsample(const Corpus& corpus, double rate) {
  if (!(rate > 0.0 && rate <= 1.0)) throw DomainError("subsample: rate must lie in (0, 1], got " + std::to_string(rate));
  Corpus out = corpus;
  for (auto& d : out.domains) {
    const auto keep = static_cast<std::size_t>(std::ceil(rate * static_cast<double>(d.train.size()) - 1e-9));
    d.train.resize(std::min(d.train.size(), std::max<std::size_t>(keep, 1)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// TSV

inline std::string to_tsv(const Corpus& corpus, Split split) {
  std::string out;
  for (const auto& d : corpus.domains)
    for (const auto& s : d.split(split)) out += d.name + '\t' + std::to_string(s.label) + '\t' + s.text + '\n';
  return out;
}

inline void write_tsv(const std::string& path, const Corpus& corpus, Split split) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path + " for writing");
  f << to_tsv(corpus, split);
  if (!f) throw FormatError("write failed for " + path);
}

namespace detail {

struct TsvRow {
  std::string domain;
  int label;
  std::string text;
};

inline std::vector<TsvRow> read_tsv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path);
  std::vector<TsvRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto where = path + ":" + std::to_string(lineno) + ": ";
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
      throw FormatError(where + "expected 3 tab-separated fields (domain, label, text)");
    }
    TsvRow row{line.substr(0, t1), 0, line.substr(t2 + 1)};
    const std::string label = line.substr(t1 + 1, t2 - t1 - 1);
    if (row.domain.empty()) throw FormatError(where + "empty domain name");
    if (label.empty() || label.size() > 6 || !std::all_of(label.begin(), label.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      throw FormatError(where + "label '" + label + "' is not a non-negative integer");
    }
    row.label = std::stoi(label);
    if (row.text.find_first_not_of(" \t") == std::string::npos) throw FormatError(where + "empty text");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError(path + ": no samples");
  return rows;
}

}  // namespace detail

/// Domains are taken from the train file in order of first appearance; dev and
/// test may only use those. Each domain's class count is max(2, largest label + 1).
inline Corpus ingest_tsv(const std::string& train_path, const std::string& dev_path, const std::string& test_path) {
  Corpus corpus;
  std::map<std::string, std::size_t> index;
  for (auto& row : detail::read_tsv(train_path)) {
    auto [it, fresh] = index.emplace(row.domain, corpus.domains.size());
    if (fresh) corpus.domains.push_back({row.domain, 2, {}, {}, {}});
    corpus.domains[it->second].train.push_back({std::move(row.text), row.label});
  }
  for (auto [split, path] : {std::pair{Split::dev, dev_path}, std::pair{Split::test, test_path}}) {
    for (auto& row : detail::read_tsv(path)) {
      const auto it = index.find(row.domain);
      if (it == index.end()) throw FormatError(path + ": unknown domain '" + row.domain + "' (not in train split)");
      corpus.domains[it->second].split(split).push_back({std::move(row.text), row.label});
    }
  }
  for (auto& d : corpus.domains) {
    int top = 1;
    for (Split s : {Split::train, Split::dev, Split::test})
      for (const auto& x : d.split(s)) top = std::max(top, x.label);
    d.num_classes = static_cast<std::size_t>(top) + 1;
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Vocabulary and encoding

inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0, kUnk = 1, kCls = 2;

  Vocabulary() : tokens_{"[PAD]", "[UNK]", "[CLS]"} { reindex(); }

  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < 3 || tokens_[0] != "[PAD]" || tokens_[1] != "[UNK]" || tokens_[2] != "[CLS]") {
      throw FormatError("vocabulary must start with [PAD], [UNK], [CLS]");
    }
    reindex();
    if (index_.size() != tokens_.size()) throw FormatError("vocabulary has duplicate tokens");
  }

  /// Words of every domain's train split with count >= min_freq, ordered by
  /// descending count then lexicographically.
  static Vocabulary build(const Corpus& corpus, std::size_t min_freq = 2) {
    std::map<std::string, std::size_t> counts;
    for (const auto& d : corpus.domains)
      for (const auto& s : d.train)
        for (auto& w : split_words(s.text)) ++counts[w];
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (auto& [w, c] : counts)
      if (c >= min_freq) kept.emplace_back(w, c);
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> tokens{"[PAD]", "[UNK]", "[CLS]"};
    for (auto& [w, c] : kept) tokens.push_back(w);
    return Vocabulary(std::move(tokens));
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::size_t id(const std::string& word) const {
    const auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// One domain's split as padded id rows: [CLS] then words, truncated to `len`.
struct EncodedSplit {
  std::size_t domain_id = 0;
  std::size_t len = 0;
  std::vector<std::size_t> token_ids;  // size() × len
  std::vector<std::uint8_t> mask;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }

  DomainBatch batch(const std::vector<std::size_t>& rows) const {
    DomainBatch b;
    b.domain_id = domain_id;
    b.batch = rows.size();
    b.len = len;
    for (std::size_t r : rows) {
      b.token_ids.insert(b.token_ids.end(), token_ids.begin() + r * len, token_ids.begin() + (r + 1) * len);
      b.attention_mask.insert(b.attention_mask.end(), mask.begin() + r * len, mask.begin() + (r + 1) * len);
      b.labels.push_back(labels.at(r));
    }
    return b;
  }
};

inline EncodedSplit encode(const Vocabulary& vocab, const std::vector<Sample>& samples, std::size_t domain_id,
                           std::size_t len) {
  if (len < 2) throw ConfigError("encode: sequence length must be >= 2");
  EncodedSplit out;
  out.domain_id = domain_id;
  out.len = len;
  out.token_ids.assign(samples.size() * len, Vocabulary::kPad);
  out.mask.assign(samples.size() * len, 0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::size_t t = 0;
    out.token_ids[i * len] = Vocabulary::kCls;
    out.mask[i * len] = 1;
    for (const auto& w : split_words(samples[i].text)) {
      if (++t >= len) break;
      out.token_ids[i * len + t] = vocab.id(w);
      out.mask[i * len + t] = 1;
    }
    out.labels.push_back(samples[i].label);
  }
  return out;
}

/// Encodes one split of every domain.
inline std::vector<EncodedSplit> encode_split(const Vocabulary& vocab, const Corpus& corpus, Split split,
                                              std::size_t len) {
  std::vector<EncodedSplit> out;
  for (std::size_t d = 0; d < corpus.num_domains(); ++d) {
    const auto& samples = corpus.domains[d].split(split);
    for (const auto& s : samples) {
      if (s.label < 0 || static_cast<std::size_t>(s.label) >= corpus.domains[d].num_classes) {
        throw DomainError("label " + std::to_string(s.label) + " out of range for domain " + corpus.domains[d].name);
      }
    }
    out.push_back(encode(vocab, samples, d, len));
  }
  return out;
}

}  // namespace hrkd
