#ifndef CROWDCALL_ENCODE_HPP
#define CROWDCALL_ENCODE_HPP

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "crowdcall/corpus.hpp"

namespace crowdcall {

// ---------------------------------------------------------------------------
// Tokens

namespace detail {

// Bytes >= 0x80 belong to multi-byte UTF-8 sequences and count as letters.
inline bool is_word_byte(unsigned char ch) {
  return (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') || ch >= 0x80;
}

inline char ascii_lower(char ch) { return (ch >= 'A' && ch <= 'Z') ? static_cast<char>(ch - 'A' + 'a') : ch; }

}  // namespace detail

/// Lowercased maximal runs of letters and digits.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (const char ch : text) {
    if (detail::is_word_byte(static_cast<unsigned char>(ch))) {
      current.push_back(detail::ascii_lower(ch));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) {
    tokens.push_back(std::move(current));
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// Vectors

/// Sparse text vector; indices ascending and unique.
struct SparseVector {
  std::size_t dim = 0;
  std::vector<std::uint32_t> index;
  std::vector<float> value;

  std::size_t nonzeros() const { return index.size(); }

  std::vector<float> to_dense() const {
    std::vector<float> out(dim, 0.0f);
    for (std::size_t k = 0; k < index.size(); ++k) {
      out[index[k]] = value[k];
    }
    return out;
  }

  static SparseVector from_dense(std::span<const float> dense) {
    SparseVector v;
    v.dim = dense.size();
    for (std::size_t i = 0; i < dense.size(); ++i) {
      if (dense[i] != 0.0f) {
        v.index.push_back(static_cast<std::uint32_t>(i));
        v.value.push_back(dense[i]);
      }
    }
    return v;
  }
};

enum class EncoderKind { hashing, external };

struct EncoderConfig {
  EncoderKind kind = EncoderKind::hashing;
  std::size_t dim = 4096;
  bool normalize = true;
  std::uint64_t hash_seed = 0x5eed5eedULL;
};

inline std::size_t hash_bucket(std::string_view token, const EncoderConfig& config) {
  return static_cast<std::size_t>(seeded_fnv1a64(token, config.hash_seed) % config.dim);
}

inline SparseVector hash_encode_sparse(const std::vector<std::string>& tokens, const EncoderConfig& config) {
  if (config.dim == 0) {
    throw UsageError("encoder dimension must be at least 1");
  }
  std::vector<std::pair<std::uint32_t, double>> counts;
  counts.reserve(tokens.size());
  for (const auto& token : tokens) {
    counts.emplace_back(static_cast<std::uint32_t>(hash_bucket(token, config)), 1.0);
  }
  std::sort(counts.begin(), counts.end());
  SparseVector v;
  v.dim = config.dim;
  std::vector<double> totals;
  for (const auto& [bucket, one] : counts) {
    if (!v.index.empty() && v.index.back() == bucket) {
      totals.back() += one;
    } else {
      v.index.push_back(bucket);
      totals.push_back(one);
    }
  }
  double scale = 1.0;
  if (config.normalize && !totals.empty()) {
    double norm2 = 0.0;
    for (const double c : totals) {
      norm2 += c * c;
    }
    scale = 1.0 / std::sqrt(norm2);
  }
  v.value.reserve(totals.size());
  for (const double c : totals) {
    v.value.push_back(static_cast<float>(c * scale));
  }
  return v;
}

/// Token counts bucketed by a seeded FNV-1a hash modulo `dim`, optionally
/// scaled to unit Euclidean norm.
inline std::vector<float> hash_encode(const std::vector<std::string>& tokens, const EncoderConfig& config) {
  return hash_encode_sparse(tokens, config).to_dense();
}

// ---------------------------------------------------------------------------
// Embedding tables
//
// Binary layout, little-endian:
//   "FCEMB1" | u32 dim | u64 count | count x (u16 key_len | key bytes | dim x f32)
// The textual form has one {"key": ..., "vec": [...]} object per line.

struct EmbeddingTable {
  std::size_t dim = 0;
  std::vector<std::string> keys;  // insertion order
  std::unordered_map<std::string, std::vector<float>> entries;

  void insert(std::string key, std::vector<float> vec) {
    if (vec.size() != dim) {
      throw DataError("embedding for '" + key + "' has " + std::to_string(vec.size()) +
                      " components, table dimension is " + std::to_string(dim));
    }
    for (const float x : vec) {
      if (!std::isfinite(x)) {
        throw DataError("embedding for '" + key + "' has a non-finite component");
      }
    }
    if (!entries.emplace(key, std::move(vec)).second) {
      throw DataError("duplicate embedding key '" + key + "'");
    }
    keys.push_back(std::move(key));
  }
};

inline const std::vector<float>& lookup(const EmbeddingTable& table, const std::string& key) {
  const auto it = table.entries.find(key);
  if (it == table.entries.end()) {
    throw DataError("no embedding for key '" + key + "'");
  }
  return it->second;
}

inline const std::vector<float>& lookup(const EmbeddingTable& table, const std::string& key,
                                        std::size_t expected_dim) {
  if (table.dim != expected_dim) {
    throw DataError("embedding dimension mismatch: table has " + std::to_string(table.dim) +
                    ", expected " + std::to_string(expected_dim));
  }
  return lookup(table, key);
}

inline constexpr char kEmbeddingMagic[6] = {'F', 'C', 'E', 'M', 'B', '1'};

namespace detail {

template <class T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(std::begin(bytes), std::end(bytes));
  }
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class ByteReader {
public:
  ByteReader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    std::uint8_t bytes[sizeof(T)];
    std::memcpy(bytes, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      std::reverse(std::begin(bytes), std::end(bytes));
    }
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }

  std::string_view take(std::size_t n) {
    need(n);
    const auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw DataError(what_ + ": truncated at byte " + std::to_string(pos_));
    }
  }

  std::string_view bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_embeddings(const EmbeddingTable& table) {
  std::string out(kEmbeddingMagic, sizeof kEmbeddingMagic);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(table.dim));
  detail::put_le<std::uint64_t>(out, table.keys.size());
  for (const auto& key : table.keys) {
    if (key.size() > 0xffff) {
      throw DataError("embedding key longer than 65535 bytes");
    }
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(key.size()));
    out += key;
    for (const float x : table.entries.at(key)) {
      detail::put_le<float>(out, x);
    }
  }
  return out;
}

inline void write_embeddings(const EmbeddingTable& table, const std::string& path) {
  write_file(path, encode_embeddings(table));
}

inline EmbeddingTable decode_embeddings(std::string_view bytes, const std::string& what = "embedding file") {
  EmbeddingTable table;
  if (bytes.size() >= sizeof kEmbeddingMagic &&
      bytes.substr(0, sizeof kEmbeddingMagic) == std::string_view(kEmbeddingMagic, sizeof kEmbeddingMagic)) {
    detail::ByteReader reader(bytes.substr(sizeof kEmbeddingMagic), what);
    table.dim = reader.get<std::uint32_t>();
    if (table.dim == 0) {
      throw DataError(what + ": dimension must be at least 1");
    }
    const auto count = reader.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < count; ++i) {
      const auto len = reader.get<std::uint16_t>();
      std::string key(reader.take(len));
      std::vector<float> vec(table.dim);
      for (auto& x : vec) {
        x = reader.get<float>();
      }
      table.insert(std::move(key), std::move(vec));
    }
    if (!reader.done()) {
      throw DataError(what + ": trailing bytes after " + std::to_string(count) + " records");
    }
    return table;
  }

  std::istringstream in{std::string(bytes)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    try {
      const auto record = nlohmann::json::parse(line);
      auto vec = record.at("vec").get<std::vector<float>>();
      if (table.keys.empty()) {
        table.dim = vec.size();
        if (table.dim == 0) {
          throw DataError("empty vector");
        }
      }
      table.insert(record.at("key").get<std::string>(), std::move(vec));
    } catch (const std::exception& e) {
      throw DataError(what + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return table;
}

inline EmbeddingTable load_embeddings(const std::string& path) { return decode_embeddings(read_file(path), path); }

// ---------------------------------------------------------------------------
// Text encoders

/// Embedding key of a forecast: question id, date, forecaster id and the
/// forecast's position among all forecast records, joined by '|'.
inline std::string forecast_key(const Forecast& f, std::size_t ordinal) {
  return f.question_id + "|" + format_date(f.date) + "|" + f.forecaster_id + "|" + std::to_string(ordinal);
}

class TextEncoder {
public:
  explicit TextEncoder(EncoderConfig config) : config_(config) {
    if (config_.kind != EncoderKind::hashing) {
      throw UsageError("an external encoder needs an embedding table");
    }
    if (config_.dim == 0) {
      throw UsageError("encoder dimension must be at least 1");
    }
  }

  TextEncoder(EncoderConfig config, std::shared_ptr<const EmbeddingTable> table)
      : config_(config), table_(std::move(table)) {
    config_.kind = EncoderKind::external;
    if (!table_) {
      throw UsageError("an external encoder needs an embedding table");
    }
    config_.dim = table_->dim;
  }

  const EncoderConfig& config() const { return config_; }
  std::size_t dim() const { return config_.dim; }

  SparseVector encode_text(std::string_view text) const { return hash_encode_sparse(tokenize(text), config_); }

  SparseVector encode_question(const Question& q) const {
    if (table_) {
      return SparseVector::from_dense(lookup(*table_, q.id, config_.dim));
    }
    return encode_text(q.text);
  }

  SparseVector encode_forecast(const Forecast& f, std::size_t ordinal) const {
    if (table_) {
      return SparseVector::from_dense(lookup(*table_, forecast_key(f, ordinal), config_.dim));
    }
    return encode_text(f.justification);
  }

private:
  EncoderConfig config_;
  std::shared_ptr<const EmbeddingTable> table_;
};

/// Encodings of every question and forecast of a dataset, computed once.
struct EncodedDataset {
  std::size_t dim = 0;
  std::unordered_map<std::string, SparseVector> questions;
  std::vector<SparseVector> forecasts;  // by forecast ordinal

  EncodedDataset(const Dataset& dataset, const TextEncoder& encoder) : dim(encoder.dim()) {
    for (const auto& q : dataset.questions) {
      questions.emplace(q.id, encoder.encode_question(q));
    }
    forecasts.reserve(dataset.forecasts.size());
    for (std::size_t i = 0; i < dataset.forecasts.size(); ++i) {
      forecasts.push_back(encoder.encode_forecast(dataset.forecasts[i], i));
    }
  }

  const SparseVector& question(const std::string& id) const {
    const auto it = questions.find(id);
    if (it == questions.end()) {
      throw DataError("no encoding for question '" + id + "'");
    }
    return it->second;
  }
};

}  // namespace crowdcall

#endif  // CROWDCALL_ENCODE_HPP
