#pragma once

// Vector primitives and the id-keyed embedding store. Encoders run outside
// this library; tables only hold their outputs.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace oodcal {

enum class EmbeddingKind : std::uint16_t { image = 0, text = 1 };

std::string_view to_string(EmbeddingKind kind);
EmbeddingKind kind_from_string(std::string_view s);

struct Embedding {
  std::string id;
  EmbeddingKind kind = EmbeddingKind::text;
  std::vector<float> vec;
};

// Cosine similarity accumulated in double and clamped to [-1, 1].
// Throws DimensionError on length mismatch, DegenerateVectorError on a
// zero-norm argument.
double cosine(std::span<const float> a, std::span<const float> b);
double cosine(const Embedding& a, const Embedding& b);

// Component-wise mean. The result id is empty; kind is inherited and must be
// uniform across inputs.
Embedding mean_embedding(std::span<const Embedding> vs);
Embedding mean_embedding(std::span<const Embedding* const> vs);

// Immutable-after-load store. Entries keep insertion order for serialization;
// lookups go through a hash index.
class EmbeddingTable {
 public:
  explicit EmbeddingTable(std::size_t dim);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  // Validates dimension, finiteness, and id uniqueness.
  void add(Embedding e);

  bool contains(std::string_view id) const;
  const Embedding* find(std::string_view id) const;
  // Throws MissingEmbeddingError for unknown ids.
  const Embedding& at(std::string_view id) const;

  const std::vector<Embedding>& entries() const noexcept { return entries_; }

  std::map<std::string, std::string>& meta() noexcept { return meta_; }
  const std::map<std::string, std::string>& meta() const noexcept { return meta_; }

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const noexcept {
      return std::hash<std::string_view>{}(s);
    }
  };

  std::size_t dim_;
  std::vector<Embedding> entries_;
  std::unordered_map<std::string, std::size_t, Hash, std::equal_to<>> index_;
  std::map<std::string, std::string> meta_;
};

enum class TableFormat { jsonl, binary };

// Binary tables start with this magic; anything else is treated as JSONL by
// load_table_file.
inline constexpr char kBinaryMagic[4] = {'E', 'M', 'B', '1'};

EmbeddingTable load_table(std::istream& in, TableFormat format);
void save_table(const EmbeddingTable& table, std::ostream& out, TableFormat format);

// Sniffs the magic bytes to pick the format.
EmbeddingTable load_table_file(const std::string& path);
// Format from extension: ".jsonl" is JSONL, anything else binary.
void save_table_file(const EmbeddingTable& table, const std::string& path);

}  // namespace oodcal
