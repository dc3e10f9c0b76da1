#pragma once

// Brute-force top-k retrieval over a fixed unlabeled image pool. A descriptor
// set's feedback is the k-hot membership vector of the images it retrieves.

#include <cstdint>
#include <string>
#include <vector>

#include "oodcal/descriptor_bank.hpp"
#include "oodcal/embedcore.hpp"

namespace oodcal {

class UnlabeledPool {
 public:
  // Every id must resolve to an image-kind embedding in `images`; the table
  // must outlive the pool.
  UnlabeledPool(std::vector<std::string> image_ids, const EmbeddingTable& images);

  std::size_t size() const noexcept { return members_.size(); }
  const std::vector<std::string>& image_ids() const noexcept { return ids_; }
  const Embedding& image(std::size_t j) const { return *members_[j]; }

 private:
  std::vector<std::string> ids_;
  std::vector<const Embedding*> members_;
};

class RetrievalVector {
 public:
  RetrievalVector(std::vector<std::uint8_t> bits, std::size_t k);

  std::size_t size() const noexcept { return bits_.size(); }
  std::size_t k() const noexcept { return k_; }
  bool test(std::size_t j) const { return bits_[j] != 0; }
  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }
  // Indices of set bits, ascending.
  std::vector<std::size_t> members() const;

  friend bool operator==(const RetrievalVector&, const RetrievalVector&) = default;

 private:
  std::vector<std::uint8_t> bits_;
  std::size_t k_;
};

// Per-image mean cosine over the set's descriptor texts, in pool order.
std::vector<double> retrieval_scores(const UnlabeledPool& pool, const DescriptorSet& set,
                                     const EmbeddingTable& texts, TextForm form = TextForm::rendered,
                                     unsigned threads = 1);

// Marks the k highest-scoring pool images; ties at the cut go to the lower
// pool index. Throws ParameterError for k == 0 or k > m and
// MissingEmbeddingError for an unembedded descriptor text.
RetrievalVector retrieve(const UnlabeledPool& pool, const DescriptorSet& set,
                         const EmbeddingTable& texts, std::size_t k,
                         TextForm form = TextForm::rendered, unsigned threads = 1);

// Top-k selection on precomputed scores with the same tie rule.
RetrievalVector top_k(const std::vector<double>& scores, std::size_t k);

// |a ∩ b| / k. For two k-hot vectors this is their cosine similarity.
double retrieval_overlap(const RetrievalVector& a, const RetrievalVector& b);

// {"version":1,"image_ids":[...]}
std::vector<std::string> load_pool_manifest(const std::string& path);
void save_pool_manifest(const std::vector<std::string>& image_ids, const std::string& path);

}  // namespace oodcal
