#include "oodcal/retrieval.hpp"

#include <algorithm>
#include <numeric>

#include <json.hpp>

#include "oodcal/errors.hpp"
#include "oodcal/io_util.hpp"
#include "oodcal/parallel.hpp"

namespace oodcal {

UnlabeledPool::UnlabeledPool(std::vector<std::string> image_ids, const EmbeddingTable& images)
    : ids_(std::move(image_ids)) {
  if (ids_.empty()) throw EmptyInputError("unlabeled pool is empty");
  members_.reserve(ids_.size());
  for (const auto& id : ids_) {
    const Embedding& e = images.at(id);
    if (e.kind != EmbeddingKind::image)
      throw ParameterError("pool member \"" + id + "\" is not an image embedding");
    members_.push_back(&e);
  }
}

RetrievalVector::RetrievalVector(std::vector<std::uint8_t> bits, std::size_t k)
    : bits_(std::move(bits)), k_(k) {
  const auto ones = static_cast<std::size_t>(std::count_if(
      bits_.begin(), bits_.end(), [](std::uint8_t b) { return b != 0; }));
  if (k_ == 0 || ones != k_)
    throw ParameterError("retrieval vector must have exactly k >= 1 set bits");
  for (auto& b : bits_) b = b ? 1 : 0;
}

std::vector<std::size_t> RetrievalVector::members() const {
  std::vector<std::size_t> out;
  out.reserve(k_);
  for (std::size_t j = 0; j < bits_.size(); ++j)
    if (bits_[j]) out.push_back(j);
  return out;
}

std::vector<double> retrieval_scores(const UnlabeledPool& pool, const DescriptorSet& set,
                                     const EmbeddingTable& texts, TextForm form, unsigned threads) {
  // Sorted text order makes the floating-point sum independent of the order
  // descriptors were listed in.
  auto names = set.texts(form);
  std::sort(names.begin(), names.end());
  std::vector<const Embedding*> text_vecs;
  text_vecs.reserve(names.size());
  for (const auto& t : names) text_vecs.push_back(&texts.at(t));

  std::vector<double> scores(pool.size());
  const double count = static_cast<double>(text_vecs.size());
  parallel_for(pool.size(), threads, [&](std::size_t j) {
    const Embedding& x = pool.image(j);
    double sum = 0.0;
    for (const Embedding* t : text_vecs) sum += cosine(x, *t);
    scores[j] = sum / count;
  });
  return scores;
}

RetrievalVector top_k(const std::vector<double>& scores, std::size_t k) {
  const std::size_t m = scores.size();
  if (k == 0 || k > m)
    throw ParameterError("retrieval depth k=" + std::to_string(k) + " outside [1, " +
                         std::to_string(m) + "]");
  std::vector<std::uint32_t> order(m);
  std::iota(order.begin(), order.end(), 0u);
  // Strict total order: score descending, then index ascending.
  auto better = [&](std::uint32_t a, std::uint32_t b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
  };
  if (k < m) std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1),
                              order.end(), better);
  std::vector<std::uint8_t> bits(m, 0);
  if (k == m) {
    std::fill(bits.begin(), bits.end(), 1);
  } else {
    // nth_element leaves the k best in the first k slots.
    for (std::size_t i = 0; i < k; ++i) bits[order[i]] = 1;
  }
  return RetrievalVector(std::move(bits), k);
}

RetrievalVector retrieve(const UnlabeledPool& pool, const DescriptorSet& set,
                         const EmbeddingTable& texts, std::size_t k, TextForm form,
                         unsigned threads) {
  if (k == 0 || k > pool.size())
    throw ParameterError("retrieval depth k=" + std::to_string(k) + " outside [1, " +
                         std::to_string(pool.size()) + "]");
  return top_k(retrieval_scores(pool, set, texts, form, threads), k);
}

double retrieval_overlap(const RetrievalVector& a, const RetrievalVector& b) {
  if (a.size() != b.size())
    throw DimensionError("retrieval vectors over pools of size " + std::to_string(a.size()) +
                         " and " + std::to_string(b.size()));
  if (a.k() != b.k()) throw ParameterError("retrieval vectors built with different k");
  std::size_t shared = 0;
  for (std::size_t j = 0; j < a.size(); ++j) shared += a.bits()[j] & b.bits()[j];
  return static_cast<double>(shared) / static_cast<double>(a.k());
}

std::vector<std::string> load_pool_manifest(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), e.byte);
  }
  if (!j.is_object() || j.value("version", 0) != 1 || !j.contains("image_ids") ||
      !j["image_ids"].is_array())
    throw ParseError(path + ": pool manifest needs version 1 and an image_ids array", 0);
  std::vector<std::string> ids;
  for (const auto& id : j["image_ids"]) {
    if (!id.is_string()) throw ParseError(path + ": image ids must be strings", 0);
    ids.push_back(id.get<std::string>());
  }
  return ids;
}

void save_pool_manifest(const std::vector<std::string>& image_ids, const std::string& path) {
  nlohmann::json j = {{"version", 1}, {"image_ids", image_ids}};
  io::write_file_atomic(path, j.dump() + "\n");
}

}  // namespace oodcal
