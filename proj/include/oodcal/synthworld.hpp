#pragma once

// Seeded synthetic embedding universes with known geometry: ID class
// clusters, near-OOD clusters, faithful and hallucinated descriptor sets, and
// object concepts. Regenerating from an equal WorldSpec is byte-identical.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "oodcal/descriptor_bank.hpp"
#include "oodcal/embedcore.hpp"
#include "oodcal/scoring.hpp"

namespace oodcal {

// SplitMix64 (Steele, Lea, Flood 2014): state += 0x9E3779B97F4A7C15, then the
// 30/27/31 xor-shift-multiply finalizer. Fully specified, so sequences match
// on every platform.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next();
  // Top 53 bits scaled to [0, 1).
  double uniform();
  // Uniform integer in [0, n), by rejection to avoid modulo bias.
  std::uint64_t below(std::uint64_t n);
  // Box-Muller on (u1, u2) drawn in that order: returns sqrt(-2 ln(1 - u1)) *
  // cos(2 pi u2) and caches the matching sin branch for the next call.
  double gaussian();

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct WorldSpec {
  std::uint64_t seed = 0;
  std::size_t dim = 0;
  std::size_t n_classes = 5;
  std::size_t samples_per_class = 20;
  std::size_t n_ood = 100;
  std::size_t pool_size = 500;
  std::size_t n_sets = 10;
  double hallucination_rate = 0.0;
  // Expected norm of the additive noise on image embeddings (centers are unit).
  double noise_sigma = 1.2;

  std::size_t ood_clusters = 5;
  // Cosine between an OOD center and the ID center it leans toward.
  double ood_overlap = 0.75;
  std::size_t descriptors_per_set = 4;
  std::size_t descriptor_vocab = 6;
  double descriptor_noise = 0.15;
  double name_noise = 0.5;
  std::size_t object_vocab = 5;
  std::size_t objects_per_sample = 2;
  double object_noise = 1.5;

  // Throws GenerationError when a count is zero, a rate leaves [0, 1], or the
  // centers cannot be made orthonormal in `dim` dimensions.
  void validate() const;
  nlohmann::json to_json() const;
};

struct WorldBundle {
  WorldSpec spec;
  EmbeddingTable images{1};
  EmbeddingTable texts{1};
  DescriptorBank bank{1};
  std::vector<std::string> pool_ids;
  std::vector<SampleConcepts> detections;
  std::vector<LabeledSample> labels;
  // Sample indices of hallucinated descriptor sets, per class.
  std::map<std::string, std::vector<int>> hallucinated;
};

WorldBundle generate(const WorldSpec& spec);

// File names inside a bundle directory.
namespace bundle_files {
inline constexpr const char* images = "images.emb";
inline constexpr const char* texts = "texts.jsonl";
inline constexpr const char* bank = "bank.json";
inline constexpr const char* pool = "pool.json";
inline constexpr const char* detections = "detections.jsonl";
inline constexpr const char* labels = "labels.json";
inline constexpr const char* world = "world.json";
}  // namespace bundle_files

void write_bundle(const WorldBundle& bundle, const std::string& dir);

}  // namespace oodcal
