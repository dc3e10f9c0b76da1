#pragma once

// Consistency-based confidence for LLM descriptor sets. Two sampled sets are
// consistent when their retrieval feedback overlaps by at least eta and,
// optionally, their mean text embeddings agree to at least eta_text. The
// consistency graph's connected components are the groups; confidence is the
// largest group's share of the n samples.

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "oodcal/descriptor_bank.hpp"
#include "oodcal/embedcore.hpp"
#include "oodcal/retrieval.hpp"

namespace oodcal {

// Groups are connected components of the consistency graph, not cliques.
inline constexpr std::string_view kGroupingRule = "connected-components";

struct ConsistencyConfig {
  double eta = 0.9;
  double eta_text = 0.99;
  bool use_text_constraint = true;
  std::size_t k = 50;
  double gamma = 0.5;
  TextForm text_form = TextForm::rendered;
  unsigned threads = 1;

  // Throws ParameterError when a threshold leaves (0, 1] or gamma leaves [0, 1].
  void validate() const;
};

struct CalibratedClass {
  std::string class_name;
  double confidence = 0.0;
  std::vector<std::vector<int>> groups;
  int chosen_set = 0;
  bool augmented = false;
};

using BoolMatrix = std::vector<std::vector<bool>>;

bool consistent(const DescriptorSet& a, const DescriptorSet& b, const RetrievalVector& ra,
                const RetrievalVector& rb, const EmbeddingTable& texts,
                const ConsistencyConfig& cfg);

// Connected components, each sorted ascending, ordered by smallest member.
// Throws InvalidMatrixError unless the matrix is square, symmetric and has a
// true diagonal.
std::vector<std::vector<int>> group_sets(const BoolMatrix& pairwise);

CalibratedClass calibrate_class(const DescriptorBank& bank, const std::string& class_name,
                                const UnlabeledPool& pool, const EmbeddingTable& texts,
                                const ConsistencyConfig& cfg);

// Every class in the bank, in class-name order.
std::vector<CalibratedClass> calibrate_all(const DescriptorBank& bank, const UnlabeledPool& pool,
                                           const EmbeddingTable& texts,
                                           const ConsistencyConfig& cfg);

nlohmann::json calibration_to_json(const std::vector<CalibratedClass>& classes,
                                   const ConsistencyConfig& cfg, int n, std::size_t pool_size);
std::map<std::string, CalibratedClass> calibration_from_json(const nlohmann::json& j);
std::map<std::string, CalibratedClass> load_calibration_file(const std::string& path);

}  // namespace oodcal
