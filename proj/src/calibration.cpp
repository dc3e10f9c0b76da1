#include "oodcal/calibration.hpp"

#include <algorithm>
#include <numeric>

#include "oodcal/errors.hpp"
#include "oodcal/io_util.hpp"
#include "oodcal/parallel.hpp"

namespace oodcal {
namespace {

Embedding mean_text_embedding(const DescriptorSet& set, const EmbeddingTable& texts,
                              TextForm form) {
  auto names = set.texts(form);
  std::sort(names.begin(), names.end());
  std::vector<const Embedding*> vs;
  vs.reserve(names.size());
  for (const auto& t : names) vs.push_back(&texts.at(t));
  return mean_embedding(std::span<const Embedding* const>(vs));
}

int find_root(std::vector<int>& parent, int x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

}  // namespace

void ConsistencyConfig::validate() const {
  if (!(eta > 0.0 && eta <= 1.0)) throw ParameterError("eta must lie in (0, 1]");
  if (!(eta_text > 0.0 && eta_text <= 1.0)) throw ParameterError("eta-text must lie in (0, 1]");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ParameterError("gamma must lie in [0, 1]");
  if (k == 0) throw ParameterError("k must be positive");
}

bool consistent(const DescriptorSet& a, const DescriptorSet& b, const RetrievalVector& ra,
                const RetrievalVector& rb, const EmbeddingTable& texts,
                const ConsistencyConfig& cfg) {
  if (retrieval_overlap(ra, rb) < cfg.eta) return false;
  if (!cfg.use_text_constraint) return true;
  return cosine(mean_text_embedding(a, texts, cfg.text_form),
                mean_text_embedding(b, texts, cfg.text_form)) >= cfg.eta_text;
}

std::vector<std::vector<int>> group_sets(const BoolMatrix& pairwise) {
  const int n = static_cast<int>(pairwise.size());
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(pairwise[i].size()) != n)
      throw InvalidMatrixError("consistency matrix is not square");
    if (!pairwise[i][i]) throw InvalidMatrixError("consistency matrix diagonal must be true");
  }
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (pairwise[i][j] != pairwise[j][i])
        throw InvalidMatrixError("consistency matrix is not symmetric at (" + std::to_string(i) +
                                 ", " + std::to_string(j) + ")");
      if (!pairwise[i][j]) continue;
      const int ri = find_root(parent, i), rj = find_root(parent, j);
      if (ri != rj) parent[std::max(ri, rj)] = std::min(ri, rj);
    }
  }
  // Roots are always the smallest member of their component, so visiting i in
  // ascending order creates groups in smallest-member order.
  std::vector<int> slot(n, -1);
  std::vector<std::vector<int>> groups;
  for (int i = 0; i < n; ++i) {
    const int r = find_root(parent, i);
    if (slot[r] < 0) {
      slot[r] = static_cast<int>(groups.size());
      groups.emplace_back();
    }
    groups[slot[r]].push_back(i);
  }
  return groups;
}

CalibratedClass calibrate_class(const DescriptorBank& bank, const std::string& class_name,
                                const UnlabeledPool& pool, const EmbeddingTable& texts,
                                const ConsistencyConfig& cfg) {
  cfg.validate();
  const auto& sets = bank.sets(class_name);
  const std::size_t n = sets.size();

  std::vector<RetrievalVector> feedback;
  feedback.reserve(n);
  for (const auto& s : sets) feedback.push_back(retrieve(pool, s, texts, cfg.k, cfg.text_form));

  BoolMatrix pairwise(n, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < n; ++i) {
    pairwise[i][i] = true;
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool c = consistent(sets[i], sets[j], feedback[i], feedback[j], texts, cfg);
      pairwise[i][j] = pairwise[j][i] = c;
    }
  }

  CalibratedClass out;
  out.class_name = class_name;
  out.groups = group_sets(pairwise);
  // First largest group in smallest-member order wins ties.
  const auto largest = std::max_element(
      out.groups.begin(), out.groups.end(),
      [](const auto& a, const auto& b) { return a.size() < b.size(); });
  out.confidence = static_cast<double>(largest->size()) / static_cast<double>(n);
  out.chosen_set = largest->front();
  out.augmented = out.confidence >= cfg.gamma;
  return out;
}

std::vector<CalibratedClass> calibrate_all(const DescriptorBank& bank, const UnlabeledPool& pool,
                                           const EmbeddingTable& texts,
                                           const ConsistencyConfig& cfg) {
  cfg.validate();
  const auto names = bank.class_names();
  std::vector<CalibratedClass> out(names.size());
  parallel_for(names.size(), cfg.threads, [&](std::size_t i) {
    out[i] = calibrate_class(bank, names[i], pool, texts, cfg);
  });
  return out;
}

nlohmann::json calibration_to_json(const std::vector<CalibratedClass>& classes,
                                   const ConsistencyConfig& cfg, int n, std::size_t pool_size) {
  nlohmann::json config = {{"eta", cfg.eta},
                           {"eta-text", cfg.eta_text},
                           {"use_text_constraint", cfg.use_text_constraint},
                           {"k", cfg.k},
                           {"n", n},
                           {"m", pool_size},
                           {"gamma", cfg.gamma},
                           {"text_form", to_string(cfg.text_form)},
                           {"grouping", kGroupingRule}};
  nlohmann::json out = nlohmann::json::object();
  for (const auto& c : classes) {
    out[c.class_name] = {{"confidence", c.confidence},
                         {"groups", c.groups},
                         {"chosen_set", c.chosen_set},
                         {"augmented", c.augmented}};
  }
  return {{"version", 1}, {"config", std::move(config)}, {"classes", std::move(out)}};
}

std::map<std::string, CalibratedClass> calibration_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("version", 0) != 1 || !j.contains("classes") ||
      !j["classes"].is_object())
    throw ParseError("calibration file needs version 1 and a classes object", 0);
  std::map<std::string, CalibratedClass> out;
  for (const auto& [name, v] : j["classes"].items()) {
    try {
      CalibratedClass c;
      c.class_name = name;
      c.confidence = v.at("confidence").get<double>();
      c.groups = v.at("groups").get<std::vector<std::vector<int>>>();
      c.chosen_set = v.at("chosen_set").get<int>();
      c.augmented = v.value("augmented", false);
      out.emplace(name, std::move(c));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("calibration entry \"" + name + "\": " + e.what(), 0);
    }
  }
  return out;
}

std::map<std::string, CalibratedClass> load_calibration_file(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), e.byte);
  }
  return calibration_from_json(j);
}

}  // namespace oodcal
