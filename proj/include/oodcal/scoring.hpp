#pragma once

// Class matching scores and the thresholded detector.
//
//   s_c(x) = w_img * mean_{t in t(c)} cos(I(x), T(t))
//          + w_obj * mean_{v in v(x), t in t(c)} cos(T(v), T(t))
//
// t(c) is the rendered descriptor list of the chosen set when the class is
// trusted (confidence >= gamma) and [c] otherwise. The object term is 0 when
// no objects were detected. s_max is the largest softmax component over all
// classes; the detector outputs 1 (ID) iff s_max >= lambda.

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "oodcal/calibration.hpp"
#include "oodcal/descriptor_bank.hpp"
#include "oodcal/embedcore.hpp"

namespace oodcal {

struct ClassTextFeatures {
  std::string class_name;
  std::vector<std::string> texts;
  bool augmented = false;
};

struct SampleConcepts {
  std::string image_id;
  std::vector<std::string> objects;
};

// Drops repeated object names, keeping first occurrences in order.
SampleConcepts make_sample_concepts(std::string image_id, const std::vector<std::string>& objects);

struct DetectionResult {
  std::string image_id;
  std::map<std::string, double> per_class_scores;
  double s_max = 0.0;
  int decision = 0;
  std::string argmax_class;
};

struct ScoreWeights {
  double w_img = 1.0;
  double w_obj = 1.0;
};

// Ablation toggles.
//   no_objects:     drop the object term.
//   no_calibration: always augment, using the first sampled set.
//   no_knowledge:   never augment; every class is its bare name.
//   class_sim:      object term compares against [c] instead of t(c).
struct Variant {
  bool no_objects = false;
  bool no_calibration = false;
  bool no_knowledge = false;
  bool class_sim = false;

  // Comma-separated names as above; empty string or "full" means none.
  static Variant parse(std::string_view list);
  std::string to_string() const;
};

// Sample used when calibration is bypassed.
inline constexpr int kUncalibratedSet = 0;

struct PipelineConfig {
  double gamma = 0.5;
  std::optional<double> lambda;
  double temperature = 1.0;
  ScoreWeights weights;
  Variant variant;
  unsigned threads = 1;
};

ClassTextFeatures build_text_features(const CalibratedClass& calibrated,
                                      const DescriptorBank& bank, double gamma);

// t(c) for every bank class in name order, honoring the variant toggles.
// `calibration` may be empty when no_knowledge or no_calibration is set;
// otherwise every class needs an entry.
std::vector<ClassTextFeatures> resolve_features(
    const DescriptorBank& bank, const std::map<std::string, CalibratedClass>& calibration,
    const PipelineConfig& cfg);

enum class ObjectMatch { features, class_name };

double class_score(const Embedding& image, const SampleConcepts& concepts,
                   const ClassTextFeatures& features, const EmbeddingTable& texts,
                   const ScoreWeights& weights, ObjectMatch match = ObjectMatch::features);

struct MaxScore {
  double s_max;
  std::string argmax_class;
};

// Full softmax distribution over scores / temperature, max-subtracted.
std::map<std::string, double> softmax(const std::map<std::string, double>& per_class_scores,
                                      double temperature);

// Largest softmax component and its class. Ties go to the
// lexicographically smallest class name.
MaxScore max_matching_score(const std::map<std::string, double>& per_class_scores,
                            double temperature);

int detect(double s_max, double lambda);

struct ScoringSample {
  Embedding image;
  SampleConcepts concepts;
};

std::vector<DetectionResult> run_pipeline(const std::vector<ScoringSample>& samples,
                                          const std::vector<ClassTextFeatures>& features,
                                          const EmbeddingTable& texts, const PipelineConfig& cfg);

// Detections JSONL: {"image_id":...,"objects":[...]} per line. Objects are
// deduplicated on load; a repeated image id is a DuplicateIdError.
std::vector<SampleConcepts> load_detections(std::istream& in);
std::vector<SampleConcepts> load_detections_file(const std::string& path);
std::string detections_to_jsonl(const std::vector<SampleConcepts>& detections);

enum class SampleLabel { id, ood };

struct LabeledSample {
  std::string image_id;
  SampleLabel label = SampleLabel::id;
  std::optional<std::string> class_name;
};

std::string_view to_string(SampleLabel label);
SampleLabel label_from_string(std::string_view s);

// {"version":1,"samples":[{"image_id":...,"label":"id"|"ood","class":...}]}
std::vector<LabeledSample> load_labels_file(const std::string& path);
std::string labels_to_json(const std::vector<LabeledSample>& labels);

// CSV with columns image_id,label,s_max,argmax_class,decision and one column
// per class score, classes in name order. Floats use shortest round-trip text.
std::string score_report_csv(const std::vector<DetectionResult>& results,
                             const std::vector<SampleLabel>& labels);

}  // namespace oodcal
