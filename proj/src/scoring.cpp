#include "oodcal/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "oodcal/errors.hpp"
#include "oodcal/io_util.hpp"
#include "oodcal/parallel.hpp"

namespace oodcal {
namespace {

std::vector<const Embedding*> lookup_sorted(std::vector<std::string> names,
                                            const EmbeddingTable& texts) {
  std::sort(names.begin(), names.end());
  std::vector<const Embedding*> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(&texts.at(n));
  return out;
}

}  // namespace

SampleConcepts make_sample_concepts(std::string image_id, const std::vector<std::string>& objects) {
  SampleConcepts out{std::move(image_id), {}};
  std::set<std::string_view> seen;
  for (const auto& o : objects)
    if (seen.insert(o).second) out.objects.push_back(o);
  return out;
}

Variant Variant::parse(std::string_view list) {
  Variant v;
  while (!list.empty()) {
    const auto comma = list.find(',');
    const auto item = list.substr(0, comma);
    if (item == "no_objects") {
      v.no_objects = true;
    } else if (item == "no_calibration") {
      v.no_calibration = true;
    } else if (item == "no_knowledge") {
      v.no_knowledge = true;
    } else if (item == "class_sim") {
      v.class_sim = true;
    } else if (item != "full" && !item.empty()) {
      throw ParameterError("unknown variant \"" + std::string(item) + "\"");
    }
    if (comma == std::string_view::npos) break;
    list.remove_prefix(comma + 1);
  }
  return v;
}

std::string Variant::to_string() const {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(no_objects, "no_objects");
  add(no_calibration, "no_calibration");
  add(no_knowledge, "no_knowledge");
  add(class_sim, "class_sim");
  return out.empty() ? "full" : out;
}

ClassTextFeatures build_text_features(const CalibratedClass& calibrated,
                                      const DescriptorBank& bank, double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ParameterError("gamma must lie in [0, 1]");
  ClassTextFeatures out;
  out.class_name = calibrated.class_name;
  out.augmented = calibrated.confidence >= gamma;
  if (!out.augmented) {
    out.texts = {calibrated.class_name};
    return out;
  }
  const auto& sets = bank.sets(calibrated.class_name);
  if (calibrated.chosen_set < 0 || calibrated.chosen_set >= static_cast<int>(sets.size()))
    throw ParameterError("chosen set " + std::to_string(calibrated.chosen_set) + " of class \"" +
                         calibrated.class_name + "\" is out of range");
  out.texts = sets[calibrated.chosen_set].texts(TextForm::rendered);
  return out;
}

std::vector<ClassTextFeatures> resolve_features(
    const DescriptorBank& bank, const std::map<std::string, CalibratedClass>& calibration,
    const PipelineConfig& cfg) {
  std::vector<ClassTextFeatures> out;
  for (const auto& [name, sets] : bank.classes()) {
    if (cfg.variant.no_knowledge) {
      out.push_back({name, {name}, false});
    } else if (cfg.variant.no_calibration) {
      out.push_back({name, sets[kUncalibratedSet].texts(TextForm::rendered), true});
    } else {
      auto it = calibration.find(name);
      if (it == calibration.end())
        throw Error("no calibration entry for class \"" + name + "\"");
      out.push_back(build_text_features(it->second, bank, cfg.gamma));
    }
  }
  return out;
}

double class_score(const Embedding& image, const SampleConcepts& concepts,
                   const ClassTextFeatures& features, const EmbeddingTable& texts,
                   const ScoreWeights& weights, ObjectMatch match) {
  if (features.texts.empty())
    throw EmptyInputError("class \"" + features.class_name + "\" has no textual features");
  const auto class_texts = lookup_sorted(features.texts, texts);

  double image_term = 0.0;
  for (const Embedding* t : class_texts) image_term += cosine(image, *t);
  image_term /= static_cast<double>(class_texts.size());

  double object_term = 0.0;
  if (!concepts.objects.empty()) {
    const auto objects = lookup_sorted(concepts.objects, texts);
    const auto targets = match == ObjectMatch::class_name
                             ? lookup_sorted({features.class_name}, texts)
                             : class_texts;
    for (const Embedding* v : objects)
      for (const Embedding* t : targets) object_term += cosine(*v, *t);
    object_term /= static_cast<double>(objects.size() * targets.size());
  }
  return weights.w_img * image_term + weights.w_obj * object_term;
}

MaxScore max_matching_score(const std::map<std::string, double>& per_class_scores,
                            double temperature) {
  if (per_class_scores.empty()) throw EmptyInputError("softmax over zero classes");
  if (!(temperature > 0.0)) throw ParameterError("temperature must be positive");
  std::vector<double> z;
  z.reserve(per_class_scores.size());
  double top = -INFINITY;
  const std::string* argmax = nullptr;
  for (const auto& [name, s] : per_class_scores) {
    if (!std::isfinite(s)) throw NonFiniteError("class \"" + name + "\" has a non-finite score");
    z.push_back(s / temperature);
    if (z.back() > top) {
      top = z.back();
      argmax = &name;
    }
  }
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - top);
  return {1.0 / sum, *argmax};
}

std::map<std::string, double> softmax(const std::map<std::string, double>& per_class_scores,
                                      double temperature) {
  const double s_max = max_matching_score(per_class_scores, temperature).s_max;
  double top = -INFINITY;
  for (const auto& [_, s] : per_class_scores) top = std::max(top, s / temperature);
  // s_max is 1 / sum(exp(z - top)), so each component is exp(z - top) * s_max.
  std::map<std::string, double> out;
  for (const auto& [name, s] : per_class_scores) out[name] = std::exp(s / temperature - top) * s_max;
  return out;
}

int detect(double s_max, double lambda) { return s_max >= lambda ? 1 : 0; }

std::vector<DetectionResult> run_pipeline(const std::vector<ScoringSample>& samples,
                                          const std::vector<ClassTextFeatures>& features,
                                          const EmbeddingTable& texts, const PipelineConfig& cfg) {
  if (!cfg.lambda) throw ParameterError("lambda is required for detection decisions");
  if (!(cfg.temperature > 0.0)) throw ParameterError("temperature must be positive");
  if (samples.empty()) return {};
  if (features.empty()) throw EmptyInputError("no ID classes to score against");

  const ObjectMatch match = cfg.variant.class_sim ? ObjectMatch::class_name : ObjectMatch::features;
  std::vector<DetectionResult> out(samples.size());
  parallel_for(samples.size(), cfg.threads, [&](std::size_t i) {
    const auto& sample = samples[i];
    SampleConcepts concepts = sample.concepts;
    if (cfg.variant.no_objects) concepts.objects.clear();

    DetectionResult& r = out[i];
    r.image_id = sample.concepts.image_id;
    for (const auto& f : features)
      r.per_class_scores[f.class_name] =
          class_score(sample.image, concepts, f, texts, cfg.weights, match);
    auto best = max_matching_score(r.per_class_scores, cfg.temperature);
    r.s_max = best.s_max;
    r.argmax_class = std::move(best.argmax_class);
    r.decision = detect(r.s_max, *cfg.lambda);
  });
  return out;
}

std::vector<SampleConcepts> load_detections(std::istream& in) {
  std::vector<SampleConcepts> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("bad detections record: ") + e.what(), line_no);
    }
    if (!rec.is_object() || !rec.contains("image_id") || !rec["image_id"].is_string() ||
        !rec.contains("objects") || !rec["objects"].is_array())
      throw ParseError("detections record needs image_id and objects", line_no);
    std::vector<std::string> objects;
    for (const auto& o : rec["objects"]) {
      if (!o.is_string() || o.get<std::string>().empty())
        throw ParseError("object names must be non-empty strings", line_no);
      objects.push_back(o.get<std::string>());
    }
    auto id = rec["image_id"].get<std::string>();
    if (!ids.insert(id).second) throw DuplicateIdError("duplicate detections for \"" + id + "\"");
    out.push_back(make_sample_concepts(std::move(id), objects));
  }
  return out;
}

std::vector<SampleConcepts> load_detections_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  return load_detections(f);
}

std::string detections_to_jsonl(const std::vector<SampleConcepts>& detections) {
  std::string out;
  for (const auto& d : detections) {
    out += nlohmann::json{{"image_id", d.image_id}, {"objects", d.objects}}.dump();
    out += '\n';
  }
  return out;
}

std::string_view to_string(SampleLabel label) { return label == SampleLabel::id ? "id" : "ood"; }

SampleLabel label_from_string(std::string_view s) {
  if (s == "id") return SampleLabel::id;
  if (s == "ood") return SampleLabel::ood;
  throw ParameterError("label must be id or ood, got \"" + std::string(s) + "\"");
}

std::vector<LabeledSample> load_labels_file(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), e.byte);
  }
  if (!j.is_object() || j.value("version", 0) != 1 || !j.contains("samples") ||
      !j["samples"].is_array())
    throw ParseError(path + ": labels file needs version 1 and a samples array", 0);
  std::vector<LabeledSample> out;
  std::set<std::string> ids;
  for (const auto& s : j["samples"]) {
    if (!s.is_object() || !s.contains("image_id") || !s["image_id"].is_string() ||
        !s.contains("label") || !s["label"].is_string())
      throw ParseError(path + ": each sample needs image_id and label", out.size());
    LabeledSample ls;
    ls.image_id = s["image_id"].get<std::string>();
    try {
      ls.label = label_from_string(s["label"].get<std::string>());
    } catch (const ParameterError& e) {
      throw ParseError(path + ": " + e.what(), out.size());
    }
    if (s.contains("class") && s["class"].is_string()) ls.class_name = s["class"].get<std::string>();
    if (!ids.insert(ls.image_id).second)
      throw DuplicateIdError("duplicate sample \"" + ls.image_id + "\" in " + path);
    out.push_back(std::move(ls));
  }
  return out;
}

std::string labels_to_json(const std::vector<LabeledSample>& labels) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& l : labels) {
    nlohmann::json s = {{"image_id", l.image_id}, {"label", to_string(l.label)}};
    if (l.class_name) s["class"] = *l.class_name;
    arr.push_back(std::move(s));
  }
  return nlohmann::json{{"version", 1}, {"samples", std::move(arr)}}.dump(1) + "\n";
}

std::string score_report_csv(const std::vector<DetectionResult>& results,
                             const std::vector<SampleLabel>& labels) {
  if (labels.size() != results.size())
    throw ParameterError("score report needs one label per result");
  std::string out = "image_id,label,s_max,argmax_class,decision";
  if (!results.empty())
    for (const auto& [name, _] : results.front().per_class_scores) out += "," + io::csv_field(name);
  out += '\n';
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    out += io::csv_field(r.image_id);
    out += ',';
    out += to_string(labels[i]);
    out += ',';
    out += io::format_double(r.s_max);
    out += ',';
    out += io::csv_field(r.argmax_class);
    out += ',';
    out += std::to_string(r.decision);
    for (const auto& [_, s] : r.per_class_scores) {
      out += ',';
      out += io::format_double(s);
    }
    out += '\n';
  }
  return out;
}

}  // namespace oodcal
