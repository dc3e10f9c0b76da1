#include "oodcal/cli.hpp"

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "oodcal/calibration.hpp"
#include "oodcal/descriptor_bank.hpp"
#include "oodcal/embedcore.hpp"
#include "oodcal/errors.hpp"
#include "oodcal/evaluation.hpp"
#include "oodcal/io_util.hpp"
#include "oodcal/retrieval.hpp"
#include "oodcal/scoring.hpp"
#include "oodcal/synthworld.hpp"

namespace oodcal::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kConfigEnv = "OODCAL_CONFIG";

// Raised for missing or ill-typed settings; maps to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class Kind { path, paths, string, real, count, boolean };

struct OptionSpec {
  const char* key;
  Kind kind;
  const char* help;
};

// Settings merged from flags, the config file and defaults, in that order of
// precedence. Config keys are the long flag names without dashes.
class Settings {
 public:
  void load_config(const std::string& path) {
    json j;
    try {
      j = json::parse(io::read_file(path));
    } catch (const json::parse_error& e) {
      throw ConfigError(path + ": " + e.what());
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    if (!j.is_object()) throw ConfigError(path + ": config must be a JSON object");
    config_ = std::move(j);
    config_dir_ = fs::path(path).parent_path();
  }

  void set_flag(const OptionSpec& spec, const std::vector<std::string>& raw) {
    flags_[spec.key] = convert(spec, raw);
  }

  bool has(const std::string& key) const {
    return flags_.count(key) || (config_.is_object() && config_.contains(key));
  }

  const json* lookup(const std::string& key, bool* from_config = nullptr) const {
    if (auto it = flags_.find(key); it != flags_.end()) {
      if (from_config) *from_config = false;
      return &it->second;
    }
    if (config_.is_object() && config_.contains(key)) {
      if (from_config) *from_config = true;
      return &config_[key];
    }
    return nullptr;
  }

  double real(const std::string& key, std::optional<double> fallback = {}) const {
    const json* v = lookup(key);
    if (!v) return require(fallback, key);
    if (!v->is_number()) throw ConfigError(key + " must be a number");
    return v->get<double>();
  }

  std::optional<double> optional_real(const std::string& key) const {
    if (!lookup(key)) return std::nullopt;
    return real(key);
  }

  std::uint64_t count(const std::string& key, std::optional<std::uint64_t> fallback = {}) const {
    const json* v = lookup(key);
    if (!v) return require(fallback, key);
    if (!v->is_number_unsigned()) throw ConfigError(key + " must be a non-negative integer");
    return v->get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) const {
    const json* v = lookup(key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw ConfigError(key + " must be true or false");
    return v->get<bool>();
  }

  std::string string(const std::string& key, std::optional<std::string> fallback = {}) const {
    const json* v = lookup(key);
    if (!v) return require(fallback, key);
    if (!v->is_string()) throw ConfigError(key + " must be a string");
    return v->get<std::string>();
  }

  std::string path(const std::string& key, std::optional<std::string> fallback = {}) const {
    bool from_config = false;
    const json* v = lookup(key, &from_config);
    if (!v) return require(fallback, key);
    if (!v->is_string()) throw ConfigError(key + " must be a path string");
    return resolve(v->get<std::string>(), from_config);
  }

  std::vector<std::string> paths(const std::string& key) const {
    bool from_config = false;
    const json* v = lookup(key, &from_config);
    if (!v) return {};
    std::vector<std::string> out;
    if (v->is_string()) {
      out.push_back(resolve(v->get<std::string>(), from_config));
    } else if (v->is_array()) {
      for (const auto& p : *v) {
        if (!p.is_string()) throw ConfigError(key + " must list path strings");
        out.push_back(resolve(p.get<std::string>(), from_config));
      }
    } else {
      throw ConfigError(key + " must be a path or a list of paths");
    }
    return out;
  }

 private:
  template <typename T>
  static T require(const std::optional<T>& fallback, const std::string& key) {
    if (!fallback) throw ConfigError("missing required setting --" + key);
    return *fallback;
  }

  std::string resolve(const std::string& p, bool from_config) const {
    if (!from_config || fs::path(p).is_absolute()) return p;
    return (config_dir_ / p).lexically_normal().string();
  }

  static json convert(const OptionSpec& spec, const std::vector<std::string>& raw) {
    const std::string& s = raw.back();
    switch (spec.kind) {
      case Kind::paths:
        return raw;
      case Kind::path:
      case Kind::string:
        return s;
      case Kind::boolean:
        if (s == "true" || s == "1" || s == "on") return true;
        if (s == "false" || s == "0" || s == "off") return false;
        throw ConfigError(std::string("--") + spec.key + " expects true or false");
      case Kind::real: {
        double v = 0.0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size())
          throw ConfigError(std::string("--") + spec.key + " expects a number");
        return v;
      }
      case Kind::count: {
        std::uint64_t v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size())
          throw ConfigError(std::string("--") + spec.key + " expects a non-negative integer");
        return v;
      }
    }
    return s;
  }

  json config_ = json::object();
  fs::path config_dir_;
  std::map<std::string, json> flags_;
};

const std::vector<OptionSpec> kCommon = {
    {"threads", Kind::count, "worker threads, 0 = all cores"},
    {"out", Kind::path, "output directory"},
};

const std::vector<OptionSpec> kSynth = {
    {"seed", Kind::count, "PRNG seed"},
    {"dim", Kind::count, "embedding dimension (required)"},
    {"classes", Kind::count, "number of ID classes"},
    {"samples-per-class", Kind::count, "ID test images per class"},
    {"ood", Kind::count, "OOD test images"},
    {"pool-size", Kind::count, "unlabeled pool size m"},
    {"sets", Kind::count, "descriptor sets per class n"},
    {"hallucination-rate", Kind::real, "fraction of hallucinated sets per class"},
    {"noise", Kind::real, "image noise norm"},
    {"ood-clusters", Kind::count, "number of OOD centers"},
    {"ood-overlap", Kind::real, "cosine between an OOD center and its nearest ID center"},
    {"descriptor-noise", Kind::real, "descriptor embedding noise norm"},
    {"name-noise", Kind::real, "class-name embedding noise norm"},
    {"object-noise", Kind::real, "object-name embedding noise norm"},
};

const std::vector<OptionSpec> kInputs = {
    {"images", Kind::path, "image embedding table"},
    {"texts", Kind::path, "text embedding table"},
    {"bank", Kind::path, "descriptor bank JSON"},
};

const std::vector<OptionSpec> kCalibrate = {
    {"pool", Kind::path, "pool manifest JSON"},
    {"k", Kind::count, "retrieval depth"},
    {"eta", Kind::real, "retrieval-overlap threshold"},
    {"eta-text", Kind::real, "text-similarity threshold"},
    {"text-constraint", Kind::boolean, "apply the text-similarity constraint"},
    {"text-form", Kind::string, "rendered|raw descriptor text for retrieval"},
    {"gamma", Kind::real, "confidence threshold for augmentation"},
};

const std::vector<OptionSpec> kDetect = {
    {"detections", Kind::path, "detections JSONL"},
    {"labels", Kind::path, "labels JSON listing the samples to score"},
    {"calibration", Kind::path, "calibration JSON (default <out>/calibration.json)"},
    {"gamma", Kind::real, "confidence threshold for augmentation"},
    {"lambda", Kind::real, "decision threshold on s_max (required)"},
    {"temperature", Kind::real, "softmax temperature"},
    {"variant", Kind::string, "no_objects,no_calibration,no_knowledge,class_sim"},
    {"w-img", Kind::real, "weight of the image term"},
    {"w-obj", Kind::real, "weight of the object term"},
};

const std::vector<OptionSpec> kEvaluate = {
    {"scores", Kind::paths, "score report CSVs (default <out>/scores.csv)"},
    {"histogram", Kind::boolean, "also write histogram.csv"},
    {"bins", Kind::count, "histogram bins"},
};

const std::vector<OptionSpec> kValidate = {
    {"pool", Kind::path, "pool manifest JSON"},
    {"detections", Kind::path, "detections JSONL"},
    {"labels", Kind::path, "labels JSON"},
    {"text-form", Kind::string, "rendered|raw descriptor text for retrieval"},
};

// Registers every spec on `cmd`; values land in `raw` keyed by spec key.
void add_options(CLI::App* cmd, const std::vector<OptionSpec>& specs,
                 std::map<std::string, std::vector<std::string>>& raw,
                 std::vector<OptionSpec>& registered) {
  for (const auto& spec : specs) {
    auto& slot = raw[spec.key];
    auto* opt = cmd->add_option(std::string("--") + spec.key, slot, spec.help);
    if (spec.kind == Kind::paths) {
      opt->expected(1, CLI::detail::expected_max_vector_size);
    } else if (spec.kind == Kind::boolean) {
      // A bare switch means true.
      opt->expected(0, 1)->default_str("true");
      opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    } else {
      opt->expected(1);
      opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
    registered.push_back(spec);
  }
}

unsigned threads_of(const Settings& s) { return static_cast<unsigned>(s.count("threads", 1)); }

std::string out_dir(const Settings& s) {
  const auto dir = s.path("out", std::string("."));
  fs::create_directories(dir);
  return dir;
}

std::string in_dir(const Settings& s, const char* name) {
  return (fs::path(s.path("out", std::string("."))) / name).string();
}

ConsistencyConfig consistency_config(const Settings& s) {
  ConsistencyConfig cfg;
  cfg.k = s.count("k", cfg.k);
  cfg.eta = s.real("eta", cfg.eta);
  cfg.eta_text = s.real("eta-text", cfg.eta_text);
  cfg.use_text_constraint = s.boolean("text-constraint", cfg.use_text_constraint);
  cfg.gamma = s.real("gamma", cfg.gamma);
  cfg.text_form = text_form_from_string(s.string("text-form", std::string("rendered")));
  cfg.threads = threads_of(s);
  cfg.validate();
  return cfg;
}

int cmd_synth(const Settings& s, std::ostream& out) {
  WorldSpec spec;
  spec.seed = s.count("seed", spec.seed);
  spec.dim = s.count("dim");
  spec.n_classes = s.count("classes", spec.n_classes);
  spec.samples_per_class = s.count("samples-per-class", spec.samples_per_class);
  spec.n_ood = s.count("ood", spec.n_ood);
  spec.pool_size = s.count("pool-size", spec.pool_size);
  spec.n_sets = s.count("sets", spec.n_sets);
  spec.hallucination_rate = s.real("hallucination-rate", spec.hallucination_rate);
  spec.noise_sigma = s.real("noise", spec.noise_sigma);
  spec.ood_clusters = s.count("ood-clusters", spec.ood_clusters);
  spec.ood_overlap = s.real("ood-overlap", spec.ood_overlap);
  spec.descriptor_noise = s.real("descriptor-noise", spec.descriptor_noise);
  spec.name_noise = s.real("name-noise", spec.name_noise);
  spec.object_noise = s.real("object-noise", spec.object_noise);
  try {
    spec.validate();
  } catch (const GenerationError& e) {
    throw ConfigError(e.what());
  }

  const auto dir = out_dir(s);
  const WorldBundle bundle = generate(spec);
  write_bundle(bundle, dir);

  const json config = {{"images", bundle_files::images},
                       {"texts", bundle_files::texts},
                       {"bank", bundle_files::bank},
                       {"pool", bundle_files::pool},
                       {"detections", bundle_files::detections},
                       {"labels", bundle_files::labels},
                       {"calibration", "calibration.json"},
                       {"out", "."}};
  io::write_file_atomic((fs::path(dir) / "config.json").string(), config.dump(2) + "\n");
  out << "wrote bundle to " << dir << ": " << bundle.images.size() << " images, "
      << bundle.texts.size() << " texts, " << bundle.bank.classes().size() << " classes\n";
  return ok;
}

int cmd_calibrate(const Settings& s, std::ostream& out) {
  const ConsistencyConfig cfg = consistency_config(s);
  const auto images = load_table_file(s.path("images"));
  const auto texts = load_table_file(s.path("texts"));
  const auto bank = load_bank_file(s.path("bank"));
  const UnlabeledPool pool(load_pool_manifest(s.path("pool")), images);
  if (cfg.k > pool.size())
    throw ConfigError("k=" + std::to_string(cfg.k) + " exceeds pool size " +
                      std::to_string(pool.size()));

  const auto classes = calibrate_all(bank, pool, texts, cfg);
  const auto dir = out_dir(s);
  const auto j = calibration_to_json(classes, cfg, bank.n(), pool.size());
  io::write_file_atomic((fs::path(dir) / "calibration.json").string(), j.dump(2) + "\n");

  std::size_t width = 5;
  for (const auto& c : classes) width = std::max(width, c.class_name.size());
  out << std::left << std::setw(static_cast<int>(width)) << "class"
      << "  p(c)    groups  augmented\n";
  std::size_t augmented = 0;
  for (const auto& c : classes) {
    out << std::left << std::setw(static_cast<int>(width)) << c.class_name << "  " << std::fixed
        << std::setprecision(4) << c.confidence << "  " << std::setw(6) << c.groups.size()
        << "  " << (c.augmented ? "yes" : "no") << "\n";
    augmented += c.augmented;
  }
  out << augmented << "/" << classes.size() << " classes augmented\n";
  return ok;
}

int cmd_detect(const Settings& s, std::ostream& out) {
  PipelineConfig cfg;
  cfg.gamma = s.real("gamma", cfg.gamma);
  cfg.lambda = s.real("lambda");
  cfg.temperature = s.real("temperature", cfg.temperature);
  cfg.weights.w_img = s.real("w-img", cfg.weights.w_img);
  cfg.weights.w_obj = s.real("w-obj", cfg.weights.w_obj);
  cfg.variant = Variant::parse(s.string("variant", std::string("full")));
  cfg.threads = threads_of(s);
  if (!(cfg.temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(cfg.gamma >= 0.0 && cfg.gamma <= 1.0)) throw ConfigError("gamma must lie in [0, 1]");

  const auto images = load_table_file(s.path("images"));
  const auto texts = load_table_file(s.path("texts"));
  const auto bank = load_bank_file(s.path("bank"));
  const auto labels = load_labels_file(s.path("labels"));
  std::map<std::string, SampleConcepts> detections;
  if (s.has("detections")) {
    for (auto& d : load_detections_file(s.path("detections"))) {
      if (!images.contains(d.image_id))
        throw MissingEmbeddingError(d.image_id);
      detections.emplace(d.image_id, std::move(d));
    }
  }

  std::map<std::string, CalibratedClass> calibration;
  if (!cfg.variant.no_knowledge && !cfg.variant.no_calibration)
    calibration = load_calibration_file(s.path("calibration", in_dir(s, "calibration.json")));

  const auto features = resolve_features(bank, calibration, cfg);
  std::vector<ScoringSample> samples;
  std::vector<SampleLabel> sample_labels;
  samples.reserve(labels.size());
  for (const auto& l : labels) {
    auto it = detections.find(l.image_id);
    SampleConcepts concepts = it != detections.end() ? it->second : SampleConcepts{l.image_id, {}};
    samples.push_back({images.at(l.image_id), std::move(concepts)});
    sample_labels.push_back(l.label);
  }

  const auto results = run_pipeline(samples, features, texts, cfg);
  const auto dir = out_dir(s);
  io::write_file_atomic((fs::path(dir) / "scores.csv").string(),
                        score_report_csv(results, sample_labels));
  std::size_t flagged_id = 0;
  for (const auto& r : results) flagged_id += r.decision;
  out << "scored " << results.size() << " samples (variant " << cfg.variant.to_string() << "): "
      << flagged_id << " ID, " << results.size() - flagged_id << " OOD at lambda "
      << io::format_double(*cfg.lambda) << "\n";
  return ok;
}

int cmd_evaluate(const Settings& s, std::ostream& out) {
  auto files = s.paths("scores");
  if (files.empty()) files.push_back(in_dir(s, "scores.csv"));
  LabeledScores scores;
  for (const auto& f : files) append_score_report(io::read_file(f), scores);
  const auto report = evaluate(scores);
  const auto dir = out_dir(s);
  const auto j = metrics_to_json(report);
  io::write_file_atomic((fs::path(dir) / "metrics.json").string(), j.dump(2) + "\n");
  if (s.boolean("histogram", false)) {
    const auto bins = score_histogram(scores, s.count("bins", 20));
    io::write_file_atomic((fs::path(dir) / "histogram.csv").string(), histogram_csv(bins));
  }
  out << j.dump() << "\n";
  return ok;
}

int cmd_validate(const Settings& s, std::ostream& out) {
  std::vector<std::string> problems;
  auto check = [&](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      problems.emplace_back(e.what());
    }
  };

  std::optional<EmbeddingTable> images, texts;
  std::optional<DescriptorBank> bank;
  check([&] { images = load_table_file(s.path("images")); });
  check([&] { texts = load_table_file(s.path("texts")); });
  check([&] { bank = load_bank_file(s.path("bank")); });
  const TextForm form = text_form_from_string(s.string("text-form", std::string("rendered")));

  if (images && texts && images->dim() != texts->dim())
    problems.push_back("dimension mismatch: images have dim " + std::to_string(images->dim()) +
                       ", texts have dim " + std::to_string(texts->dim()));
  if (images)
    for (const auto& e : images->entries())
      if (e.kind != EmbeddingKind::image)
        problems.push_back("image table entry \"" + e.id + "\" has kind text");
  if (texts)
    for (const auto& e : texts->entries())
      if (e.kind != EmbeddingKind::text)
        problems.push_back("text table entry \"" + e.id + "\" has kind image");

  std::vector<std::string> objects;
  if (s.has("detections")) {
    check([&] {
      for (const auto& d : load_detections_file(s.path("detections"))) {
        if (images && !images->contains(d.image_id))
          problems.push_back("detections reference unknown image \"" + d.image_id + "\"");
        objects.insert(objects.end(), d.objects.begin(), d.objects.end());
      }
    });
  }
  if (s.has("pool") && images) {
    check([&] { UnlabeledPool(load_pool_manifest(s.path("pool")), *images); });
  }
  if (s.has("labels") && images) {
    check([&] {
      for (const auto& l : load_labels_file(s.path("labels")))
        if (!images->contains(l.image_id))
          problems.push_back("labels reference unknown image \"" + l.image_id + "\"");
    });
  }
  if (bank && texts) {
    for (const auto& t : required_texts(*bank, bank->class_names(), objects, form))
      if (!texts->contains(t)) problems.push_back("missing text embedding \"" + t + "\"");
  }

  for (const auto& p : problems) out << "error: " << p << "\n";
  if (problems.empty()) {
    out << "ok\n";
    return ok;
  }
  out << problems.size() << " problem(s)\n";
  return invalid;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Selective-generation OOD detection over precomputed embeddings", "oodcal"};
  app.require_subcommand(1);
  std::string config_path;

  struct Command {
    CLI::App* app;
    std::map<std::string, std::vector<std::string>> raw;
    std::vector<OptionSpec> specs;
    int (*fn)(const Settings&, std::ostream&);
  };
  std::map<std::string, Command> commands;
  auto make = [&](const char* name, const char* help,
                  std::initializer_list<const std::vector<OptionSpec>*> groups,
                  int (*fn)(const Settings&, std::ostream&)) {
    Command& c = commands[name];
    c.app = app.add_subcommand(name, help);
    c.fn = fn;
    c.app->add_option("--config", config_path, "JSON config file (fallback: $OODCAL_CONFIG)");
    add_options(c.app, kCommon, c.raw, c.specs);
    for (const auto* g : groups) add_options(c.app, *g, c.raw, c.specs);
  };
  make("synth", "generate a synthetic world bundle", {&kSynth}, cmd_synth);
  make("calibrate", "compute per-class descriptor confidence", {&kInputs, &kCalibrate},
       cmd_calibrate);
  make("detect", "score samples and write a score report", {&kInputs, &kDetect}, cmd_detect);
  make("evaluate", "compute FPR95 and AUROC from score reports", {&kEvaluate}, cmd_evaluate);
  make("validate", "check cross-file referential integrity", {&kInputs, &kValidate},
       cmd_validate);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return ok;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return ok;
    }
    err << "oodcal: " << e.what() << "\n";
    return usage;
  }

  for (auto& [name, cmd] : commands) {
    if (!cmd.app->parsed()) continue;
    try {
      Settings settings;
      if (config_path.empty())
        if (const char* env = std::getenv(kConfigEnv)) config_path = env;
      if (!config_path.empty()) settings.load_config(config_path);
      for (const auto& spec : cmd.specs) {
        const auto& values = cmd.raw[spec.key];
        if (!values.empty()) settings.set_flag(spec, values);
      }
      return cmd.fn(settings, out);
    } catch (const ConfigError& e) {
      err << "oodcal " << name << ": " << e.what() << "\n";
      return usage;
    } catch (const ParameterError& e) {
      err << "oodcal " << name << ": " << e.what() << "\n";
      return usage;
    } catch (const MissingEmbeddingError& e) {
      err << "oodcal " << name << ": missing embedding: " << e.key() << "\n";
      return data;
    } catch (const Error& e) {
      err << "oodcal " << name << ": " << e.what() << "\n";
      return data;
    } catch (const fs::filesystem_error& e) {
      err << "oodcal " << name << ": " << e.what() << "\n";
      return data;
    }
  }
  return usage;
}

}  // namespace oodcal::cli
