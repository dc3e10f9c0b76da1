#include "oodcal/synthworld.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "oodcal/errors.hpp"
#include "oodcal/io_util.hpp"
#include "oodcal/retrieval.hpp"

namespace oodcal {

std::uint64_t SplitMix64::next() {
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double SplitMix64::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

std::uint64_t SplitMix64::below(std::uint64_t n) {
  if (n == 0) throw GenerationError("below(0): empty range");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = next();
  } while (x >= limit);
  return x % n;
}

double SplitMix64::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

void WorldSpec::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw GenerationError(std::string(name) + " must be at least 1");
  };
  positive(dim, "dim");
  positive(n_classes, "n_classes");
  positive(samples_per_class, "samples_per_class");
  positive(n_ood, "n_ood");
  positive(pool_size, "pool_size");
  positive(n_sets, "n_sets");
  positive(ood_clusters, "ood_clusters");
  positive(descriptors_per_set, "descriptors_per_set");
  positive(object_vocab, "object_vocab");
  if (descriptor_vocab < descriptors_per_set)
    throw GenerationError("descriptor_vocab must be at least descriptors_per_set");
  if (!(hallucination_rate >= 0.0 && hallucination_rate <= 1.0))
    throw GenerationError("hallucination_rate must lie in [0, 1]");
  if (!(ood_overlap >= 0.0 && ood_overlap < 1.0))
    throw GenerationError("ood_overlap must lie in [0, 1)");
  for (double s : {noise_sigma, descriptor_noise, name_noise, object_noise})
    if (!(s >= 0.0) || !std::isfinite(s)) throw GenerationError("noise levels must be finite and >= 0");
  if (n_classes + ood_clusters > dim)
    throw GenerationError("cannot place " + std::to_string(n_classes + ood_clusters) +
                          " orthonormal centers in " + std::to_string(dim) + " dimensions");
  if (pool_size > UINT32_MAX || n_ood > UINT32_MAX) throw GenerationError("world too large");
}

nlohmann::json WorldSpec::to_json() const {
  return {{"seed", seed},
          {"dim", dim},
          {"n_classes", n_classes},
          {"samples_per_class", samples_per_class},
          {"n_ood", n_ood},
          {"pool_size", pool_size},
          {"n_sets", n_sets},
          {"hallucination_rate", hallucination_rate},
          {"noise_sigma", noise_sigma},
          {"ood_clusters", ood_clusters},
          {"ood_overlap", ood_overlap},
          {"descriptors_per_set", descriptors_per_set},
          {"descriptor_vocab", descriptor_vocab},
          {"descriptor_noise", descriptor_noise},
          {"name_noise", name_noise},
          {"object_vocab", object_vocab},
          {"objects_per_sample", objects_per_sample},
          {"object_noise", object_noise}};
}

namespace {

using Vec = std::vector<double>;

std::string padded(const char* prefix, std::size_t i, int width) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

int digits(std::size_t n) {
  int d = 1;
  while (n >= 10) {
    n /= 10;
    ++d;
  }
  return d;
}

class Builder {
 public:
  explicit Builder(const WorldSpec& spec) : spec_(spec), rng_(spec.seed) {}

  WorldBundle build();

 private:
  // Orthonormal directions by Gram-Schmidt over Gaussian draws.
  std::vector<Vec> orthonormal(std::size_t count);
  // center + noise with per-component sd `sigma / sqrt(dim)`.
  std::vector<float> perturb(const Vec& center, double sigma);
  // `count` distinct values from [0, n), by partial Fisher-Yates.
  std::vector<std::size_t> choose(std::size_t n, std::size_t count);

  const WorldSpec& spec_;
  SplitMix64 rng_;
};

std::vector<Vec> Builder::orthonormal(std::size_t count) {
  std::vector<Vec> out;
  for (std::size_t i = 0; i < count; ++i) {
    Vec v(spec_.dim);
    for (auto& x : v) x = rng_.gaussian();
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& u : out) {
        double dot = 0.0;
        for (std::size_t d = 0; d < spec_.dim; ++d) dot += v[d] * u[d];
        for (std::size_t d = 0; d < spec_.dim; ++d) v[d] -= dot * u[d];
      }
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-9) throw GenerationError("degenerate draw while building orthonormal centers");
    for (auto& x : v) x /= norm;
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<float> Builder::perturb(const Vec& center, double sigma) {
  const double sd = sigma / std::sqrt(static_cast<double>(spec_.dim));
  std::vector<float> out(spec_.dim);
  for (std::size_t d = 0; d < spec_.dim; ++d)
    out[d] = static_cast<float>(center[d] + sd * rng_.gaussian());
  return out;
}

std::vector<std::size_t> Builder::choose(std::size_t n, std::size_t count) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng_.below(n - i)]);
  idx.resize(count);
  return idx;
}

WorldBundle Builder::build() {
  const WorldSpec& s = spec_;
  WorldBundle b;
  b.spec = s;
  b.images = EmbeddingTable(s.dim);
  b.texts = EmbeddingTable(s.dim);
  b.bank = DescriptorBank(static_cast<int>(s.n_sets));
  b.images.meta()["encoder"] = "synthworld";
  b.texts.meta()["encoder"] = "synthworld";
  b.images.meta()["seed"] = std::to_string(s.seed);
  b.texts.meta()["seed"] = std::to_string(s.seed);

  const auto axes = orthonormal(s.n_classes + s.ood_clusters);
  std::vector<Vec> id_centers(axes.begin(), axes.begin() + static_cast<std::ptrdiff_t>(s.n_classes));
  std::vector<Vec> ood_centers;
  const double lean = s.ood_overlap;
  const double own = std::sqrt(1.0 - lean * lean);
  for (std::size_t j = 0; j < s.ood_clusters; ++j) {
    const Vec& near = id_centers[j % s.n_classes];
    const Vec& axis = axes[s.n_classes + j];
    Vec c(s.dim);
    for (std::size_t d = 0; d < s.dim; ++d) c[d] = lean * near[d] + own * axis[d];
    ood_centers.push_back(std::move(c));
  }

  const int cw = digits(s.n_classes - 1);
  std::vector<std::string> class_names;
  for (std::size_t c = 0; c < s.n_classes; ++c) class_names.push_back(padded("class_", c, cw));

  auto add_text = [&](const std::string& text, std::vector<float> vec) {
    b.texts.add({text, EmbeddingKind::text, std::move(vec)});
  };

  std::vector<std::vector<std::string>> class_objects(s.n_classes);
  const auto n_halluc = static_cast<std::size_t>(
      std::llround(s.hallucination_rate * static_cast<double>(s.n_sets)));
  const std::size_t wrong_targets = (s.n_classes - 1) + s.ood_clusters;

  for (std::size_t c = 0; c < s.n_classes; ++c) {
    const std::string& name = class_names[c];
    const Vec& center = id_centers[c];
    add_text(name, perturb(center, s.name_noise));

    std::vector<std::string> vocab;
    for (std::size_t v = 0; v < s.descriptor_vocab; ++v) {
      vocab.push_back("trait " + std::to_string(v) + " of " + name);
      auto vec = perturb(center, s.descriptor_noise);
      add_text(render_descriptor_text(name, vocab.back()), vec);
      add_text(vocab.back(), std::move(vec));
    }

    auto halluc = choose(s.n_sets, n_halluc);
    std::sort(halluc.begin(), halluc.end());
    std::vector<std::vector<std::string>> sets(s.n_sets);
    std::size_t h = 0;
    for (std::size_t i = 0; i < s.n_sets; ++i) {
      if (h < halluc.size() && halluc[h] == i) {
        ++h;
        b.hallucinated[name].push_back(static_cast<int>(i));
        // Another class's center or an OOD center.
        std::size_t t = rng_.below(wrong_targets);
        const Vec* target = nullptr;
        if (t < s.n_classes - 1) {
          target = &id_centers[t < c ? t : t + 1];
        } else {
          target = &ood_centers[t - (s.n_classes - 1)];
        }
        for (std::size_t d = 0; d < s.descriptors_per_set; ++d) {
          std::string text = "phantom " + std::to_string(d) + " in sample " + std::to_string(i) +
                             " of " + name;
          auto vec = perturb(*target, s.descriptor_noise);
          add_text(render_descriptor_text(name, text), vec);
          add_text(text, std::move(vec));
          sets[i].push_back(std::move(text));
        }
      } else {
        for (std::size_t v : choose(s.descriptor_vocab, s.descriptors_per_set))
          sets[i].push_back(vocab[v]);
      }
    }
    b.bank.add_class(name, sets);

    for (std::size_t o = 0; o < s.object_vocab; ++o) {
      class_objects[c].push_back("object " + std::to_string(o) + " of " + name);
      add_text(class_objects[c].back(), perturb(center, s.object_noise));
    }
  }

  std::vector<std::vector<std::string>> ood_objects(s.ood_clusters);
  const int ow = digits(s.ood_clusters - 1);
  for (std::size_t j = 0; j < s.ood_clusters; ++j) {
    const std::string tag = padded("ood_", j, ow);
    for (std::size_t o = 0; o < s.object_vocab; ++o) {
      ood_objects[j].push_back("object " + std::to_string(o) + " of " + tag);
      add_text(ood_objects[j].back(), perturb(ood_centers[j], s.object_noise));
    }
  }

  auto draw_objects = [&](const std::vector<std::string>& vocab) {
    std::vector<std::string> picked;
    for (std::size_t o = 0; o < s.objects_per_sample; ++o)
      picked.push_back(vocab[rng_.below(vocab.size())]);
    return picked;
  };

  const int sw = digits(s.samples_per_class - 1);
  for (std::size_t c = 0; c < s.n_classes; ++c) {
    for (std::size_t i = 0; i < s.samples_per_class; ++i) {
      std::string id = "id_" + class_names[c] + padded("_", i, sw);
      b.images.add({id, EmbeddingKind::image, perturb(id_centers[c], s.noise_sigma)});
      b.detections.push_back(make_sample_concepts(id, draw_objects(class_objects[c])));
      b.labels.push_back({id, SampleLabel::id, class_names[c]});
    }
  }

  const int nw = digits(s.n_ood - 1);
  for (std::size_t i = 0; i < s.n_ood; ++i) {
    const std::size_t j = i % s.ood_clusters;
    std::string id = padded("ood_", i, nw);
    b.images.add({id, EmbeddingKind::image, perturb(ood_centers[j], s.noise_sigma)});
    b.detections.push_back(make_sample_concepts(id, draw_objects(ood_objects[j])));
    b.labels.push_back({id, SampleLabel::ood, std::nullopt});
  }

  const int pw = digits(s.pool_size - 1);
  for (std::size_t i = 0; i < s.pool_size; ++i) {
    std::string id = padded("pool_", i, pw);
    const std::size_t c = rng_.below(s.n_classes);
    b.images.add({id, EmbeddingKind::image, perturb(id_centers[c], s.noise_sigma)});
    b.pool_ids.push_back(std::move(id));
  }
  return b;
}

}  // namespace

WorldBundle generate(const WorldSpec& spec) {
  spec.validate();
  return Builder(spec).build();
}

void write_bundle(const WorldBundle& bundle, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto path = [&](const char* name) { return (fs::path(dir) / name).string(); };

  save_table_file(bundle.images, path(bundle_files::images));
  save_table_file(bundle.texts, path(bundle_files::texts));
  save_bank_file(bundle.bank, path(bundle_files::bank));
  save_pool_manifest(bundle.pool_ids, path(bundle_files::pool));
  io::write_file_atomic(path(bundle_files::detections), detections_to_jsonl(bundle.detections));
  io::write_file_atomic(path(bundle_files::labels), labels_to_json(bundle.labels));

  nlohmann::json world = {{"version", 1}, {"spec", bundle.spec.to_json()},
                          {"hallucinated_sets", bundle.hallucinated}};
  io::write_file_atomic(path(bundle_files::world), world.dump(2) + "\n");
}

}  // namespace oodcal
