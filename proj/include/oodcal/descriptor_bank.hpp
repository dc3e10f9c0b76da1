#pragma once

// Per-class sampled descriptor sets and the "{c} which has {d}" text form
// that turns a descriptor into something the text encoder can embed.

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace oodcal {

// Whether descriptor text is embedded in its rendered form or as the raw
// descriptor string. Used by retrieval and the consistency check.
enum class TextForm { rendered, raw };

std::string_view to_string(TextForm form);
TextForm text_form_from_string(std::string_view s);

// Strips surrounding whitespace and a leading "- " bullet.
std::string clean_descriptor(std::string_view s);

class DescriptorSet {
 public:
  // Cleans every descriptor and drops later duplicates. Throws EmptyInputError
  // if a descriptor is empty after cleaning or the list is empty.
  DescriptorSet(std::string class_name, int sample_index, std::vector<std::string> descriptors);

  const std::string& class_name() const noexcept { return class_name_; }
  int sample_index() const noexcept { return sample_index_; }
  const std::vector<std::string>& descriptors() const noexcept { return descriptors_; }

  // Texts to look up in the text table, one per descriptor, in descriptor order.
  std::vector<std::string> texts(TextForm form) const;

 private:
  std::string class_name_;
  int sample_index_;
  std::vector<std::string> descriptors_;
};

class DescriptorBank {
 public:
  explicit DescriptorBank(int n);

  int n() const noexcept { return n_; }

  // `sets` must hold exactly n entries; sample indices are assigned 0..n-1.
  void add_class(const std::string& class_name, const std::vector<std::vector<std::string>>& sets);

  bool contains(std::string_view class_name) const;
  // Throws ParameterError for unknown classes.
  const std::vector<DescriptorSet>& sets(std::string_view class_name) const;
  std::vector<std::string> class_names() const;

  const std::map<std::string, std::vector<DescriptorSet>, std::less<>>& classes() const noexcept {
    return classes_;
  }

 private:
  int n_;
  std::map<std::string, std::vector<DescriptorSet>, std::less<>> classes_;
};

// "<c> which has <d>". Throws EmptyInputError on an empty argument.
std::string render_descriptor_text(std::string_view class_name, std::string_view descriptor);

// Sorted, deduplicated list of every string the text encoder must embed:
// class names, rendered descriptors of every sample set, object names. With
// TextForm::raw the raw descriptor strings are included as well.
std::vector<std::string> required_texts(const DescriptorBank& bank,
                                        const std::vector<std::string>& class_names,
                                        const std::vector<std::string>& detected_objects,
                                        TextForm form = TextForm::rendered);

// Splits an LLM completion (which follows a trailing "-" in the prompt) into
// descriptors. Throws EmptyGenerationError when nothing survives.
std::vector<std::string> parse_llm_output(std::string_view raw);

// {"version":1,"n":<int>,"classes":{"<c>":[["<d1>",...], ...]}}
DescriptorBank bank_from_json(const nlohmann::json& j);
nlohmann::json bank_to_json(const DescriptorBank& bank);
DescriptorBank load_bank_file(const std::string& path);
void save_bank_file(const DescriptorBank& bank, const std::string& path);

}  // namespace oodcal
