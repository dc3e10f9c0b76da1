#include "oodcal/descriptor_bank.hpp"

#include <algorithm>
#include <set>

#include "oodcal/errors.hpp"
#include "oodcal/io_util.hpp"

namespace oodcal {
namespace {

constexpr std::string_view kWhitespace = " \t\r\n\v\f";

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(kWhitespace);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(kWhitespace);
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string_view to_string(TextForm form) { return form == TextForm::raw ? "raw" : "rendered"; }

TextForm text_form_from_string(std::string_view s) {
  if (s == "rendered") return TextForm::rendered;
  if (s == "raw") return TextForm::raw;
  throw ParameterError("text form must be rendered or raw, got \"" + std::string(s) + "\"");
}

std::string clean_descriptor(std::string_view s) {
  s = trim(s);
  // A bare "-" is an empty bullet.
  if (s == "-" || s.substr(0, 2) == "- ") s = trim(s.substr(1));
  return std::string(s);
}

DescriptorSet::DescriptorSet(std::string class_name, int sample_index,
                             std::vector<std::string> descriptors)
    : class_name_(std::move(class_name)), sample_index_(sample_index) {
  if (class_name_.empty()) throw EmptyInputError("descriptor set with an empty class name");
  std::set<std::string, std::less<>> seen;
  for (const auto& d : descriptors) {
    std::string cleaned = clean_descriptor(d);
    if (cleaned.empty())
      throw EmptyInputError("empty descriptor in set " + std::to_string(sample_index_) +
                            " of class \"" + class_name_ + "\"");
    if (seen.insert(cleaned).second) descriptors_.push_back(std::move(cleaned));
  }
  if (descriptors_.empty())
    throw EmptyInputError("set " + std::to_string(sample_index_) + " of class \"" + class_name_ +
                          "\" has no descriptors");
}

std::vector<std::string> DescriptorSet::texts(TextForm form) const {
  if (form == TextForm::raw) return descriptors_;
  std::vector<std::string> out;
  out.reserve(descriptors_.size());
  for (const auto& d : descriptors_) out.push_back(render_descriptor_text(class_name_, d));
  return out;
}

DescriptorBank::DescriptorBank(int n) : n_(n) {
  if (n < 1) throw ParameterError("descriptor sets per class must be at least 1");
}

void DescriptorBank::add_class(const std::string& class_name,
                               const std::vector<std::vector<std::string>>& sets) {
  if (class_name.empty()) throw EmptyInputError("empty class name");
  if (classes_.count(class_name)) throw DuplicateIdError("duplicate class \"" + class_name + "\"");
  if (static_cast<int>(sets.size()) != n_)
    throw ParameterError("class \"" + class_name + "\" has " + std::to_string(sets.size()) +
                         " descriptor sets, expected " + std::to_string(n_));
  std::vector<DescriptorSet> built;
  built.reserve(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i)
    built.emplace_back(class_name, static_cast<int>(i), sets[i]);
  classes_.emplace(class_name, std::move(built));
}

bool DescriptorBank::contains(std::string_view class_name) const {
  return classes_.find(class_name) != classes_.end();
}

const std::vector<DescriptorSet>& DescriptorBank::sets(std::string_view class_name) const {
  auto it = classes_.find(class_name);
  if (it == classes_.end())
    throw ParameterError("class \"" + std::string(class_name) + "\" not in descriptor bank");
  return it->second;
}

std::vector<std::string> DescriptorBank::class_names() const {
  std::vector<std::string> out;
  out.reserve(classes_.size());
  for (const auto& [name, _] : classes_) out.push_back(name);
  return out;
}

std::string render_descriptor_text(std::string_view class_name, std::string_view descriptor) {
  if (class_name.empty() || descriptor.empty())
    throw EmptyInputError("render_descriptor_text needs a class name and a descriptor");
  std::string out;
  out.reserve(class_name.size() + descriptor.size() + 11);
  out.append(class_name).append(" which has ").append(descriptor);
  return out;
}

std::vector<std::string> required_texts(const DescriptorBank& bank,
                                        const std::vector<std::string>& class_names,
                                        const std::vector<std::string>& detected_objects,
                                        TextForm form) {
  std::set<std::string> out(class_names.begin(), class_names.end());
  out.insert(detected_objects.begin(), detected_objects.end());
  for (const auto& [name, sets] : bank.classes()) {
    out.insert(name);
    for (const auto& set : sets) {
      for (auto& t : set.texts(TextForm::rendered)) out.insert(std::move(t));
      if (form == TextForm::raw)
        for (const auto& d : set.descriptors()) out.insert(d);
    }
  }
  return {out.begin(), out.end()};
}

std::vector<std::string> parse_llm_output(std::string_view raw) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= raw.size()) {
    auto end = raw.find('\n', start);
    if (end == std::string_view::npos) end = raw.size();
    std::string_view line = trim(raw.substr(start, end - start));
    while (!line.empty() && (line.front() == '-' || line.front() == '*'))
      line = trim(line.substr(1));
    if (!line.empty()) out.emplace_back(line);
    start = end + 1;
  }
  if (out.empty()) throw EmptyGenerationError("LLM completion contains no descriptors");
  return out;
}

DescriptorBank bank_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("version", 0) != 1)
    throw ParseError("descriptor bank must be an object with version 1", 0);
  if (!j.contains("n") || !j["n"].is_number_integer())
    throw ParseError("descriptor bank needs integer n", 0);
  if (!j.contains("classes") || !j["classes"].is_object())
    throw ParseError("descriptor bank needs a classes object", 0);
  DescriptorBank bank(j["n"].get<int>());
  for (const auto& [name, sets] : j["classes"].items()) {
    if (!sets.is_array()) throw ParseError("class \"" + name + "\" must map to an array of sets", 0);
    std::vector<std::vector<std::string>> parsed;
    for (const auto& s : sets) {
      if (!s.is_array()) throw ParseError("class \"" + name + "\" has a non-array set", 0);
      std::vector<std::string> ds;
      for (const auto& d : s) {
        if (!d.is_string()) throw ParseError("class \"" + name + "\" has a non-string descriptor", 0);
        ds.push_back(d.get<std::string>());
      }
      parsed.push_back(std::move(ds));
    }
    try {
      bank.add_class(name, parsed);
    } catch (const ParameterError& e) {
      throw ParseError(e.what(), 0);
    }
  }
  return bank;
}

nlohmann::json bank_to_json(const DescriptorBank& bank) {
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& [name, sets] : bank.classes()) {
    auto& arr = classes[name] = nlohmann::json::array();
    for (const auto& s : sets) arr.push_back(s.descriptors());
  }
  return {{"version", 1}, {"n", bank.n()}, {"classes", std::move(classes)}};
}

DescriptorBank load_bank_file(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what(), e.byte);
  }
  return bank_from_json(j);
}

void save_bank_file(const DescriptorBank& bank, const std::string& path) {
  io::write_file_atomic(path, bank_to_json(bank).dump(2) + "\n");
}

}  // namespace oodcal
