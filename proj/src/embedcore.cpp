#include "oodcal/embedcore.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "oodcal/errors.hpp"
#include "oodcal/io_util.hpp"

namespace oodcal {
namespace {

// JSON value type whose floating-point numbers are parsed straight to f32 with
// strtof, so decimal text round-trips without a detour through double.
using json_f32 = nlohmann::basic_json<std::map, std::vector, std::string, bool, std::int64_t,
                                      std::uint64_t, float>;

void append_float(std::string& out, float v) {
  // nlohmann lexes "-0" as an integer and drops the sign.
  if (v == 0.0f && std::signbit(v)) {
    out += "-0.0";
    return;
  }
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, end);
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

  const char* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw ParseError(std::string("truncated ") + what, pos_);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::uint16_t u16(const char* what) {
    auto p = reinterpret_cast<const unsigned char*>(take(2, what));
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }

  std::uint32_t u32(const char* what) {
    auto p = reinterpret_cast<const unsigned char*>(take(4, what));
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }

 private:
  std::string bytes_;
  std::size_t pos_ = 0;
};

EmbeddingTable load_jsonl(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return true;
    }
    return false;
  };

  if (!next_line()) throw ParseError("missing emb-jsonl header", 1);
  json_f32 header;
  try {
    header = json_f32::parse(line);
  } catch (const json_f32::exception& e) {
    throw ParseError(std::string("bad header: ") + e.what(), line_no);
  }
  if (!header.is_object() || header.value("format", "") != "emb-jsonl")
    throw ParseError("header is not an emb-jsonl header", line_no);
  if (!header.contains("version") || header["version"] != 1)
    throw ParseError("unsupported emb-jsonl version", line_no);
  if (!header.contains("dim") || !header["dim"].is_number_unsigned() || header["dim"] == 0)
    throw ParseError("header dim must be a positive integer", line_no);

  EmbeddingTable table(header["dim"].get<std::size_t>());
  if (header.contains("meta")) {
    if (!header["meta"].is_object()) throw ParseError("header meta must be an object", line_no);
    for (auto& [k, v] : header["meta"].items()) {
      if (!v.is_string()) throw ParseError("header meta values must be strings", line_no);
      table.meta()[k] = v.get<std::string>();
    }
  }

  while (next_line()) {
    json_f32 rec;
    try {
      rec = json_f32::parse(line);
    } catch (const json_f32::exception& e) {
      throw ParseError(std::string("bad record: ") + e.what(), line_no);
    }
    if (!rec.is_object() || !rec.contains("id") || !rec["id"].is_string() ||
        !rec.contains("kind") || !rec["kind"].is_string() || !rec.contains("vec") ||
        !rec["vec"].is_array())
      throw ParseError("record needs string id, string kind and array vec", line_no);

    Embedding e;
    e.id = rec["id"].get<std::string>();
    const auto kind = rec["kind"].get<std::string>();
    if (kind == "image") {
      e.kind = EmbeddingKind::image;
    } else if (kind == "text") {
      e.kind = EmbeddingKind::text;
    } else {
      throw ParseError("unknown kind \"" + kind + "\"", line_no);
    }
    e.vec.reserve(rec["vec"].size());
    for (const auto& x : rec["vec"]) {
      if (!x.is_number()) throw ParseError("vec entries must be numbers", line_no);
      const float f = x.get<float>();
      if (!std::isfinite(f)) throw ParseError("non-finite vec entry", line_no);
      e.vec.push_back(f);
    }
    if (e.vec.size() != table.dim())
      throw DimensionError("record \"" + e.id + "\" has " + std::to_string(e.vec.size()) +
                           " components, table dim is " + std::to_string(table.dim()) +
                           " (line " + std::to_string(line_no) + ")");
    table.add(std::move(e));
  }
  return table;
}

EmbeddingTable load_binary(std::istream& in) {
  std::ostringstream ss;
  ss << in.rdbuf();
  ByteReader r(ss.str());

  const char* magic = r.take(4, "magic");
  if (std::memcmp(magic, kBinaryMagic, 4) != 0) throw ParseError("bad magic, expected EMB1", 0);
  const std::uint32_t dim = r.u32("dim");
  if (dim == 0) throw ParseError("dim must be positive", 4);
  const std::uint32_t count = r.u32("count");

  EmbeddingTable table(dim);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t record_offset = r.offset();
    Embedding e;
    const std::uint16_t kind = r.u16("kind");
    if (kind > 1) throw ParseError("unknown kind " + std::to_string(kind), record_offset);
    e.kind = static_cast<EmbeddingKind>(kind);
    const std::uint16_t id_len = r.u16("id length");
    e.id.assign(r.take(id_len, "id"), id_len);
    e.vec.resize(dim);
    for (auto& f : e.vec) {
      const std::size_t at = r.offset();
      f = std::bit_cast<float>(r.u32("vec"));
      if (!std::isfinite(f)) throw ParseError("non-finite vec entry", at);
    }
    table.add(std::move(e));
  }
  if (!r.at_end()) throw ParseError("trailing bytes after last record", r.offset());
  return table;
}

void save_jsonl(const EmbeddingTable& table, std::ostream& out) {
  nlohmann::json header = {{"format", "emb-jsonl"}, {"version", 1}, {"dim", table.dim()}};
  if (!table.meta().empty()) header["meta"] = table.meta();
  std::string buf = header.dump() + "\n";
  for (const auto& e : table.entries()) {
    buf += "{\"id\":";
    buf += nlohmann::json(e.id).dump();
    buf += ",\"kind\":\"";
    buf += to_string(e.kind);
    buf += "\",\"vec\":[";
    for (std::size_t i = 0; i < e.vec.size(); ++i) {
      if (i) buf += ',';
      append_float(buf, e.vec[i]);
    }
    buf += "]}\n";
  }
  out << buf;
}

void save_binary(const EmbeddingTable& table, std::ostream& out) {
  if (table.dim() > UINT32_MAX || table.size() > UINT32_MAX)
    throw ParameterError("table too large for the binary format");
  std::string buf(kBinaryMagic, 4);
  put_u32(buf, static_cast<std::uint32_t>(table.dim()));
  put_u32(buf, static_cast<std::uint32_t>(table.size()));
  for (const auto& e : table.entries()) {
    if (e.id.size() > UINT16_MAX) throw ParameterError("id too long for the binary format: " + e.id);
    put_u16(buf, static_cast<std::uint16_t>(e.kind));
    put_u16(buf, static_cast<std::uint16_t>(e.id.size()));
    buf += e.id;
    for (float f : e.vec) put_u32(buf, std::bit_cast<std::uint32_t>(f));
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

}  // namespace

std::string_view to_string(EmbeddingKind kind) {
  return kind == EmbeddingKind::image ? "image" : "text";
}

EmbeddingKind kind_from_string(std::string_view s) {
  if (s == "image") return EmbeddingKind::image;
  if (s == "text") return EmbeddingKind::text;
  throw ParameterError("unknown embedding kind \"" + std::string(s) + "\"");
}

double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size())
    throw DimensionError("cosine of vectors with lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0) throw DegenerateVectorError("cosine of a zero-norm vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double cosine(const Embedding& a, const Embedding& b) { return cosine(a.vec, b.vec); }

Embedding mean_embedding(std::span<const Embedding* const> vs) {
  if (vs.empty()) throw EmptyInputError("mean of an empty embedding list");
  const std::size_t dim = vs.front()->vec.size();
  Embedding out;
  out.kind = vs.front()->kind;
  std::vector<double> acc(dim, 0.0);
  for (const Embedding* e : vs) {
    if (e->vec.size() != dim) throw DimensionError("mean over embeddings of mixed dimension");
    if (e->kind != out.kind) throw ParameterError("mean over embeddings of mixed kind");
    for (std::size_t i = 0; i < dim; ++i) acc[i] += e->vec[i];
  }
  out.vec.resize(dim);
  const double n = static_cast<double>(vs.size());
  for (std::size_t i = 0; i < dim; ++i) out.vec[i] = static_cast<float>(acc[i] / n);
  return out;
}

Embedding mean_embedding(std::span<const Embedding> vs) {
  std::vector<const Embedding*> ptrs;
  ptrs.reserve(vs.size());
  for (const auto& e : vs) ptrs.push_back(&e);
  return mean_embedding(std::span<const Embedding* const>(ptrs));
}

EmbeddingTable::EmbeddingTable(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw DimensionError("embedding dimension must be positive");
}

void EmbeddingTable::add(Embedding e) {
  if (e.vec.size() != dim_)
    throw DimensionError("embedding \"" + e.id + "\" has " + std::to_string(e.vec.size()) +
                         " components, table dim is " + std::to_string(dim_));
  for (float f : e.vec)
    if (!std::isfinite(f)) throw NonFiniteError("embedding \"" + e.id + "\" has a non-finite component");
  if (index_.count(e.id)) throw DuplicateIdError("duplicate id \"" + e.id + "\"");
  index_.emplace(e.id, entries_.size());
  entries_.push_back(std::move(e));
}

bool EmbeddingTable::contains(std::string_view id) const { return index_.find(id) != index_.end(); }

const Embedding* EmbeddingTable::find(std::string_view id) const {
  auto it = index_.find(id);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

const Embedding& EmbeddingTable::at(std::string_view id) const {
  if (const Embedding* e = find(id)) return *e;
  throw MissingEmbeddingError(std::string(id));
}

EmbeddingTable load_table(std::istream& in, TableFormat format) {
  return format == TableFormat::jsonl ? load_jsonl(in) : load_binary(in);
}

void save_table(const EmbeddingTable& table, std::ostream& out, TableFormat format) {
  if (format == TableFormat::jsonl) {
    save_jsonl(table, out);
  } else {
    save_binary(table, out);
  }
}

EmbeddingTable load_table_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  std::array<char, 4> head{};
  f.read(head.data(), 4);
  const bool binary = f.gcount() == 4 && std::memcmp(head.data(), kBinaryMagic, 4) == 0;
  f.clear();
  f.seekg(0);
  return load_table(f, binary ? TableFormat::binary : TableFormat::jsonl);
}

void save_table_file(const EmbeddingTable& table, const std::string& path) {
  const bool jsonl = path.size() >= 6 && path.compare(path.size() - 6, 6, ".jsonl") == 0;
  std::ostringstream ss;
  save_table(table, ss, jsonl ? TableFormat::jsonl : TableFormat::binary);
  io::write_file_atomic(path, ss.str());
}

}  // namespace oodcal
