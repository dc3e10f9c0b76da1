#pragma once

#include <string>
#include <string_view>

namespace oodcal::io {

std::string read_file(const std::string& path);

// Writes to "<path>.tmp" in the same directory and renames over `path`.
void write_file_atomic(const std::string& path, std::string_view bytes);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

// RFC 4180 quoting, applied only when the field needs it.
std::string csv_field(std::string_view s);

}  // namespace oodcal::io
