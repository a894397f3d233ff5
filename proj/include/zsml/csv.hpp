#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace zsml::csv {

using Row = std::vector<std::string>;

/// RFC-4180 reader: quoted fields, doubled-quote escapes, CRLF or LF line ends.
/// A trailing newline does not produce an empty record.
std::vector<Row> parse(std::string_view text);

/// Quotes a field when it contains a comma, quote, CR or LF.
std::string escape(std::string_view field);

std::string join(const Row& row);

/// Shortest round-trippable decimal form of a double ("%.17g"); NaN renders empty.
std::string format_double(double v);

} // namespace zsml::csv
