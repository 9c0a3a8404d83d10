/*
 * Copyright (c) 2026 The lcp Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lcp {

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::uint64_t fnv1a64(std::string_view text);
std::string hex64(std::uint64_t v);

/// Hash of a file's contents as 16 hex digits; empty string when unreadable.
std::string file_hash(const std::string& path);

/// Writes to a sibling temporary and renames, so readers never observe a
/// partially written file.
void write_file_atomic(const std::string& path, const std::string& contents);

std::string read_file(const std::string& path);

/// Locale-independent, 6 significant digits. Non-finite values print as
/// "inf", "-inf" or "nan".
std::string fmt_num(double v);

/// Accumulates CSV text; cells are written verbatim (callers never need
/// quoting: all cells are numbers or identifiers).
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);
  CsvWriter& cell(std::string_view s);
  CsvWriter& cell(double v);
  CsvWriter& cell(long long v);
  CsvWriter& end_row();
  /// One complete row of preformatted cells.
  CsvWriter& row(std::initializer_list<std::string> cells);
  const std::string& text() const noexcept { return text_; }

 private:
  std::size_t columns_;
  std::size_t in_row_ = 0;
  std::string text_;
};

}  // namespace lcp
