#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace hamil {

// Ordered "key value" records, one per line. '#' starts a comment line.
// Shared by the volume header, manifest, checkpoint header and config files.
class KeyValueDoc {
 public:
  static KeyValueDoc parse(std::string_view text, bool allow_equals = false);

  void add(std::string key, std::string value);
  void set(const std::string& key, std::string value);

  bool has(std::string_view key) const;
  std::optional<std::string> find(std::string_view key) const;
  // Throws CorruptHeader when the key is missing.
  const std::string& at(std::string_view key) const;
  std::vector<std::string> all(std::string_view key) const;

  std::string str() const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::vector<std::string> split_ws(std::string_view text);
std::vector<std::string> split(std::string_view text, char sep);
std::string trim(std::string_view text);

// Strict numeric parsing; throws InvalidInput naming `what` on failure.
long long parse_int(std::string_view text, std::string_view what);
double parse_double(std::string_view text, std::string_view what);

// Shortest text that parses back to the same double.
std::string format_double(double v);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view text);
std::vector<std::byte> read_binary_file(const std::string& path);

}  // namespace hamil
