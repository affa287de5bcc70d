#include "hamil/common/text_format.hpp"

#include "hamil/common/errors.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace hamil {

KeyValueDoc KeyValueDoc::parse(std::string_view text, bool allow_equals) {
  KeyValueDoc doc;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    if (line.empty() || line[0] == '#') {
      if (end == text.size()) break;
      continue;
    }
    std::size_t split_at = line.find_first_of(allow_equals ? " \t=" : " \t");
    std::string key = trim(std::string_view(line).substr(0, split_at));
    std::string value;
    if (split_at != std::string::npos) {
      std::string_view rest = std::string_view(line).substr(split_at);
      rest = rest.substr(rest.find_first_not_of(" \t"));
      if (allow_equals && !rest.empty() && rest.front() == '=') rest.remove_prefix(1);
      value = trim(rest);
    }
    if (key.empty()) throw CorruptHeader("empty key in line: " + line);
    doc.add(std::move(key), std::move(value));
    if (end == text.size()) break;
  }
  return doc;
}

void KeyValueDoc::add(std::string key, std::string value) {
  entries_.emplace_back(std::move(key), std::move(value));
}

void KeyValueDoc::set(const std::string& key, std::string value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  add(key, std::move(value));
}

bool KeyValueDoc::has(std::string_view key) const { return find(key).has_value(); }

std::optional<std::string> KeyValueDoc::find(std::string_view key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  return std::nullopt;
}

const std::string& KeyValueDoc::at(std::string_view key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  throw CorruptHeader("missing key '" + std::string(key) + "'");
}

std::vector<std::string> KeyValueDoc::all(std::string_view key) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_)
    if (k == key) out.push_back(v);
  return out;
}

std::string KeyValueDoc::str() const {
  std::string out;
  for (const auto& [k, v] : entries_) {
    out += k;
    if (!v.empty()) {
      out += ' ';
      out += v;
    }
    out += '\n';
  }
  return out;
}

std::vector<std::string> split_ws(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream is{std::string(text)};
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    std::size_t end = text.find(sep, pos);
    out.emplace_back(trim(text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos)));
    if (end == std::string_view::npos) break;
    pos = end + 1;
  }
  return out;
}

std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

long long parse_int(std::string_view text, std::string_view what) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty())
    throw InvalidInput("expected integer for " + std::string(what) + ", got '" + std::string(text) + "'");
  return v;
}

double parse_double(std::string_view text, std::string_view what) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty())
    throw InvalidInput("expected number for " + std::string(what) + ", got '" + std::string(text) + "'");
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed for " + path);
}

std::vector<std::byte> read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw NotFound("cannot open " + path);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError("read failed for " + path);
  return bytes;
}

}  // namespace hamil
