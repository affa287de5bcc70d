#include "hamil/data/manifest.hpp"

#include "hamil/common/errors.hpp"
#include "hamil/common/rng.hpp"
#include "hamil/common/sha256.hpp"
#include "hamil/common/text_format.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

namespace hamil::data {

namespace fs = std::filesystem;

std::string to_string(Split split) {
  switch (split) {
    case Split::unassigned: return "unassigned";
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "unassigned";
}

Split split_from_string(const std::string& text) {
  if (text == "unassigned") return Split::unassigned;
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw InvalidInput("unknown split: " + text);
}

std::vector<const ManifestEntry*> Manifest::in_split(Split split) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(&e);
  return out;
}

const ManifestEntry& Manifest::find(const std::string& id) const {
  for (const auto& e : entries)
    if (e.id == id) return e;
  throw NotFound("volume id not in manifest: " + id);
}

std::string Manifest::resolve(const ManifestEntry& entry) const {
  if (directory.empty() || fs::path(entry.path).is_absolute()) return entry.path;
  return (fs::path(directory) / entry.path).string();
}

std::string Manifest::serialize() const {
  KeyValueDoc doc;
  doc.add("hamil_manifest", "1");
  doc.add("seed", std::to_string(seed));
  doc.add("ratios", format_double(ratios[0]) + " " + format_double(ratios[1]) + " " + format_double(ratios[2]));
  for (const auto& e : entries)
    doc.add("entry", e.id + " " + e.path + " " + std::to_string(e.score) + " " + std::to_string(e.label) + " " +
                         to_string(e.split));
  return doc.str();
}

std::string Manifest::digest() const { return sha256_hex(serialize()); }

Manifest parse_manifest(const std::string& text, const std::string& directory) {
  const KeyValueDoc doc = KeyValueDoc::parse(text);
  if (doc.at("hamil_manifest") != "1") throw VersionMismatch("unsupported manifest version");
  Manifest m;
  m.directory = directory;
  m.seed = static_cast<std::uint64_t>(parse_int(doc.at("seed"), "seed"));
  const auto r = split_ws(doc.at("ratios"));
  if (r.size() != 3) throw CorruptHeader("ratios needs three values");
  for (int i = 0; i < 3; ++i) m.ratios[static_cast<std::size_t>(i)] = parse_double(r[static_cast<std::size_t>(i)], "ratios");
  for (const auto& line : doc.all("entry")) {
    const auto t = split_ws(line);
    if (t.size() != 5) throw CorruptHeader("manifest entry needs 5 fields: " + line);
    ManifestEntry e;
    e.id = t[0];
    e.path = t[1];
    e.score = static_cast<int>(parse_int(t[2], "score"));
    e.label = static_cast<int>(parse_int(t[3], "label"));
    e.split = split_from_string(t[4]);
    m.entries.push_back(std::move(e));
  }
  return m;
}

Manifest load_manifest(const std::string& path) {
  return parse_manifest(read_text_file(path), fs::path(path).parent_path().string());
}

void save_manifest(const Manifest& manifest, const std::string& path) {
  write_text_file(path, manifest.serialize());
}

namespace {

// Largest-remainder apportionment of `total` by `weights` (which sum to 1).
std::array<int, 3> apportion(int total, const std::array<double, 3>& weights) {
  std::array<int, 3> out{};
  std::array<double, 3> frac{};
  int assigned = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const double exact = total * weights[s];
    out[s] = static_cast<int>(std::floor(exact + 1e-9));
    frac[s] = exact - out[s];
    assigned += out[s];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t i = 0; assigned < total; i = (i + 1) % 3, ++assigned) ++out[order[i]];
  return out;
}

}  // namespace

Manifest split_dataset(const Manifest& manifest, std::array<double, 3> ratios, std::uint64_t seed) {
  for (double r : ratios)
    if (!(r >= 0.0)) throw ConfigError("split ratios must be non-negative");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  const int active = static_cast<int>(std::count_if(ratios.begin(), ratios.end(), [](double r) { return r > 0; }));

  std::array<std::vector<std::size_t>, 2> by_label;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const int label = manifest.entries[i].label;
    if (label != 0 && label != 1) throw InvalidInput("manifest label must be 0 or 1");
    by_label[static_cast<std::size_t>(label)].push_back(i);
  }
  for (const auto& members : by_label)
    if (!members.empty() && static_cast<int>(members.size()) < active)
      throw ConfigError("a label class has fewer volumes than there are splits");

  const int n = static_cast<int>(manifest.entries.size());
  const std::array<int, 3> totals = apportion(n, ratios);

  // Per-label quotas: floors first, then hand out the remaining units by
  // largest fractional part while both the label and the split need one.
  std::array<std::array<int, 3>, 2> quota{};
  std::array<int, 2> row_need{};
  std::array<int, 3> col_need = totals;
  struct Cell {
    double frac;
    std::size_t label;
    std::size_t split;
  };
  std::vector<Cell> cells;
  for (std::size_t c = 0; c < 2; ++c) {
    const int nc = static_cast<int>(by_label[c].size());
    int used = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      const double exact = nc * ratios[s];
      quota[c][s] = static_cast<int>(std::floor(exact + 1e-9));
      used += quota[c][s];
      col_need[s] -= quota[c][s];
      cells.push_back({exact - quota[c][s], c, s});
    }
    row_need[c] = nc - used;
  }
  std::stable_sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) { return a.frac > b.frac; });
  for (const Cell& cell : cells) {
    if (row_need[cell.label] > 0 && col_need[cell.split] > 0) {
      ++quota[cell.label][cell.split];
      --row_need[cell.label];
      --col_need[cell.split];
    }
  }
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t s = 0; s < 3 && row_need[c] > 0; ++s)
      while (row_need[c] > 0 && col_need[s] > 0) {
        ++quota[c][s];
        --row_need[c];
        --col_need[s];
      }

  Manifest out = manifest;
  out.seed = seed;
  out.ratios = ratios;
  Rng rng(seed);
  constexpr std::array<Split, 3> kSplits{Split::train, Split::val, Split::test};
  for (std::size_t c = 0; c < 2; ++c) {
    auto members = by_label[c];
    std::shuffle(members.begin(), members.end(), rng);
    std::size_t pos = 0;
    for (std::size_t s = 0; s < 3; ++s)
      for (int k = 0; k < quota[c][s]; ++k) out.entries[members[pos++]].split = kSplits[s];
  }
  return out;
}

}  // namespace hamil::data
