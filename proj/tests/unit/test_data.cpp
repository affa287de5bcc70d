#include "hamil/common/errors.hpp"
#include "hamil/common/text_format.hpp"
#include "hamil/data/manifest.hpp"
#include "hamil/data/phantom.hpp"
#include "hamil/data/preprocess.hpp"
#include "hamil/data/sampling.hpp"
#include "hamil/data/volume.hpp"
#include "hamil/data/volume_io.hpp"
#include "metric_oracle.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>

using namespace hamil;
using namespace hamil::data;
namespace fs = std::filesystem;

namespace {

// Box-shaped mask over rows [r0, r1), cols [c0, c1) on the listed slices.
Volume box_volume(int rows, int cols, int slices, int r0, int r1, int c0, int c1, std::vector<int> mask_slices,
                  std::uint64_t seed = 1) {
  Volume v = make_volume("box", rows, cols, slices);
  Rng rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (auto& x : v.voxels) x = n(rng);
  for (int s : mask_slices)
    for (int r = r0; r < r1; ++r)
      for (int c = c0; c < c1; ++c) v.mask[v.index(r, c, s)] = 1;
  return v;
}

// Mean squared 4-neighbour Laplacian over the interior mask pixels of a slice.
double hf_energy(const Volume& v, int s) {
  double sum = 0;
  int count = 0;
  for (int r = 1; r + 1 < v.rows; ++r)
    for (int c = 1; c + 1 < v.cols; ++c) {
      if (!v.in_mask(r, c, s)) continue;
      const double lap = 4.0 * v.at(r, c, s) - v.at(r - 1, c, s) - v.at(r + 1, c, s) - v.at(r, c - 1, s) -
                         v.at(r, c + 1, s);
      sum += lap * lap;
      ++count;
    }
  return count ? sum / count : 0.0;
}

// Average absolute log deviation of per-slice high-frequency energy from the
// volume's median slice. Clean volumes have uniform energy across slices.
double hf_irregularity(const Volume& v) {
  std::vector<double> e;
  for (int s : v.mask_slices()) {
    const double x = hf_energy(v, s);
    if (x > 0) e.push_back(x);
  }
  std::vector<double> sorted = e;
  std::sort(sorted.begin(), sorted.end());
  const double med = sorted[sorted.size() / 2];
  double dev = 0;
  for (double x : e) dev += std::abs(std::log(x / med));
  return dev / static_cast<double>(e.size());
}

Manifest fake_manifest(int n_pos, int n_neg) {
  Manifest m;
  for (int i = 0; i < n_pos + n_neg; ++i) {
    const int label = i < n_pos ? 1 : 0;
    m.entries.push_back({"v" + std::to_string(i), "v" + std::to_string(i) + ".volhdr", label ? 4 : 2, label,
                         Split::unassigned});
  }
  return m;
}

void rewrite(const fs::path& path, const std::function<void(std::string&)>& edit) {
  std::string text = read_text_file(path.string());
  edit(text);
  write_text_file(path.string(), text);
}

}  // namespace

TEST_CASE("score binarization") {
  CHECK(binarize_score(3) == 1);
  CHECK(binarize_score(2) == 0);
  CHECK(binarize_score(5) == 1);
  CHECK(binarize_score(1) == 0);
  CHECK_THROWS_AS(binarize_score(0), InvalidInput);
  CHECK_THROWS_AS(binarize_score(6), InvalidInput);
}

TEST_CASE("phantom generation rules") {
  PhantomConfig cfg;
  cfg.n_volumes = 12;
  cfg.rows = 32;
  cfg.cols = 32;
  cfg.slices = 8;
  cfg.seed = 4;

  SUBCASE("no defects means every volume is diagnostic") {
    cfg.defect_rate = 0;
    for (const auto& v : generate_phantoms(cfg)) CHECK(v.label == 1);
  }
  SUBCASE("labels agree with scores and corruption counts") {
    for (const auto& v : generate_phantoms(cfg)) {
      CHECK(binarize_score(v.score) == v.label);
      CHECK_NOTHROW(v.validate());
      if (v.label == 0) {
        const int expect = std::max(1, static_cast<int>(std::floor(0.5 * v.mask_slices().size() + 1e-9)));
        CHECK(static_cast<int>(v.artifacts.size()) == expect);
        CHECK(v.score <= 2);
      } else {
        CHECK(v.artifacts.size() <= 1);
      }
    }
  }
  SUBCASE("volumes depend only on the seed") {
    const auto a = generate_phantoms(cfg);
    const auto b = generate_phantoms(cfg);
    CHECK(a == b);
    cfg.seed = 5;
    CHECK_FALSE(a == generate_phantoms(cfg));
  }
  SUBCASE("invalid configurations") {
    cfg.n_volumes = 3;
    CHECK_THROWS_AS(generate_phantoms(cfg), ConfigError);
    cfg.n_volumes = 4;
    cfg.class_balance = 0.1;
    CHECK_THROWS_AS(generate_phantoms(cfg), ConfigError);
    cfg.class_balance = 0.5;
    cfg.rows = 16;
    CHECK_THROWS_AS(generate_phantoms(cfg), ConfigError);
    cfg.rows = 32;
    cfg.defect_rate = 1.5;
    CHECK_THROWS_AS(generate_phantoms(cfg), ConfigError);
  }
}

TEST_CASE("default synthetic set: exact balance and separability") {
  PhantomConfig cfg;  // 200 volumes, 64 x 64 x 24, balance 0.5
  const auto volumes = generate_phantoms(cfg);
  REQUIRE(volumes.size() == 200);
  int pos = 0;
  std::vector<double> score;
  std::vector<int> labels;
  for (const auto& v : volumes) {
    pos += v.label;
    score.push_back(-hf_irregularity(v));
    labels.push_back(v.label);
  }
  CHECK(pos == 100);
  const double auc = oracle::brute_force_auroc(score, labels).value();
  MESSAGE("high-frequency irregularity AUROC " << auc);
  CHECK(auc >= 0.95);
}

TEST_CASE("dataset files are byte-identical for the same seed") {
  testing_util::TempDir a("gen_a"), b("gen_b");
  PhantomConfig cfg;
  cfg.n_volumes = 6;
  cfg.rows = 32;
  cfg.cols = 32;
  cfg.slices = 8;
  const auto ma = generate_synthetic_dataset(cfg, a.str());
  const auto mb = generate_synthetic_dataset(cfg, b.str());
  CHECK(ma.serialize() == mb.serialize());
  for (const auto& e : ma.entries)
    for (const char* ext : {".volhdr", ".volraw"})
      CHECK(testing_util::slurp(a / (e.id + ext)) == testing_util::slurp(b / (e.id + ext)));
}

TEST_CASE("stratified splitting") {
  const auto m = split_dataset(fake_manifest(50, 50), kDefaultSplitRatios, 9);
  std::array<int, 3> size{}, positives{};
  for (const auto& e : m.entries) {
    REQUIRE(e.split != Split::unassigned);
    const int s = e.split == Split::train ? 0 : e.split == Split::val ? 1 : 2;
    ++size[s];
    positives[s] += e.label;
  }
  CHECK(size == std::array<int, 3>{64, 16, 20});
  for (int s = 0; s < 3; ++s) CHECK(std::abs(positives[s] - 0.5 * size[s]) <= 1.0);

  CHECK(split_dataset(fake_manifest(50, 50), kDefaultSplitRatios, 9).serialize() == m.serialize());
  CHECK(split_dataset(fake_manifest(50, 50), kDefaultSplitRatios, 10).serialize() != m.serialize());

  const auto big = split_dataset(fake_manifest(100, 100), kDefaultSplitRatios, 1);
  CHECK(big.in_split(Split::train).size() == 128);
  CHECK(big.in_split(Split::val).size() == 32);
  CHECK(big.in_split(Split::test).size() == 40);

  // Unbalanced labels stay within one volume of the global proportion.
  const auto skew = split_dataset(fake_manifest(30, 73), kDefaultSplitRatios, 2);
  const double global = 30.0 / 103.0;
  for (Split s : {Split::train, Split::val, Split::test}) {
    const auto members = skew.in_split(s);
    int p = 0;
    for (const auto* e : members) p += e->label;
    CHECK(std::abs(p - global * static_cast<double>(members.size())) <= 1.0);
  }

  CHECK_THROWS_AS(split_dataset(fake_manifest(5, 5), {0.5, 0.4, 0.2}, 1), ConfigError);
  CHECK_THROWS_AS(split_dataset(fake_manifest(2, 5), kDefaultSplitRatios, 1), ConfigError);
}

TEST_CASE("manifest text round trip") {
  testing_util::TempDir dir("manifest");
  auto m = split_dataset(fake_manifest(6, 6), kDefaultSplitRatios, 3);
  m.seed = 3;
  const std::string path = (dir / "manifest.txt").string();
  save_manifest(m, path);
  const auto back = load_manifest(path);
  CHECK(back.serialize() == m.serialize());
  CHECK(back.digest() == m.digest());
  CHECK(back.directory == dir.str());
  CHECK(back.find("v3").label == 1);
  CHECK_THROWS_AS(back.find("nope"), NotFound);
  CHECK_THROWS_AS(load_manifest((dir / "missing.txt").string()), NotFound);
  CHECK_THROWS_AS(parse_manifest("hamil_manifest 1\nseed 0\nratios 0.64 0.16 0.2\nentry a b 3\n", ""), CorruptHeader);
  CHECK_THROWS_AS(parse_manifest("hamil_manifest 2\n", ""), VersionMismatch);
}

TEST_CASE("z-score normalization") {
  Volume v = box_volume(20, 20, 4, 4, 12, 5, 15, {1, 2});
  for (auto& x : v.voxels) x = 3.0f * x + 7.0f;
  const Volume n = normalize_volume(v);
  double sum = 0, sq = 0;
  int count = 0;
  for (std::size_t i = 0; i < n.voxels.size(); ++i)
    if (n.mask[i]) {
      sum += n.voxels[i];
      ++count;
    }
  const double mean = sum / count;
  for (std::size_t i = 0; i < n.voxels.size(); ++i)
    if (n.mask[i]) sq += (n.voxels[i] - mean) * (n.voxels[i] - mean);
  CHECK(std::abs(mean) < 1e-5);
  CHECK(std::abs(std::sqrt(sq / count) - 1.0) < 1e-5);

  const Volume twice = normalize_volume(n);
  Volume affine = v;
  for (auto& x : affine.voxels) x = -0.5f * x + 100.0f;
  affine = normalize_volume(affine);
  Volume plain = v;
  for (auto& x : plain.voxels) x = (x - 7.0f) / 3.0f;
  plain = normalize_volume(plain);
  double idem = 0, aff = 0;
  for (std::size_t i = 0; i < n.voxels.size(); ++i) {
    idem = std::max(idem, static_cast<double>(std::abs(twice.voxels[i] - n.voxels[i])));
    aff = std::max(aff, static_cast<double>(std::abs(std::abs(affine.voxels[i]) - std::abs(plain.voxels[i]))));
  }
  CHECK(idem < 1e-5);
  // A negative scale flips the sign; positive affine maps leave the output unchanged.
  CHECK(aff < 1e-4);
  Volume pos = v;
  for (auto& x : pos.voxels) x = 0.25f * x - 2.0f;
  pos = normalize_volume(pos);
  double diff = 0;
  for (std::size_t i = 0; i < n.voxels.size(); ++i)
    diff = std::max(diff, static_cast<double>(std::abs(pos.voxels[i] - n.voxels[i])));
  CHECK(diff < 1e-5);

  Volume flat = v;
  std::fill(flat.voxels.begin(), flat.voxels.end(), 2.0f);
  CHECK_THROWS_AS(normalize_volume(flat), InvalidInput);
}

TEST_CASE("crop box rules") {
  const Volume v = box_volume(128, 128, 10, 50, 70, 40, 64, {3, 4, 5});
  const CropBox tight = crop_box(v, 0);
  CHECK(tight.row_begin == 50);
  CHECK(tight.row_end == 70);
  CHECK(tight.col_begin == 40);
  CHECK(tight.col_end == 64);
  CHECK(tight.slice_begin == 3);
  CHECK(tight.slice_end == 6);

  const Grid3 g = crop_subvolume(v, 30);
  CHECK(g.rows == 20 + 60);
  CHECK(g.cols == 24 + 60);
  CHECK(g.slices == 3);
  CHECK(g.at(0, 0, 0) == v.at(20, 10, 3));

  const Volume edge = box_volume(40, 40, 4, 0, 10, 35, 40, {0});
  const CropBox clipped = crop_box(edge, 30);
  CHECK(clipped.row_begin == 0);
  CHECK(clipped.row_end == 40);
  CHECK(clipped.col_begin == 5);
  CHECK(clipped.col_end == 40);
  CHECK_THROWS_AS(crop_box(make_volume("empty", 8, 8, 2), 0), InvalidInput);
}

TEST_CASE("trilinear resampling") {
  Grid3 g{3, 4, 2, std::vector<float>(24)};
  std::iota(g.values.begin(), g.values.end(), 0.0f);
  const Grid3 same = resample_trilinear(g, 3, 4, 2);
  CHECK(same.values == g.values);

  Grid3 flat{5, 5, 3, std::vector<float>(75, 2.5f)};
  for (float x : resample_trilinear(flat, 9, 7, 4).values) CHECK(x == doctest::Approx(2.5f));

  // A linear ramp along rows stays linear in the interior.
  Grid3 ramp{4, 1, 1, {0.0f, 1.0f, 2.0f, 3.0f}};
  const Grid3 up = resample_trilinear(ramp, 8, 1, 1);
  CHECK(up.values.front() == 0.0f);
  CHECK(up.values.back() == 3.0f);
  for (int i = 2; i < 6; ++i) CHECK(up.values[i + 1] - up.values[i] == doctest::Approx(0.5f));
}

TEST_CASE("sub-bag sampling") {
  SamplingConfig cfg;
  cfg.subbags = 3;
  cfg.instances = 5;
  cfg.patch_rows = 8;
  cfg.patch_cols = 6;
  const Volume v = box_volume(32, 30, 8, 6, 20, 4, 18, {1, 2, 3, 5, 6});

  SUBCASE("shape, bounds and mask overlap") {
    Rng rng(1);
    const auto b = sample_subbags(v, cfg, rng);
    CHECK(b.subbag_count() == 3);
    CHECK(b.patch_count() == 15);
    CHECK(b.pixels.size() == 15u * 48u);
    std::set<int> distinct(b.slice_indices.begin(), b.slice_indices.end());
    CHECK(distinct.size() == 3);
    for (int m = 0; m < 3; ++m)
      for (int k = 0; k < 5; ++k) {
        const PatchOrigin o = b.origins[m][k];
        CHECK(o.slice == b.slice_indices[m]);
        CHECK(o.row >= 0);
        CHECK(o.row + 8 <= 32);
        CHECK(o.col + 6 <= 30);
        int covered = 0;
        for (int r = 0; r < 8; ++r)
          for (int c = 0; c < 6; ++c) covered += v.in_mask(o.row + r, o.col + c, o.slice);
        CHECK(covered >= 0.25 * 48);
        const auto px = b.patch(m, k);
        CHECK(px[0] == v.at(o.row, o.col, o.slice));
        CHECK(px[47] == v.at(o.row + 7, o.col + 5, o.slice));
      }
  }
  SUBCASE("deterministic in the rng") {
    Rng a(9), b(9);
    const auto x = sample_subbags(v, cfg, a);
    const auto y = sample_subbags(v, cfg, b);
    CHECK(x.origins == y.origins);
    CHECK(x.pixels == y.pixels);
  }
  SUBCASE("too few eligible slices") {
    cfg.subbags = 6;
    Rng rng(1);
    CHECK_THROWS_AS(sample_subbags(v, cfg, rng), SamplingError);
  }
  SUBCASE("a single mask slice is always chosen") {
    cfg.subbags = 1;
    const Volume one = box_volume(32, 30, 8, 6, 20, 4, 18, {4});
    Rng rng(2);
    for (int i = 0; i < 50; ++i) CHECK(sample_subbags(one, cfg, rng).slice_indices[0] == 4);
  }
  SUBCASE("slice choice is uniform") {
    cfg.subbags = 1;
    cfg.instances = 1;
    const Volume two = box_volume(32, 30, 4, 6, 20, 4, 18, {0, 3});
    Rng rng(3);
    int first = 0;
    for (int i = 0; i < 10000; ++i) first += sample_subbags(two, cfg, rng).slice_indices[0] == 0;
    CHECK(first >= 4700);
    CHECK(first <= 5300);
  }
  SUBCASE("windows below the overlap threshold are excluded") {
    // A 2x2 mask cannot reach 25% of an 8x6 window.
    const Volume tiny = box_volume(32, 30, 2, 10, 12, 10, 12, {0});
    CHECK(eligible_slices(tiny, cfg).empty());
    cfg.min_mask_overlap = 0.0;
    CHECK(eligible_slices(tiny, cfg) == std::vector<int>{0});
  }
  SUBCASE("invalid sampling configuration") {
    cfg.instances = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}

TEST_CASE("volume container round trip and damage detection") {
  testing_util::TempDir dir("volio");
  PhantomConfig pc;
  pc.n_volumes = 4;
  pc.rows = 32;
  pc.cols = 32;
  pc.slices = 8;
  Volume v = generate_phantoms(pc)[0];
  v.voxels[5] = -0.0f;
  v.voxels[6] = 1e-42f;  // denormal
  const std::string hdr = save_volume(v, dir.str());
  CHECK(hdr == volume_header_path(dir.str(), v.id));
  const Volume back = load_volume(hdr);
  CHECK(back == v);
  CHECK(std::memcmp(back.voxels.data(), v.voxels.data(), v.voxels.size() * sizeof(float)) == 0);
  CHECK(load_volume((dir / (v.id + ".volraw")).string()) == v);

  const fs::path raw = dir / (v.id + ".volraw");
  const fs::path head = dir / (v.id + ".volhdr");

  SUBCASE("truncated payload") {
    fs::resize_file(raw, fs::file_size(raw) - 1);
    CHECK_THROWS_AS(load_volume(hdr), TruncatedPayload);
  }
  SUBCASE("header dims disagree with the payload") {
    rewrite(head, [](std::string& t) {
      const auto p = t.find("dims 32 32 8");
      REQUIRE(p != std::string::npos);
      t.replace(p, 12, "dims 32 32 4");
    });
    CHECK_THROWS_AS(load_volume(hdr), ConsistencyError);
  }
  SUBCASE("flipped payload byte") {
    std::string bytes = testing_util::slurp(raw);
    bytes[100] ^= 0x01;
    write_text_file(raw.string(), bytes);
    CHECK_THROWS_AS(load_volume(hdr), ChecksumMismatch);
  }
  SUBCASE("unsupported version") {
    rewrite(head, [](std::string& t) { t.replace(t.find("format_version 1"), 16, "format_version 9"); });
    CHECK_THROWS_AS(load_volume(hdr), VersionMismatch);
  }
  SUBCASE("unparseable header") {
    rewrite(head, [](std::string& t) { t.replace(t.find("dims"), 4, "dimz"); });
    CHECK_THROWS_AS(load_volume(hdr), CorruptHeader);
  }
  SUBCASE("label contradicting the score") {
    rewrite(head, [&](std::string& t) {
      const std::string from = "label " + std::to_string(v.label);
      t.replace(t.find(from), from.size(), "label " + std::to_string(1 - v.label));
    });
    CHECK_THROWS_AS(load_volume(hdr), CorruptHeader);
  }
  SUBCASE("missing files") {
    fs::remove(raw);
    CHECK_THROWS_AS(load_volume(hdr), NotFound);
    CHECK_THROWS_AS(load_volume((dir / "ghost.volhdr").string()), NotFound);
  }
}

TEST_CASE("volumes without a mask round trip") {
  testing_util::TempDir dir("volio_nomask");
  Volume v = box_volume(8, 9, 3, 0, 1, 0, 1, {});
  v.mask.clear();
  v.id = "plain";
  CHECK(load_volume(save_volume(v, dir.str())) == v);
}
