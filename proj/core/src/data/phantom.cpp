#include "hamil/data/phantom.hpp"

#include "hamil/common/errors.hpp"
#include "hamil/common/rng.hpp"
#include "hamil/data/volume_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

namespace hamil::data {

void PhantomConfig::validate() const {
  if (n_volumes < 4) throw ConfigError("need at least 4 volumes");
  if (rows < 32 || cols < 32 || slices < 8) throw ConfigError("volume dims must be at least 32 x 32 x 8");
  if (!(defect_rate >= 0.0 && defect_rate <= 1.0)) throw ConfigError("defect_rate must lie in [0, 1]");
  if (!(class_balance >= 0.0 && class_balance <= 1.0)) throw ConfigError("class balance must lie in [0, 1]");
  if (defect_rate > 0 && artifact_kinds.empty()) throw ConfigError("no artifact kinds enabled");
  if (defect_rate > 0) {
    const long n_diag = std::lround(n_volumes * class_balance);
    if ((class_balance > 0 && n_diag == 0) || (class_balance < 1 && n_diag == n_volumes))
      throw ConfigError("class balance cannot be met with " + std::to_string(n_volumes) + " volumes");
  }
}

namespace {

struct Plan {
  int label = 1;
  double severity = 0;
  Volume volume;
};

// Smooth in-plane texture: a few random plane waves.
struct Texture {
  std::array<double, 4> fr{}, fc{}, phase{};
  double eval(double r, double c) const {
    double v = 0;
    for (std::size_t i = 0; i < fr.size(); ++i) v += std::sin(fr[i] * r + fc[i] * c + phase[i]);
    return v / static_cast<double>(fr.size());
  }
};

Texture random_texture(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> freq(lo, hi);
  std::uniform_real_distribution<double> angle(0.0, 2 * std::numbers::pi);
  Texture t;
  for (std::size_t i = 0; i < t.fr.size(); ++i) {
    const double f = freq(rng);
    const double theta = angle(rng);
    t.fr[i] = f * std::cos(theta);
    t.fc[i] = f * std::sin(theta);
    t.phase[i] = angle(rng);
  }
  return t;
}

constexpr double kWall = 0.12;

void draw_anatomy(Volume& v, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double cr = v.rows * (0.5 + 0.16 * (u(rng) - 0.5));
  const double cc = v.cols * (0.5 + 0.16 * (u(rng) - 0.5));
  const double cs = v.slices * (0.5 + 0.2 * (u(rng) - 0.5));
  const double rr = v.rows * (0.22 + 0.08 * u(rng));
  const double rc = v.cols * (0.22 + 0.08 * u(rng));
  const double rs = v.slices * (0.30 + 0.10 * u(rng));
  const double pool = 0.40 + 0.1 * u(rng);
  const double background = 0.12 + 0.06 * u(rng);
  const Texture wall_tex = random_texture(rng, 0.6, 1.2);
  const Texture bg_tex = random_texture(rng, 0.05, 0.2);
  std::normal_distribution<double> speckle(0.0, 0.04);
  for (int r = 0; r < v.rows; ++r)
    for (int c = 0; c < v.cols; ++c)
      for (int s = 0; s < v.slices; ++s) {
        const double dr = (r - cr) / rr, dc = (c - cc) / rc, ds = (s - cs) / rs;
        const double rho = std::sqrt(dr * dr + dc * dc + ds * ds);
        double val;
        if (std::abs(rho - 1.0) < kWall)
          val = 1.0 + 0.3 * wall_tex.eval(r, c + 0.7 * s);
        else if (rho < 1.0)
          val = pool;
        else
          val = background + 0.08 * bg_tex.eval(r, c);
        v.at(r, c, s) = static_cast<float>(val + speckle(rng));
        v.mask[v.index(r, c, s)] = rho <= 1.0 + kWall + 0.05 ? 1 : 0;
      }
}

std::vector<float> read_slice(const Volume& v, int s) {
  std::vector<float> out(static_cast<std::size_t>(v.rows) * static_cast<std::size_t>(v.cols));
  for (int r = 0; r < v.rows; ++r)
    for (int c = 0; c < v.cols; ++c) out[static_cast<std::size_t>(r) * static_cast<std::size_t>(v.cols) + static_cast<std::size_t>(c)] = v.at(r, c, s);
  return out;
}

void write_slice(Volume& v, int s, const std::vector<float>& px) {
  for (int r = 0; r < v.rows; ++r)
    for (int c = 0; c < v.cols; ++c) v.at(r, c, s) = px[static_cast<std::size_t>(r) * static_cast<std::size_t>(v.cols) + static_cast<std::size_t>(c)];
}

std::vector<float> gaussian_blur(const std::vector<float>& px, int rows, int cols, double sigma) {
  const int radius = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) sum += k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& x : k) x /= sum;
  auto idx = [cols](int r, int c) { return static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c); };
  std::vector<float> tmp(px.size()), out(px.size());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * px[idx(r, std::clamp(c + i, 0, cols - 1))];
      tmp[idx(r, c)] = static_cast<float>(acc);
    }
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i) acc += k[static_cast<std::size_t>(i + radius)] * tmp[idx(std::clamp(r + i, 0, rows - 1), c)];
      out[idx(r, c)] = static_cast<float>(acc);
    }
  return out;
}

void corrupt_slice(Volume& v, int s, ArtifactKind kind, double strength, Rng& rng) {
  std::vector<float> px = read_slice(v, s);
  switch (kind) {
    case ArtifactKind::blur:
      px = gaussian_blur(px, v.rows, v.cols, 1.5 + 1.5 * strength);
      break;
    case ArtifactKind::ghosting: {
      // Shifted additive copy along the phase-encode (row) axis.
      const int shift = v.rows / 4 + static_cast<int>(strength * v.rows / 8);
      const double amp = 0.35 + 0.3 * strength;
      const std::vector<float> orig = px;
      for (int r = 0; r < v.rows; ++r)
        for (int c = 0; c < v.cols; ++c)
          px[static_cast<std::size_t>(r) * static_cast<std::size_t>(v.cols) + static_cast<std::size_t>(c)] +=
              static_cast<float>(amp * orig[static_cast<std::size_t>((r + shift) % v.rows) * static_cast<std::size_t>(v.cols) + static_cast<std::size_t>(c)]);
      break;
    }
    case ArtifactKind::dropout: {
      const double keep = 0.35 - 0.2 * strength;
      for (auto& x : px) x = static_cast<float>(x * keep);
      break;
    }
    case ArtifactKind::noise: {
      std::normal_distribution<double> noise(0.0, 0.25 + 0.25 * strength);
      for (auto& x : px) x = static_cast<float>(x + noise(rng));
      break;
    }
  }
  write_slice(v, s, px);
}

// Mask slices whose cross-section is at least 30% of the largest one; the
// only slices eligible for corruption, so defects land where patches are drawn.
std::vector<int> core_slices(const Volume& v) {
  std::vector<std::size_t> area(static_cast<std::size_t>(v.slices), 0);
  for (std::size_t i = 0; i < v.mask.size(); ++i)
    if (v.mask[i]) ++area[i % static_cast<std::size_t>(v.slices)];
  const std::size_t peak = *std::max_element(area.begin(), area.end());
  std::vector<int> out;
  for (int s = 0; s < v.slices; ++s)
    if (area[static_cast<std::size_t>(s)] > 0 && area[static_cast<std::size_t>(s)] * 10 >= peak * 3) out.push_back(s);
  return out;
}

void apply_corruption(Plan& plan, const PhantomConfig& cfg, Rng& rng) {
  Volume& v = plan.volume;
  if (cfg.defect_rate <= 0) return;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int mask_slice_count = static_cast<int>(v.mask_slices().size());
  std::vector<int> candidates = core_slices(v);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  if (plan.label == 0) {
    int count = std::max(1, static_cast<int>(std::floor(cfg.defect_rate * mask_slice_count + 1e-9)));
    count = std::min<int>(count, static_cast<int>(candidates.size()));
    std::uniform_int_distribution<std::size_t> pick(0, cfg.artifact_kinds.size() - 1);
    double strength_sum = 0;
    for (int i = 0; i < count; ++i) {
      const int s = candidates[static_cast<std::size_t>(i)];
      const ArtifactKind kind = cfg.artifact_kinds[pick(rng)];
      const double strength = 0.7 + 0.3 * u(rng);
      corrupt_slice(v, s, kind, strength, rng);
      v.artifacts.push_back({s, kind});
      strength_sum += strength;
    }
    std::sort(v.artifacts.begin(), v.artifacts.end(), [](const auto& a, const auto& b) { return a.slice < b.slice; });
    plan.severity = (static_cast<double>(count) / mask_slice_count) * (strength_sum / count);
  } else if (u(rng) < 0.5) {
    // Sub-threshold: faint noise on a single slice.
    const int s = candidates.front();
    const double sigma = 0.01 + 0.02 * u(rng);
    std::normal_distribution<double> noise(0.0, sigma);
    std::vector<float> px = read_slice(v, s);
    for (auto& x : px) x = static_cast<float>(x + noise(rng));
    write_slice(v, s, px);
    v.artifacts.push_back({s, ArtifactKind::noise});
    plan.severity = sigma;
  }
}

double median(std::vector<double> xs) {
  if (xs.empty()) return 0;
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace

std::vector<Volume> generate_phantoms(const PhantomConfig& config) {
  config.validate();
  const int n = config.n_volumes;
  std::vector<int> labels(static_cast<std::size_t>(n), 1);
  if (config.defect_rate > 0) {
    const int n_diag = static_cast<int>(std::lround(n * config.class_balance));
    std::fill(labels.begin() + n_diag, labels.end(), 0);
    Rng master(config.seed);
    std::shuffle(labels.begin(), labels.end(), master);
  }

  std::vector<Plan> plans(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Plan& p = plans[static_cast<std::size_t>(i)];
    char id[32];
    std::snprintf(id, sizeof id, "vol_%04d", i);
    p.label = labels[static_cast<std::size_t>(i)];
    p.volume = make_volume(id, config.rows, config.cols, config.slices);
    Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(i)));
    draw_anatomy(p.volume, rng);
    apply_corruption(p, config, rng);
  }

  // Scores by severity quantile within each label: corrupted -> {1, 2},
  // clean -> 5, sub-threshold -> {3, 4}.
  std::vector<double> bad, mild;
  for (const auto& p : plans) {
    if (p.label == 0) bad.push_back(p.severity);
    else if (p.severity > 0) mild.push_back(p.severity);
  }
  const double bad_median = median(bad);
  const double mild_median = median(mild);
  std::vector<Volume> out;
  out.reserve(plans.size());
  for (auto& p : plans) {
    if (p.label == 0) p.volume.score = p.severity > bad_median ? 1 : 2;
    else if (p.severity > 0) p.volume.score = p.severity > mild_median ? 3 : 4;
    else p.volume.score = 5;
    p.volume.label = binarize_score(p.volume.score);
    p.volume.provenance = Provenance::synthetic;
    out.push_back(std::move(p.volume));
  }
  return out;
}

Manifest generate_synthetic_dataset(const PhantomConfig& config, const std::string& directory) {
  const std::vector<Volume> volumes = generate_phantoms(config);
  std::filesystem::create_directories(directory);
  Manifest m;
  m.seed = config.seed;
  m.directory = directory;
  for (const auto& v : volumes) {
    save_volume(v, directory);
    m.entries.push_back({v.id, v.id + ".volhdr", v.score, v.label, Split::unassigned});
  }
  return m;
}

}  // namespace hamil::data
