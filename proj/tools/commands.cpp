#include "commands.hpp"

#include "hamil/common/errors.hpp"
#include "hamil/common/text_format.hpp"
#include "hamil/data/manifest.hpp"
#include "hamil/data/phantom.hpp"
#include "hamil/data/volume_io.hpp"
#include "hamil/eval/flops.hpp"
#include "hamil/eval/heatmap.hpp"
#include "hamil/eval/metrics.hpp"
#include "hamil/models/model.hpp"
#include "hamil/train/checkpoint.hpp"
#include "hamil/train/repeats.hpp"
#include "hamil/train/trainer.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

namespace hamil::cli {

namespace fs = std::filesystem;

namespace {

std::vector<int> parse_extent(const std::string& text, std::size_t parts, const char* flag) {
  const auto items = split(text, 'x');
  if (items.size() != parts) {
    // A single number means a square patch.
    if (parts == 2 && items.size() == 1) return {parse_positive(items[0], flag), parse_positive(items[0], flag)};
    throw UsageError(std::string(flag) + " expects " + (parts == 2 ? "RxC" : "RxCxS") + ", got '" + text + "'");
  }
  std::vector<int> out;
  for (const auto& s : items) out.push_back(parse_positive(s, flag));
  return out;
}

std::string g_format(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

data::Split parse_split(const std::string& text) {
  try {
    const data::Split s = data::split_from_string(text);
    if (s == data::Split::unassigned) throw UsageError("--split must be train, val or test");
    return s;
  } catch (const Error&) {
    throw UsageError("--split must be train, val or test, got '" + text + "'");
  }
}

// Refuses to reuse a non-empty directory unless forced.
void claim_directory(const fs::path& dir, bool force, const char* what) {
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw ConfigError(std::string(what) + " " + dir.string() + " already exists and is not empty; pass --force to overwrite");
  fs::create_directories(dir);
}

void check_split_discipline(const data::Manifest& manifest) {
  std::set<std::string> seen;
  for (const auto& e : manifest.entries)
    if (!seen.insert(e.id).second) throw ConsistencyError("volume " + e.id + " appears twice in the manifest");
}

models::ModelSpec build_spec(const TrainOptions& o) {
  models::ModelKind kind;
  try {
    kind = models::model_kind_from_string(o.model);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const auto patch = parse_extent(o.patch, 2, "--patch");
  models::ModelSpec spec = models::ModelSpec::defaults(kind, o.M, o.K, patch[0], patch[1]);
  if (o.encoder == "resnet10") {
    spec.encoder = nn::EncoderConfig::resnet10(patch[0], patch[1]);
  } else if (o.encoder != "desk") {
    throw UsageError("--encoder must be desk or resnet10");
  }
  if (o.norm != "group" && o.norm != "batch") throw UsageError("--norm must be group or batch");
  spec.encoder.norm = o.norm == "group" ? nn::NormKind::group : nn::NormKind::batch;
  spec.attention_dim = o.attention_dim;
  try {
    spec.distill = mil::distill_mode_from_string(o.distill);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  spec.classifier_bias = !o.no_bias;
  spec.pseudo_bags = o.pseudo_bags;
  const auto rs = parse_extent(o.resample, 3, "--resample");
  spec.resample = {rs[2], rs[0], rs[1]};
  spec.seed = o.seed;
  spec.sync_encoder();
  spec.validate();
  return spec;
}

template <typename T>
int run_training(const models::ModelSpec& spec, const train::TrainConfig& cfg, const data::Manifest& manifest,
                 const fs::path& out) {
  auto model = models::make_model<T>(spec);
  train::TrainOptions topt;
  topt.out_dir = out;
  topt.on_epoch = [](const train::EpochRecord& r) {
    std::printf("epoch %d loss %.4f (subbag %.4f bag %.4f) val_auroc %.4f lr %g\n", r.epoch, r.train_loss,
                r.subbag_loss, r.bag_loss, r.val_auroc, r.learning_rate);
    std::fflush(stdout);
  };
  const auto result = train::train_model(*model, manifest, cfg, topt);
  std::printf("best epoch %d val_auroc %.4f%s\n", result.best_epoch, result.best_val_auroc,
              result.stopped_early ? " (early stop)" : "");
  std::printf("checkpoint %s\n", (out / "best.ckpt").string().c_str());
  return 0;
}

struct MetricRow {
  std::string run_id;
  std::string split;
  eval::MetricReport metrics;
  std::uint64_t seed = 0;
};

void append_metrics_csv(const fs::path& path, const std::vector<MetricRow>& rows) {
  const bool fresh = !fs::exists(path);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot write " + path.string());
  if (fresh) out << "run_id,split,accuracy,auroc,f1,n_pos,n_neg,seed\n";
  for (const auto& r : rows)
    out << r.run_id << ',' << r.split << ',' << format_double(r.metrics.accuracy) << ','
        << format_double(r.metrics.auroc) << ',' << format_double(r.metrics.f1) << ',' << r.metrics.n_pos << ','
        << r.metrics.n_neg << ',' << r.seed << '\n';
}

void print_table(const std::vector<MetricRow>& rows) {
  std::vector<double> acc, auc, f1;
  for (const auto& r : rows) {
    acc.push_back(r.metrics.accuracy);
    auc.push_back(r.metrics.auroc);
    f1.push_back(r.metrics.f1);
  }
  std::printf("%-9s %s\n", "metric", "mean ± std");
  std::printf("%-9s %s\n", "accuracy", eval::format_mean_std(eval::mean_std(acc)).c_str());
  std::printf("%-9s %s\n", "auroc", eval::format_mean_std(eval::mean_std(auc)).c_str());
  std::printf("%-9s %s\n", "f1", eval::format_mean_std(eval::mean_std(f1)).c_str());
}

template <typename T>
std::vector<MetricRow> evaluate_checkpoint(const std::string& path, const data::Manifest& manifest, data::Split split) {
  const auto ck = train::load_checkpoint<T>(path);
  auto model = train::model_from_checkpoint(ck);
  const auto volumes = train::load_split(manifest, split, *model);
  if (volumes.empty()) throw ConfigError("split " + data::to_string(split) + " is empty");
  const auto preds = train::predict_all(*model, volumes, ck.info.config.seed);
  MetricRow row;
  row.run_id = fs::path(path).parent_path().filename().string();
  if (row.run_id.empty()) row.run_id = fs::path(path).stem().string();
  row.split = data::to_string(split);
  row.metrics = eval::evaluate(preds, train::labels_of(volumes));
  row.seed = ck.info.config.seed;
  return {row};
}

template <typename T>
int run_heatmap(const HeatmapOptions& o, const data::Manifest& manifest) {
  const auto ck = train::load_checkpoint<T>(o.ckpt);
  if (ck.info.spec.kind != models::ModelKind::hamil)
    throw ConfigError("heatmaps need a hamil checkpoint, got " + models::to_string(ck.info.spec.kind));
  const auto model = train::model_from_checkpoint(ck);
  const auto& hamil = dynamic_cast<const models::HamilModel<T>&>(*model);
  const auto& entry = manifest.find(o.volume_id);
  const data::Volume volume = hamil.prepare(data::load_volume(manifest.resolve(entry)));
  const std::uint64_t seed =
      o.seed >= 0 ? static_cast<std::uint64_t>(o.seed) : train::eval_seed(ck.info.config.seed, volume.id);
  const auto trace = hamil.trace(volume, seed);

  std::vector<std::vector<double>> inst;
  for (const auto& s : trace.bag.subbags) inst.emplace_back(s.attention.data(), s.attention.data() + s.attention.size());
  const auto& sa = trace.bag.bag.subbag_attention;
  const std::vector<double> sub(sa.data(), sa.data() + sa.size());
  const auto record = eval::build_heatmap(volume.id, trace.batch, inst, sub, volume.rows, volume.cols);
  const auto files = eval::write_heatmap(record, o.out);
  const auto& best = record.max_patch_row();
  std::printf("prediction %.4f label %d\n", static_cast<double>(trace.bag.bag.prediction), volume.label);
  std::printf("wrote %zu files to %s\n", files.size(), o.out.c_str());
  std::printf("max attention patch: slice %d rows %d-%d cols %d-%d weight %s\n", best.slice, best.row,
              best.row + best.rows - 1, best.col, best.col + best.cols - 1, format_double(best.weight()).c_str());
  return 0;
}

}  // namespace

int parse_positive(const std::string& text, const char* flag) {
  try {
    const long long v = parse_int(text, flag);
    if (v < 1) throw UsageError(std::string(flag) + " values must be positive");
    return static_cast<int>(v);
  } catch (const InvalidInput&) {
    throw UsageError(std::string(flag) + ": '" + text + "' is not an integer");
  }
}

std::string manifest_path(const std::string& data) {
  if (data.empty()) throw UsageError("--data is required (or set HAMIL_DATA_ROOT)");
  const fs::path p(data);
  return fs::is_directory(p) ? (p / "manifest.txt").string() : p.string();
}

int cmd_gen_data(const GenDataOptions& o) {
  const auto dims = parse_extent(o.dims, 3, "--dims");
  data::PhantomConfig pc;
  pc.n_volumes = o.n;
  pc.rows = dims[0];
  pc.cols = dims[1];
  pc.slices = dims[2];
  pc.class_balance = o.balance;
  pc.defect_rate = o.defect_rate;
  pc.seed = o.seed;
  pc.validate();
  const fs::path out(o.out);
  if (fs::exists(out / "manifest.txt") && !o.force)
    throw ConfigError("dataset " + out.string() + " already exists; pass --force to regenerate");
  data::Manifest manifest = data::generate_synthetic_dataset(pc, out.string());
  manifest = data::split_dataset(manifest, data::kDefaultSplitRatios, o.seed);
  data::save_manifest(manifest, (out / "manifest.txt").string());
  std::printf("train %zu / val %zu / test %zu\n", manifest.in_split(data::Split::train).size(),
              manifest.in_split(data::Split::val).size(), manifest.in_split(data::Split::test).size());
  std::printf("manifest %s sha256 %s\n", (out / "manifest.txt").string().c_str(), manifest.digest().c_str());
  return 0;
}

int cmd_train(const TrainOptions& o) {
  if (o.precision != "float" && o.precision != "double") throw UsageError("--precision must be float or double");
  const models::ModelSpec spec = build_spec(o);
  train::TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.learning_rate = o.lr;
  cfg.eta_min = o.eta_min;
  cfg.patience = o.patience;
  cfg.bags_per_step = o.bags_per_step;
  cfg.loss_weight_lambda = o.lambda;
  cfg.seed = o.seed;
  cfg.workers = o.workers;
  cfg.validate();
  if (o.dry_run) {
    std::printf("M=%d K=%d lr=%s epochs=%d patience=%d\n", o.M, o.K, g_format(o.lr).c_str(), o.epochs, o.patience);
    std::printf("model %s\n", spec.descriptor().c_str());
    return 0;
  }

  const std::string mpath = manifest_path(o.data);
  const data::Manifest manifest = data::load_manifest(mpath);
  const fs::path out = o.out.empty() ? fs::path("runs") / (o.model + "-seed" + std::to_string(o.seed)) : fs::path(o.out);
  claim_directory(out, o.force, "run directory");

  std::printf("M=%d K=%d lr=%s epochs=%d patience=%d\n", o.M, o.K, g_format(o.lr).c_str(), o.epochs, o.patience);
  KeyValueDoc echo;
  echo.add("data", mpath);
  echo.add("manifest_sha256", manifest.digest());
  echo.add("precision", o.precision);
  spec.write(echo);
  cfg.write(echo);
  write_text_file((out / "config.txt").string(), echo.str());
  std::printf("model %s\nrun directory %s\n", spec.descriptor().c_str(), out.string().c_str());
  std::fflush(stdout);

  return o.precision == "double" ? run_training<double>(spec, cfg, manifest, out)
                                 : run_training<float>(spec, cfg, manifest, out);
}

int cmd_eval(const EvalOptions& o) {
  if (o.repeats < 0) throw UsageError("--repeats must be >= 0");
  const data::Split split = parse_split(o.split);
  const train::CheckpointInfo info = train::read_checkpoint_info(o.ckpt);
  std::string precision = o.precision.empty() ? (info.dtype == "float64-le" ? "double" : "float") : o.precision;
  if (precision != "float" && precision != "double") throw UsageError("--precision must be float or double");
  const data::Manifest manifest = data::load_manifest(manifest_path(o.data));
  check_split_discipline(manifest);

  std::vector<MetricRow> rows;
  if (o.repeats == 0) {
    rows = precision == "double" ? evaluate_checkpoint<double>(o.ckpt, manifest, split)
                                 : evaluate_checkpoint<float>(o.ckpt, manifest, split);
  } else {
    train::RepeatOptions ropt;
    ropt.split = split;
    ropt.double_precision = precision == "double";
    ropt.out_root = fs::path(o.ckpt).parent_path() / "repeats";
    claim_directory(ropt.out_root, false, "repeat directory");
    ropt.on_epoch = [](int run, const train::EpochRecord& r) {
      std::printf("run %d epoch %d loss %.4f val_auroc %.4f\n", run, r.epoch, r.train_loss, r.val_auroc);
      std::fflush(stdout);
    };
    const auto summary = train::run_repeats(manifest, info.spec, info.config, o.repeats, ropt);
    for (const auto& r : summary.runs)
      rows.push_back({"run_" + std::to_string(r.run), data::to_string(split), r.metrics, r.seed});
  }
  const fs::path csv = o.out.empty() ? fs::path(o.ckpt).parent_path() / "metrics.csv" : fs::path(o.out);
  append_metrics_csv(csv, rows);
  for (const auto& r : rows)
    std::printf("%s %s accuracy %.3f auroc %.3f f1 %.3f (n_pos %d n_neg %d seed %llu)\n", r.run_id.c_str(),
                r.split.c_str(), r.metrics.accuracy, r.metrics.auroc, r.metrics.f1, r.metrics.n_pos, r.metrics.n_neg,
                static_cast<unsigned long long>(r.seed));
  print_table(rows);
  std::printf("metrics appended to %s\n", csv.string().c_str());
  return 0;
}

int cmd_heatmap(const HeatmapOptions& o) {
  if (o.out.empty()) throw UsageError("--out is required");
  const data::Manifest manifest = data::load_manifest(manifest_path(o.data));
  const train::CheckpointInfo info = train::read_checkpoint_info(o.ckpt);
  return info.dtype == "float64-le" ? run_heatmap<double>(o, manifest) : run_heatmap<float>(o, manifest);
}

int cmd_flops(const FlopsOptions& o) {
  const auto patch = parse_extent(o.patch, 2, "--patch");
  const auto vol = parse_extent(o.volume_dims, 3, "--volume-dims");
  const Dims3 volume{vol[2], vol[0], vol[1]};
  std::vector<models::ModelKind> kinds;
  if (o.model == "all") {
    kinds = {models::ModelKind::hamil, models::ModelKind::abmil, models::ModelKind::dtfd,
             models::ModelKind::supervised3d};
  } else {
    try {
      kinds = {models::model_kind_from_string(o.model)};
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
  }
  std::vector<eval::FlopBreakdown> rows;
  for (auto k : kinds) {
    auto spec = models::ModelSpec::defaults(k, o.M, o.K, patch[0], patch[1]);
    spec.validate();
    rows.push_back(eval::model_flops(spec, volume));
  }
  std::printf("constants: 1 MAC = %lld FLOPs; conv = 2*k_d*k_h*k_w*C_in*C_out*D_out*H_out*W_out; linear = 2*in*out; "
              "norm/activation/pooling not counted\n",
              static_cast<long long>(eval::kFlopsPerMac));
  std::printf("input: M=%d K=%d patch=%dx%d volume=%dx%dx%d\n", o.M, o.K, patch[0], patch[1], vol[0], vol[1], vol[2]);
  std::printf("%-13s %18s %14s %18s %10s\n", "model", "patch_term", "head_term", "total", "GFLOP");
  for (const auto& r : rows)
    std::printf("%-13s %18lld %14lld %18lld %10.3f\n", r.model.c_str(), static_cast<long long>(r.patch_term),
                static_cast<long long>(r.head_term), static_cast<long long>(r.total()),
                static_cast<double>(r.total()) / 1e9);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows.size(); ++j)
      if (i != j)
        std::printf("ratio %s / %s = %.3f\n", rows[i].model.c_str(), rows[j].model.c_str(),
                    static_cast<double>(rows[i].total()) / static_cast<double>(rows[j].total()));
  return 0;
}

}  // namespace hamil::cli
