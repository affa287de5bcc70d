#pragma once

#include <cstdint>
#include <string>

namespace hamil::cli {

struct GenDataOptions {
  std::string out;
  int n = 200;
  std::string dims = "64x64x24";  // rows x cols x slices
  double balance = 0.5;
  double defect_rate = 0.5;
  std::uint64_t seed = 0;
  bool force = false;
};

struct TrainOptions {
  std::string data;
  std::string model = "hamil";
  int M = 6;
  int K = 60;
  std::string patch = "16x16";
  int epochs = 50;
  double lr = 1e-4;
  double eta_min = 0.0;
  int patience = 8;
  int bags_per_step = 1;
  double lambda = 1.0;
  std::uint64_t seed = 0;
  std::string out;
  std::string precision = "float";
  int workers = 1;
  int attention_dim = 64;
  std::string distill = "attention_weighted";
  bool no_bias = false;
  int pseudo_bags = 0;
  std::string resample = "96x96x32";  // rows x cols x slices
  std::string norm = "group";
  std::string encoder = "desk";
  bool force = false;
  bool dry_run = false;  // print the resolved settings and stop
};

struct EvalOptions {
  std::string ckpt;
  std::string data;
  std::string split = "test";
  int repeats = 0;
  std::string out;  // metrics CSV
  std::string precision;
};

struct HeatmapOptions {
  std::string ckpt;
  std::string data;
  std::string volume_id;
  std::string out;
  std::int64_t seed = -1;  // -1: the evaluation seed of the checkpoint's run
};

struct FlopsOptions {
  std::string model = "all";
  int M = 6;
  int K = 60;
  std::string patch = "48x48";
  std::string volume_dims = "240x240x44";  // rows x cols x slices
};

int cmd_gen_data(const GenDataOptions& o);
int cmd_train(const TrainOptions& o);
int cmd_eval(const EvalOptions& o);
int cmd_heatmap(const HeatmapOptions& o);
int cmd_flops(const FlopsOptions& o);

int parse_positive(const std::string& text, const char* flag);

// Directory holding manifest.txt, or a manifest file itself.
std::string manifest_path(const std::string& data);

}  // namespace hamil::cli

#include <stdexcept>

namespace hamil::cli {

// Bad flag values; reported with exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hamil::cli
