#include "commands.hpp"

#include "hamil/common/errors.hpp"
#include "hamil/common/text_format.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>

namespace {

void report(std::string_view kind, const std::string& message) {
  std::cerr << "error: kind=" << kind << " message=" << message << '\n';
}

// Fills options that were not given on the command line from a file of
// "key = value" lines. Keys are long flag names without the dashes.
void apply_config(CLI::App& sub, const std::string& path) {
  const auto doc = hamil::KeyValueDoc::parse(hamil::read_text_file(path), true);
  for (const auto& [key, value] : doc.entries()) {
    CLI::Option* opt = key == "config" ? nullptr : sub.get_option_no_throw("--" + key);
    if (!opt) throw hamil::cli::UsageError(path + ": unknown key '" + key + "'");
    if (opt->count() > 0) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

}  // namespace

int main(int argc, char** argv) {
  using namespace hamil::cli;
  CLI::App app{"Hierarchical attention MIL for volume quality classification"};
  app.require_subcommand(1);

  const char* env_root = std::getenv("HAMIL_DATA_ROOT");
  const std::string default_data = env_root ? env_root : "";

  GenDataOptions gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic phantom dataset and split it");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--n", gen.n, "Number of volumes")->capture_default_str();
  g->add_option("--dims", gen.dims, "Volume size RxCxS")->capture_default_str();
  g->add_option("--balance", gen.balance, "Fraction of diagnostic volumes")->capture_default_str();
  g->add_option("--defect-rate", gen.defect_rate, "Fraction of mask slices corrupted in non-diagnostic volumes")
      ->capture_default_str();
  g->add_option("--seed", gen.seed, "Master seed")->capture_default_str();
  g->add_flag("--force", gen.force, "Overwrite an existing dataset");

  TrainOptions tr;
  tr.data = default_data;
  auto* t = app.add_subcommand("train", "Train one model");
  std::string train_config;
  t->add_option("--config", train_config, "Config file of key = value lines (flags override it)");
  t->add_option("--data", tr.data, "Dataset directory or manifest (default $HAMIL_DATA_ROOT)");
  t->add_option("--model", tr.model, "Model family")
      ->check(CLI::IsMember({"hamil", "abmil", "dtfd", "supervised3d"}))
      ->capture_default_str();
  t->add_option("--M", tr.M, "Sub-bags (slices) per volume")->capture_default_str();
  t->add_option("--K", tr.K, "Patches per sub-bag")->capture_default_str();
  t->add_option("--patch", tr.patch, "Patch size RxC")->capture_default_str();
  t->add_option("--epochs", tr.epochs, "Maximum epochs")->capture_default_str();
  t->add_option("--lr", tr.lr, "Initial learning rate")->capture_default_str();
  t->add_option("--eta-min", tr.eta_min, "Cosine schedule floor")->capture_default_str();
  t->add_option("--patience", tr.patience, "Early-stopping patience (epochs)")->capture_default_str();
  t->add_option("--bags-per-step", tr.bags_per_step, "Bags averaged per optimizer step")->capture_default_str();
  t->add_option("--lambda", tr.lambda, "Weight of the bag loss term")->capture_default_str();
  t->add_option("--seed", tr.seed, "Run seed")->capture_default_str();
  t->add_option("--out", tr.out, "Run directory (default runs/<model>-seed<seed>)");
  t->add_option("--precision", tr.precision, "float or double")
      ->check(CLI::IsMember({"float", "double"}))
      ->capture_default_str();
  t->add_option("--workers", tr.workers, "Encoder threads")->capture_default_str();
  t->add_option("--attention-dim", tr.attention_dim, "Attention hidden size D")->capture_default_str();
  t->add_option("--distill", tr.distill, "attention_weighted or mean")->capture_default_str();
  t->add_flag("--no-bias", tr.no_bias, "Drop the classifier bias");
  t->add_option("--pseudo-bags", tr.pseudo_bags, "dtfd pseudo-bag count (0: M)")->capture_default_str();
  t->add_option("--resample", tr.resample, "supervised3d input RxCxS")->capture_default_str();
  t->add_option("--norm", tr.norm, "group or batch")->capture_default_str();
  t->add_option("--encoder", tr.encoder, "desk or resnet10")->capture_default_str();
  t->add_flag("--force", tr.force, "Reuse a non-empty run directory");
  t->add_flag("--dry-run", tr.dry_run, "Print the resolved settings without training");

  EvalOptions ev;
  ev.data = default_data;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint, or retrain it n times with --repeats");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint file")->required();
  e->add_option("--data", ev.data, "Dataset directory or manifest (default $HAMIL_DATA_ROOT)");
  e->add_option("--split", ev.split, "train, val or test")->capture_default_str();
  e->add_option("--repeats", ev.repeats, "Retrain and evaluate n times with seeds seed..seed+n-1")
      ->capture_default_str();
  e->add_option("--out", ev.out, "Metrics CSV (default <ckpt dir>/metrics.csv)");
  e->add_option("--precision", ev.precision, "float or double (default: checkpoint's)");

  HeatmapOptions hm;
  hm.data = default_data;
  auto* h = app.add_subcommand("heatmap", "Export attention heatmaps for one volume");
  h->add_option("--ckpt", hm.ckpt, "HAMIL checkpoint")->required();
  h->add_option("--data", hm.data, "Dataset directory or manifest (default $HAMIL_DATA_ROOT)");
  h->add_option("--volume-id", hm.volume_id, "Volume id from the manifest")->required();
  h->add_option("--out", hm.out, "Output directory")->required();
  h->add_option("--seed", hm.seed, "Sampling seed (default: the evaluation seed)");

  FlopsOptions fl;
  auto* f = app.add_subcommand("flops", "Analytic FLOP report");
  f->add_option("--model", fl.model, "all or one family")
      ->check(CLI::IsMember({"all", "hamil", "abmil", "dtfd", "supervised3d"}))
      ->capture_default_str();
  f->add_option("--M", fl.M, "Sub-bags per volume")->capture_default_str();
  f->add_option("--K", fl.K, "Patches per sub-bag")->capture_default_str();
  f->add_option("--patch", fl.patch, "Patch size RxC")->capture_default_str();
  f->add_option("--volume-dims", fl.volume_dims, "3D input RxCxS")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    report("usage", ex.what());
    std::cerr << "run '" << app.get_name() << " --help' for usage\n";
    return 2;
  }

  try {
    if (g->parsed()) return cmd_gen_data(gen);
    if (t->parsed()) {
      if (!train_config.empty()) apply_config(*t, train_config);
      return cmd_train(tr);
    }
    if (e->parsed()) return cmd_eval(ev);
    if (h->parsed()) return cmd_heatmap(hm);
    if (f->parsed()) return cmd_flops(fl);
  } catch (const UsageError& ex) {
    report("usage", ex.what());
    return 2;
  } catch (const CLI::Error& ex) {
    report("usage", ex.what());
    return 2;
  } catch (const hamil::Error& ex) {
    report(ex.kind(), ex.what());
    return 1;
  } catch (const std::exception& ex) {
    report("runtime", ex.what());
    return 1;
  }
  return 1;
}
