#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "meshvox/engine.hpp"
#include "meshvox/evalkit.hpp"
#include "meshvox/hpo.hpp"
#include "meshvox/metrics.hpp"
#include "meshvox/nifti.hpp"
#include "meshvox/parallel.hpp"
#include "meshvox/train.hpp"

namespace fs = std::filesystem;
using namespace meshvox;

namespace {

bool g_quiet = false;

void say(const std::string& msg) {
  if (!g_quiet) std::cout << msg << "\n";
}

bool wants_gzip(const std::string& path) { return path.ends_with(".gz"); }

std::vector<int> parse_dilations(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

std::string find_subject_file(const std::string& dir, const std::string& id,
                              const std::string& kind) {
  for (const char* ext : {".nii.gz", ".nii"}) {
    const fs::path p = fs::path(dir) / (id + "_" + kind + ext);
    if (fs::exists(p)) return p.string();
  }
  throw std::runtime_error("missing " + kind + " file for subject " + id + " in " + dir);
}

SampleList load_samples(const std::string& dir, const std::vector<std::string>& ids) {
  SampleList out;
  for (const auto& id : ids) {
    Sample s;
    const Volume v = nifti::read_volume(find_subject_file(dir, id, "img"));
    s.image = Tensor4<float>(1, v.shape[0], v.shape[1], v.shape[2]);
    std::copy(v.data.begin(), v.data.end(), s.image.data.begin());
    s.labels = nifti::read_mask(find_subject_file(dir, id, "lab"));
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<evalkit::SubjectRecord> read_subjects_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open subjects csv: " + path);
  std::vector<evalkit::SubjectRecord> out;
  std::string line;
  bool header = true;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b, c;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, c, ',');
    if (header) {
      if (a != "subject_id" || b != "lesion_vol" || c != "acquisition")
        throw std::runtime_error(
            "subjects csv must have header subject_id,lesion_vol,acquisition");
      header = false;
      continue;
    }
    out.push_back({a, std::stoll(b), c});
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"meshvox: dilated 3D convnet lesion segmentation toolkit"};
  app.require_subcommand(1);

  int threads = 0;
  std::uint64_t seed = 0;
  app.add_option("--threads", threads, "worker thread cap (default: all cores)");
  app.add_option("--seed", seed, "global random seed");
  app.add_flag("--quiet", g_quiet, "suppress progress output");

  // describe
  auto* describe = app.add_subcommand("describe", "architecture summary");
  int channels = 5;
  std::string dilations_csv;
  describe->add_option("--channels", channels, "channel width X")->required();
  describe->add_option("--dilations", dilations_csv, "9 comma-separated body dilations");

  // conform
  auto* conform_cmd = app.add_subcommand("conform", "resample to the canonical grid");
  std::string in_path, out_path;
  bool as_labels = false;
  conform_cmd->add_option("--in", in_path)->required();
  conform_cmd->add_option("--out", out_path)->required();
  conform_cmd->add_flag("--labels", as_labels, "nearest-neighbor label resampling");

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "segment a conformed volume");
  std::string model_path, logits_path;
  std::int64_t budget = 8ll << 30;
  infer_cmd->add_option("--model", model_path)->required();
  infer_cmd->add_option("--in", in_path)->required();
  infer_cmd->add_option("--out", out_path)->required();
  infer_cmd->add_option("--budget", budget, "activation memory budget in bytes");
  infer_cmd->add_option("--logits", logits_path, "write lesion-channel logits (f32 NIfTI)");

  // train
  auto* train_cmd = app.add_subcommand("train", "train on an inner fold");
  std::string config_path, data_dir, split_path;
  int outer_idx = 0, inner_idx = 0;
  train_cmd->add_option("--config", config_path)->required();
  train_cmd->add_option("--data", data_dir)->required();
  train_cmd->add_option("--split", split_path)->required();
  train_cmd->add_option("--out", out_path)->required();
  train_cmd->add_option("--outer", outer_idx, "outer fold index");
  train_cmd->add_option("--inner", inner_idx, "inner fold index");
  int train_channels = 5;
  std::string train_dilations;
  train_cmd->add_option("--channels", train_channels, "channel width X");
  train_cmd->add_option("--dilations", train_dilations, "9 comma-separated dilations");

  // metrics
  auto* metrics_cmd = app.add_subcommand("metrics", "compare prediction to ground truth");
  std::string pred_path, gt_path;
  bool json_out = false;
  metrics_cmd->add_option("--pred", pred_path)->required();
  metrics_cmd->add_option("--gt", gt_path)->required();
  metrics_cmd->add_flag("--json", json_out);

  // splits
  auto* splits_cmd = app.add_subcommand("splits", "stratified nested CV split plan");
  std::string subjects_path;
  int n_outer = 3, n_inner = 3;
  splits_cmd->add_option("--subjects", subjects_path)->required();
  splits_cmd->add_option("--outer", n_outer);
  splits_cmd->add_option("--inner", n_inner);
  splits_cmd->add_option("--out", out_path)->required();

  // stats
  auto* stats_cmd = app.add_subcommand("stats", "paired model comparison");
  std::string scores_path, baseline, csv_out;
  double alpha = 0.05;
  stats_cmd->add_option("--scores", scores_path)->required();
  stats_cmd->add_option("--baseline", baseline)->required();
  stats_cmd->add_option("--alpha", alpha);
  stats_cmd->add_option("--csv-out", csv_out, "also write the report as CSV");

  // hpo
  auto* hpo_cmd = app.add_subcommand("hpo", "ASHA hyperparameter search");
  std::string space_path, ledger_path;
  int budget_trials = 9, workers = 1, eta = 3;
  hpo_cmd->add_option("--space", space_path)->required();
  hpo_cmd->add_option("--budget", budget_trials);
  hpo_cmd->add_option("--workers", workers);
  hpo_cmd->add_option("--eta", eta);
  hpo_cmd->add_option("--out", ledger_path)->required();
  hpo_cmd->add_option("--data", data_dir, "train-based objective (else synthetic)");
  hpo_cmd->add_option("--split", split_path, "split plan for the train-based objective");
  int hpo_epoch_cap = 0;
  hpo_cmd->add_option("--epoch-cap", hpo_epoch_cap, "cap trial epochs (debug)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  if (threads > 0) set_thread_count(threads);

  try {
    if (describe->parsed()) {
      MeshNetConfig cfg = MeshNetConfig::canonical(channels);
      if (!dilations_csv.empty()) cfg.dilations = parse_dilations(dilations_csv);
      std::cout << "parameters: " << count_parameters(cfg) << "\n";
      std::cout << "receptive field: " << receptive_field(cfg) << "\n";
      std::cout << "memory plan (256^3 input):\n";
      for (std::int64_t b : {std::int64_t(512) << 20, std::int64_t(4) << 30,
                             std::int64_t(16) << 30}) {
        try {
          const MemoryPlan p = plan(cfg, kConformShape, b);
          std::cout << "  budget " << b << " B -> "
                    << (p.strategy == PlanStrategy::whole_volume ? "whole_volume" : "tiled")
                    << ", buffer " << p.buffer_bytes << " B x" << p.n_buffers;
          if (p.strategy == PlanStrategy::tiled)
            std::cout << ", tile " << p.tile << " halo " << p.halo;
          std::cout << ", est peak " << p.est_peak_bytes << " B\n";
        } catch (const std::exception& e) {
          std::cout << "  budget " << b << " B -> infeasible (" << e.what() << ")\n";
        }
      }
    } else if (conform_cmd->parsed()) {
      if (as_labels) {
        const LabelMask m = nifti::read_mask(in_path);
        const LabelMask c = conform_mask(m, kConformShape, kConformSpacing);
        nifti::write_mask(c, out_path, wants_gzip(out_path));
      } else {
        const Volume v = nifti::read_volume(in_path);
        const ConformResult c = conform(v, kConformShape, kConformSpacing);
        if (c.degenerate_rescale)
          std::cerr << "warning: constant input volume, output forced to zero\n";
        nifti::write_volume(c.volume, out_path, DtypeTag::f32, wants_gzip(out_path));
      }
      say("wrote " + out_path);
    } else if (infer_cmd->parsed()) {
      const Model<float> model = load_weights(model_path);
      const Volume v = nifti::read_volume(in_path);
      const MemoryPlan p = plan(model.config, v.shape, budget);
      const InferResult r = infer(model, v, p, !logits_path.empty());
      nifti::write_mask(r.labels, out_path, wants_gzip(out_path));
      if (!logits_path.empty()) {
        Volume lg;
        lg.shape = v.shape;
        lg.spacing = v.spacing;
        lg.affine = v.affine;
        const std::int64_t n = v.voxel_count();
        lg.data.assign(r.logits->data.begin() + n, r.logits->data.begin() + 2 * n);
        nifti::write_volume(lg, logits_path, DtypeTag::f32, wants_gzip(logits_path));
      }
      say("wrote " + out_path);
    } else if (train_cmd->parsed()) {
      TrainRunConfig cfg = load_train_config(config_path);
      if (seed) cfg.seed = seed;
      std::ifstream sf(split_path);
      if (!sf) throw std::runtime_error("cannot open split plan: " + split_path);
      std::stringstream ss;
      ss << sf.rdbuf();
      const evalkit::SplitPlan sp = evalkit::split_plan_from_json(ss.str());
      const auto& fold = sp.outer.at(outer_idx).inner.at(inner_idx);
      const SampleList tr = load_samples(data_dir, fold.train_ids);
      const SampleList va = load_samples(data_dir, fold.val_ids);
      MeshNetConfig arch = MeshNetConfig::canonical(train_channels);
      if (!train_dilations.empty()) arch.dilations = parse_dilations(train_dilations);
      const TrainResult res = train(arch, tr, va, cfg);
      save_weights(res.best_model, out_path);
      write_history_csv(res.history, out_path + ".history.csv");
      say("best val dice " + std::to_string(res.best_dice) + ", wrote " + out_path);
    } else if (metrics_cmd->parsed()) {
      const LabelMask pred = nifti::read_mask(pred_path);
      const LabelMask gt = nifti::read_mask(gt_path);
      const MetricsReport r = evaluate(pred, gt);
      if (json_out) {
        std::cout << to_json(r) << "\n";
      } else {
        std::cout << "dice " << r.dice.value << (r.dice.vacuous ? " (vacuous)" : "")
                  << "\navd " << r.avd << "\nmcc " << r.mcc << "\n";
      }
    } else if (splits_cmd->parsed()) {
      const auto records = read_subjects_csv(subjects_path);
      const evalkit::SplitPlan sp = evalkit::make_splits(records, n_outer, n_inner, seed);
      std::ofstream f(out_path);
      if (!f) throw std::runtime_error("cannot open for writing: " + out_path);
      f << evalkit::split_plan_to_json(sp);
      say("wrote " + out_path);
    } else if (stats_cmd->parsed()) {
      const auto rows = evalkit::read_scores_csv(scores_path);
      const evalkit::CompareReport rep = evalkit::compare_models(rows, baseline, alpha);
      std::cout << evalkit::report_to_text(rep);
      if (!csv_out.empty()) {
        std::ofstream f(csv_out);
        f << evalkit::report_to_csv(rep);
      }
    } else if (hpo_cmd->parsed()) {
      const hpo::SearchSpace space = hpo::load_space(space_path);
      hpo::Objective objective;
      if (!data_dir.empty()) {
        std::ifstream sf(split_path);
        if (!sf) throw std::runtime_error("cannot open split plan: " + split_path);
        std::stringstream ss;
        ss << sf.rdbuf();
        const evalkit::SplitPlan sp = evalkit::split_plan_from_json(ss.str());
        const auto folds = sp.outer.at(0).inner;
        objective = [&, folds](const hpo::TrialConfig& c, int fidelity,
                               std::uint64_t s) {
          double sum = 0.0;
          for (const auto& fold : folds) {
            TrainRunConfig cfg;
            cfg.epochs = hpo_epoch_cap > 0 ? std::min(hpo_epoch_cap, fidelity) : fidelity;
            cfg.seed = s;
            cfg.optimizer.lr_max = c.lr;
            cfg.optimizer.weight_decay = c.weight_decay;
            cfg.schedule.warmup_frac = c.warmup_frac;
            cfg.loss.weight_background = c.background_weight;
            const SampleList tr = load_samples(data_dir, fold.train_ids);
            const SampleList va = load_samples(data_dir, fold.val_ids);
            sum += train(MeshNetConfig::canonical(c.channels), tr, va, cfg).best_dice;
          }
          return sum / folds.size();
        };
      } else {
        // synthetic objective: smooth unimodal function of the config
        objective = [](const hpo::TrialConfig& c, int fidelity, std::uint64_t) {
          const double lr_term = -std::pow(std::log10(c.lr) + 3.0, 2.0);
          const double ch_term = -std::pow((c.channels - 16) / 8.0, 2.0);
          const double fid_term = 0.1 * std::log(static_cast<double>(fidelity));
          return lr_term + ch_term + fid_term + c.background_weight * 0.01;
        };
      }
      const hpo::SearchResult res =
          hpo::run_search(space, budget_trials, workers, seed, objective, eta, ledger_path);
      const auto& best = res.trials.at(res.best_trial_id);
      std::cout << "best trial " << best.trial_id << ": channels " << best.config.channels
                << ", lr " << best.config.lr << ", wd " << best.config.weight_decay
                << ", bg_w " << best.config.background_weight << ", warmup "
                << best.config.warmup_frac << ", score " << best.scores.back() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
