#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace meshvox {
namespace hpo {

struct SearchSpace {
  int channels_min = 5, channels_max = 21;        // integer-uniform, inclusive
  double lr_min = 1e-4, lr_max = 4e-2;            // log-uniform
  double wd_min = 1e-4, wd_max = 4e-2;            // log-uniform
  double bg_weight_min = 0.0, bg_weight_max = 1.0;
  std::vector<double> warmup_fracs{0.02, 0.1, 0.2};
  int fidelity_min = 15, fidelity_max = 50;       // epochs

  void validate() const;
};

struct TrialConfig {
  int channels = 0;
  double lr = 0, weight_decay = 0, background_weight = 0, warmup_frac = 0;
};

enum class TrialStatus { pending, running, completed_at_rung, promoted, stopped };

struct TrialRecord {
  int trial_id = -1;
  TrialConfig config;
  int rung = 0;
  int fidelity = 0;                // epochs granted at the current rung
  TrialStatus status = TrialStatus::pending;
  std::vector<double> scores;      // one per reached rung
  std::string error;
};

// Deterministic draw for (seed, trial_index); log-uniform params via exp of
// a uniform draw in log bounds.
TrialConfig sample(const SearchSpace& space, std::uint64_t seed, int trial_index);

// r_k = min(r_min * eta^k, r_max), truncated after r_max is reached.
std::vector<int> rung_fidelities(const SearchSpace& space, int eta);

struct AshaAction {
  enum Kind { start_new_trial, promote, stop } kind = start_new_trial;
  int trial_id = -1;
  int to_rung = -1;
};

// A completed trial at rung k is promotable iff its score is in the top
// ceil(n_k/eta) of all scores recorded at rung k. Promote the best such
// trial if any exists, otherwise start a new trial (never blocks on
// stragglers).
AshaAction asha_decide(const std::vector<TrialRecord>& state, int eta, int n_rungs);

using Objective =
    std::function<double(const TrialConfig&, int fidelity, std::uint64_t seed)>;

struct SearchResult {
  std::vector<TrialRecord> trials;
  int best_trial_id = -1;
};

// Runs ASHA with `workers` concurrent evaluators over `budget_trials` fresh
// trials. With workers=1 the ledger replays identically for the same seed.
// Objective failures mark the trial stopped and the search continues.
SearchResult run_search(const SearchSpace& space, int budget_trials, int workers,
                        std::uint64_t seed, const Objective& objective, int eta = 3,
                        const std::string& ledger_path = "");

SearchSpace load_space(const std::string& path);  // JSON, all fields optional

}  // namespace hpo
}  // namespace meshvox
