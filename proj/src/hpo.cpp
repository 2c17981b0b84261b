#include "meshvox/hpo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace meshvox {
namespace hpo {

void SearchSpace::validate() const {
  if (channels_min > channels_max || lr_min > lr_max || wd_min > wd_max ||
      bg_weight_min > bg_weight_max)
    throw std::invalid_argument("SearchSpace: inverted bounds");
  if (lr_min <= 0 || wd_min <= 0)
    throw std::invalid_argument("SearchSpace: log-uniform bounds must be positive");
  if (warmup_fracs.empty())
    throw std::invalid_argument("SearchSpace: warmup_fracs empty");
  if (fidelity_min < 1 || fidelity_min >= fidelity_max)
    throw std::invalid_argument("SearchSpace: fidelity min must be < max");
}

TrialConfig sample(const SearchSpace& space, std::uint64_t seed, int trial_index) {
  space.validate();
  std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(trial_index) + 1);
  TrialConfig c;
  c.channels = std::uniform_int_distribution<int>(space.channels_min, space.channels_max)(rng);
  auto log_uniform = [&](double lo, double hi) {
    if (lo == hi) return lo;
    return std::exp(std::uniform_real_distribution<double>(std::log(lo), std::log(hi))(rng));
  };
  c.lr = log_uniform(space.lr_min, space.lr_max);
  c.weight_decay = log_uniform(space.wd_min, space.wd_max);
  c.background_weight = space.bg_weight_min == space.bg_weight_max
                            ? space.bg_weight_min
                            : std::uniform_real_distribution<double>(
                                  space.bg_weight_min, space.bg_weight_max)(rng);
  c.warmup_frac = space.warmup_fracs[std::uniform_int_distribution<std::size_t>(
      0, space.warmup_fracs.size() - 1)(rng)];
  return c;
}

std::vector<int> rung_fidelities(const SearchSpace& space, int eta) {
  if (eta < 2) throw std::invalid_argument("rung_fidelities: eta must be >= 2");
  std::vector<int> rungs;
  long r = space.fidelity_min;
  while (true) {
    const int fid = static_cast<int>(std::min<long>(r, space.fidelity_max));
    rungs.push_back(fid);
    if (fid >= space.fidelity_max) break;
    r *= eta;
  }
  return rungs;
}

AshaAction asha_decide(const std::vector<TrialRecord>& state, int eta, int n_rungs) {
  // candidates per rung: completed there, not yet promoted
  int best_trial = -1;
  int best_rung = -1;
  double best_score = 0.0;
  for (int k = n_rungs - 2; k >= 0; --k) {
    std::vector<double> rung_scores;
    for (const auto& t : state)
      if (static_cast<int>(t.scores.size()) > k) rung_scores.push_back(t.scores[k]);
    if (rung_scores.empty()) continue;
    const int keep = static_cast<int>(
        std::ceil(static_cast<double>(rung_scores.size()) / eta));
    std::sort(rung_scores.rbegin(), rung_scores.rend());
    const double threshold = rung_scores[keep - 1];

    for (const auto& t : state) {
      if (t.status != TrialStatus::completed_at_rung || t.rung != k) continue;
      const double s = t.scores[k];
      if (s >= threshold && (best_trial < 0 || s > best_score)) {
        best_trial = t.trial_id;
        best_rung = k;
        best_score = s;
      }
    }
    if (best_trial >= 0) break;  // promote from the highest rung with a candidate
  }
  if (best_trial >= 0)
    return {AshaAction::promote, best_trial, best_rung + 1};
  return {AshaAction::start_new_trial, -1, 0};
}

namespace {

const char* status_name(TrialStatus s) {
  switch (s) {
    case TrialStatus::pending: return "pending";
    case TrialStatus::running: return "running";
    case TrialStatus::completed_at_rung: return "completed_at_rung";
    case TrialStatus::promoted: return "promoted";
    case TrialStatus::stopped: return "stopped";
  }
  return "?";
}

}  // namespace

SearchResult run_search(const SearchSpace& space, int budget_trials, int workers,
                        std::uint64_t seed, const Objective& objective, int eta,
                        const std::string& ledger_path) {
  space.validate();
  if (budget_trials < 1) throw std::invalid_argument("run_search: budget must be >= 1");
  if (workers < 1) workers = 1;
  const std::vector<int> rungs = rung_fidelities(space, eta);
  const int n_rungs = static_cast<int>(rungs.size());

  std::vector<TrialRecord> trials;
  int started = 0;
  int in_flight = 0;
  std::mutex mu;
  std::condition_variable cv;

  std::ofstream ledger;
  if (!ledger_path.empty()) {
    ledger.open(ledger_path, std::ios::app);
    if (!ledger) throw std::runtime_error("cannot open ledger: " + ledger_path);
    ledger << "trial_id,rung,channels,lr,weight_decay,background_weight,warmup_frac,"
              "fidelity,score,status,wall_time\n";
  }
  const auto t0 = std::chrono::steady_clock::now();
  auto log_row = [&](const TrialRecord& t, double score) {
    if (!ledger.is_open()) return;
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ledger << t.trial_id << ',' << t.rung << ',' << t.config.channels << ','
           << t.config.lr << ',' << t.config.weight_decay << ','
           << t.config.background_weight << ',' << t.config.warmup_frac << ','
           << t.fidelity << ',' << score << ',' << status_name(t.status) << ',' << wall
           << '\n';
    ledger.flush();
  };

  auto worker_loop = [&] {
    std::unique_lock<std::mutex> lock(mu);
    while (true) {
      AshaAction action = asha_decide(trials, eta, n_rungs);
      int tid = -1;
      if (action.kind == AshaAction::promote) {
        tid = action.trial_id;
        auto& t = trials[tid];
        t.status = TrialStatus::running;
        t.rung = action.to_rung;
        t.fidelity = rungs[action.to_rung];
      } else if (started < budget_trials) {
        tid = started++;
        TrialRecord t;
        t.trial_id = tid;
        t.config = sample(space, seed, tid);
        t.rung = 0;
        t.fidelity = rungs[0];
        t.status = TrialStatus::running;
        trials.push_back(std::move(t));
      } else {
        if (in_flight == 0) {
          cv.notify_all();
          return;
        }
        cv.wait(lock);
        continue;
      }
      ++in_flight;
      TrialRecord snapshot = trials[tid];
      lock.unlock();

      double score = 0.0;
      bool failed = false;
      std::string err;
      try {
        score = objective(snapshot.config, snapshot.fidelity,
                          seed * 1000003ull + static_cast<std::uint64_t>(tid));
      } catch (const std::exception& e) {
        failed = true;
        err = e.what();
      }

      lock.lock();
      auto& t = trials[tid];
      --in_flight;
      if (failed) {
        t.status = TrialStatus::stopped;
        t.error = err;
        log_row(t, 0.0);
      } else {
        t.scores.resize(t.rung + 1, 0.0);
        t.scores[t.rung] = score;
        t.status = TrialStatus::completed_at_rung;
        log_row(t, score);
      }
      cv.notify_all();
    }
  };

  if (workers == 1) {
    worker_loop();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker_loop);
    for (auto& th : pool) th.join();
  }

  SearchResult res;
  res.trials = trials;
  double best = -1.0;
  int best_rung = -1;
  for (const auto& t : trials) {
    if (t.scores.empty()) continue;
    const int k = static_cast<int>(t.scores.size()) - 1;
    const double s = t.scores[k];
    if (k > best_rung || (k == best_rung && s > best)) {
      best_rung = k;
      best = s;
      res.best_trial_id = t.trial_id;
    }
  }
  return res;
}

SearchSpace load_space(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open search space: " + path);
  nlohmann::json j;
  f >> j;
  SearchSpace s;
  s.channels_min = j.value("channels_min", s.channels_min);
  s.channels_max = j.value("channels_max", s.channels_max);
  s.lr_min = j.value("lr_min", s.lr_min);
  s.lr_max = j.value("lr_max", s.lr_max);
  s.wd_min = j.value("wd_min", s.wd_min);
  s.wd_max = j.value("wd_max", s.wd_max);
  s.bg_weight_min = j.value("bg_weight_min", s.bg_weight_min);
  s.bg_weight_max = j.value("bg_weight_max", s.bg_weight_max);
  if (j.contains("warmup_fracs"))
    s.warmup_fracs = j["warmup_fracs"].get<std::vector<double>>();
  s.fidelity_min = j.value("fidelity_min", s.fidelity_min);
  s.fidelity_max = j.value("fidelity_max", s.fidelity_max);
  s.validate();
  return s;
}

}  // namespace hpo
}  // namespace meshvox
