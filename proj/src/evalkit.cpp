#include "meshvox/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace meshvox {
namespace evalkit {

int stratum_of(std::int64_t lesion_vol, const StrataSpec& spec, bool* clamped) {
  for (std::size_t i = 1; i < spec.cutoffs.size(); ++i)
    if (spec.cutoffs[i - 1] >= spec.cutoffs[i])
      throw std::invalid_argument("StrataSpec: cutoffs must be strictly increasing");
  if (clamped) *clamped = false;
  if (lesion_vol <= spec.cutoffs.front()) {
    if (clamped) *clamped = true;
    return 1;
  }
  for (std::size_t i = 1; i < spec.cutoffs.size(); ++i)
    if (lesion_vol <= spec.cutoffs[i]) return static_cast<int>(i);
  if (clamped) *clamped = true;
  return static_cast<int>(spec.cutoffs.size()) - 1;
}

SplitPlan make_splits(const std::vector<SubjectRecord>& records, int n_outer, int n_inner,
                      std::uint64_t seed, const StrataSpec& spec) {
  if (records.empty()) throw std::invalid_argument("make_splits: no subjects");
  if (n_outer < 2 || n_inner < 2)
    throw std::invalid_argument("make_splits: need at least 2 outer and inner folds");

  // (stratum, acquisition) cells in deterministic key order
  std::map<std::pair<int, std::string>, std::vector<std::string>> cells;
  for (const auto& r : records)
    cells[{stratum_of(r.lesion_vol, spec), r.acquisition}].push_back(r.subject_id);

  std::mt19937_64 rng(seed);
  for (auto& [key, ids] : cells) {
    std::sort(ids.begin(), ids.end());
    std::shuffle(ids.begin(), ids.end(), rng);
  }

  SplitPlan plan;
  plan.outer.resize(n_outer);
  std::map<std::string, int> outer_of;
  for (auto& [key, ids] : cells)
    for (std::size_t i = 0; i < ids.size(); ++i)
      outer_of[ids[i]] = static_cast<int>(i % n_outer);

  for (int f = 0; f < n_outer; ++f) {
    OuterFold& of = plan.outer[f];
    for (auto& [key, ids] : cells) {
      // per-cell round robin of the outer-train members into inner val groups
      std::vector<std::string> cell_train;
      for (const auto& id : ids) {
        if (outer_of[id] == f)
          of.test_ids.push_back(id);
        else {
          of.train_ids.push_back(id);
          cell_train.push_back(id);
        }
      }
      of.inner.resize(n_inner);
      for (std::size_t i = 0; i < cell_train.size(); ++i)
        of.inner[i % n_inner].val_ids.push_back(cell_train[i]);
    }
    for (int j = 0; j < n_inner; ++j) {
      std::set<std::string> val(of.inner[j].val_ids.begin(), of.inner[j].val_ids.end());
      for (const auto& id : of.train_ids)
        if (!val.count(id)) of.inner[j].train_ids.push_back(id);
    }
  }
  return plan;
}

std::string split_plan_to_json(const SplitPlan& plan) {
  nlohmann::json j;
  j["outer"] = nlohmann::json::array();
  for (const auto& of : plan.outer) {
    nlohmann::json o{{"train", of.train_ids}, {"test", of.test_ids}};
    o["inner"] = nlohmann::json::array();
    for (const auto& in : of.inner)
      o["inner"].push_back({{"train", in.train_ids}, {"val", in.val_ids}});
    j["outer"].push_back(std::move(o));
  }
  return j.dump(2);
}

SplitPlan split_plan_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  SplitPlan plan;
  for (const auto& o : j.at("outer")) {
    OuterFold of;
    of.train_ids = o.at("train").get<std::vector<std::string>>();
    of.test_ids = o.at("test").get<std::vector<std::string>>();
    for (const auto& in : o.at("inner")) {
      InnerFold f;
      f.train_ids = in.at("train").get<std::vector<std::string>>();
      f.val_ids = in.at("val").get<std::vector<std::string>>();
      of.inner.push_back(std::move(f));
    }
    plan.outer.push_back(std::move(of));
  }
  return plan;
}

namespace {

// Ranks of |d| with average ranks for ties.
std::vector<double> signed_ranks(const std::vector<double>& diffs) {
  const std::size_t n = diffs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(diffs[a]) < std::abs(diffs[b]);
  });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n &&
           std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]]))
      ++j;
    const double avg = (static_cast<double>(i) + j) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double normal_sf(double z) { return std::erfc(z / std::sqrt(2.0)) / 2.0; }

}  // namespace

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a,
                                    const std::vector<double>& b, WilcoxonMode mode) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("wilcoxon: inputs must be equal-length and non-empty");

  WilcoxonResult res;
  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d == 0.0)
      ++res.n_zeros;
    else
      diffs.push_back(d);
  }
  res.n_used = static_cast<int>(diffs.size());
  if (diffs.empty()) {
    res.all_zero = true;
    res.p_value = 1.0;
    return res;
  }

  const std::vector<double> ranks = signed_ranks(diffs);
  double w_pos = 0.0;
  for (std::size_t i = 0; i < diffs.size(); ++i)
    if (diffs[i] > 0) w_pos += ranks[i];
  res.statistic = w_pos;

  const int n = res.n_used;
  const bool exact =
      mode == WilcoxonMode::exact || (mode == WilcoxonMode::automatic && n <= 20);
  if (exact) {
    if (n > 25) throw std::invalid_argument("wilcoxon: exact mode limited to n <= 25");
    const std::uint64_t total = 1ull << n;
    std::uint64_t le = 0, ge = 0;
    constexpr double tol = 1e-9;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
      double w = 0.0;
      for (int i = 0; i < n; ++i)
        if (mask & (1ull << i)) w += ranks[i];
      if (w <= w_pos + tol) ++le;
      if (w >= w_pos - tol) ++ge;
    }
    const double p_le = static_cast<double>(le) / total;
    const double p_ge = static_cast<double>(ge) / total;
    res.p_value = std::min(1.0, 2.0 * std::min(p_le, p_ge));
  } else {
    const double mu = n * (n + 1) / 4.0;
    double tie_term = 0.0;
    std::map<double, int> tie_counts;
    for (double r : ranks) ++tie_counts[r];
    for (const auto& [r, t] : tie_counts)
      if (t > 1) tie_term += (static_cast<double>(t) * t * t - t) / 48.0;
    const double var = n * (n + 1) * (2.0 * n + 1) / 24.0 - tie_term;
    const double dev = w_pos - mu;
    const double cc = dev > 0 ? -0.5 : (dev < 0 ? 0.5 : 0.0);
    const double z = (dev + cc) / std::sqrt(var);
    res.p_value = std::min(1.0, 2.0 * normal_sf(std::abs(z)));
  }
  return res;
}

HolmResult holm(const std::vector<double>& p_values, double alpha) {
  const std::size_t m = p_values.size();
  for (double p : p_values)
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("holm: p-values must be in [0,1]");
  HolmResult res;
  res.adjusted.resize(m);
  res.reject.assign(m, false);
  if (m == 0) return res;

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });

  double running = 0.0;
  bool rejecting = true;
  for (std::size_t i = 0; i < m; ++i) {
    const double adj = std::min(1.0, (m - i) * p_values[order[i]]);
    running = std::max(running, adj);
    res.adjusted[order[i]] = running;
    if (rejecting && running <= alpha)
      res.reject[order[i]] = true;
    else
      rejecting = false;  // step-down stops at the first failure
  }
  return res;
}

CompareReport compare_models(const std::vector<ScoreRow>& table,
                             const std::string& baseline_model, double alpha) {
  std::set<std::string> subjects, models;
  std::map<std::pair<std::string, std::string>, std::array<double, 3>> cell;
  for (const auto& row : table) {
    subjects.insert(row.subject_id);
    models.insert(row.model);
    cell[{row.subject_id, row.model}] = {row.dice, row.avd, row.mcc};
  }
  if (!models.count(baseline_model))
    throw std::invalid_argument("compare_models: baseline not present: " + baseline_model);

  std::vector<std::string> missing;
  for (const auto& s : subjects)
    for (const auto& m : models)
      if (!cell.count({s, m})) missing.push_back(s + "/" + m);
  if (!missing.empty()) {
    std::string msg = "compare_models: missing cells:";
    for (const auto& m : missing) msg += " " + m;
    throw std::invalid_argument(msg);
  }

  CompareReport rep;
  rep.baseline = baseline_model;
  rep.alpha = alpha;
  for (const auto& m : models) {
    ModelSummary sum;
    sum.model = m;
    rep.models.push_back(sum);
  }

  for (int metric = 0; metric < 3; ++metric) {
    std::vector<double> base_scores;
    for (const auto& s : subjects) base_scores.push_back(cell[{s, baseline_model}][metric]);

    std::vector<double> family_p;
    std::vector<std::size_t> family_idx;
    for (std::size_t mi = 0; mi < rep.models.size(); ++mi) {
      auto& sum = rep.models[mi];
      std::vector<double> scores;
      for (const auto& s : subjects) scores.push_back(cell[{s, sum.model}][metric]);

      const double n = static_cast<double>(scores.size());
      const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / n;
      double var = 0.0;
      for (double v : scores) var += (v - mean) * (v - mean);
      sum.mean[metric] = mean;
      sum.stddev[metric] = n > 1 ? std::sqrt(var / (n - 1)) : 0.0;

      if (sum.model == baseline_model) {
        sum.p_raw[metric] = 1.0;
        sum.p_adj[metric] = 1.0;
        continue;
      }
      sum.p_raw[metric] = wilcoxon_signed_rank(scores, base_scores).p_value;
      family_p.push_back(sum.p_raw[metric]);
      family_idx.push_back(mi);
    }
    const HolmResult hr = holm(family_p, alpha);
    for (std::size_t k = 0; k < family_idx.size(); ++k) {
      rep.models[family_idx[k]].p_adj[metric] = hr.adjusted[k];
      rep.models[family_idx[k]].starred[metric] = hr.reject[k];
    }
  }
  return rep;
}

std::vector<ScoreRow> read_scores_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open scores csv: " + path);
  std::vector<ScoreRow> rows;
  std::string line;
  bool header = true;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (header) {
      if (fields.size() != 5 || fields[0] != "subject_id" || fields[1] != "model")
        throw std::runtime_error(
            "scores csv must have header subject_id,model,dice,avd,mcc");
      header = false;
      continue;
    }
    if (fields.size() != 5) throw std::runtime_error("malformed scores row: " + line);
    rows.push_back({fields[0], fields[1], std::stod(fields[2]), std::stod(fields[3]),
                    std::stod(fields[4])});
  }
  return rows;
}

namespace {
const char* kMetricNames[3] = {"dice", "avd", "mcc"};
}

std::string report_to_csv(const CompareReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << "model,metric,mean,std,p_raw,p_holm,significant\n";
  for (const auto& m : r.models)
    for (int k = 0; k < 3; ++k)
      os << m.model << ',' << kMetricNames[k] << ',' << m.mean[k] << ',' << m.stddev[k]
         << ',' << m.p_raw[k] << ',' << m.p_adj[k] << ',' << (m.starred[k] ? 1 : 0)
         << '\n';
  return os.str();
}

std::string report_to_text(const CompareReport& r) {
  std::ostringstream os;
  os << "baseline: " << r.baseline << "  (alpha " << r.alpha << ", * = Holm-significant)\n";
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-20s %-16s %-16s %-16s\n", "model", "DICE", "AVD",
                "MCC");
  os << buf;
  for (const auto& m : r.models) {
    std::string cells[3];
    for (int k = 0; k < 3; ++k) {
      char c[48];
      std::snprintf(c, sizeof(c), "%.3f (%.3f)%s", m.mean[k], m.stddev[k],
                    m.starred[k] ? "*" : "");
      cells[k] = c;
    }
    std::snprintf(buf, sizeof(buf), "%-20s %-16s %-16s %-16s\n", m.model.c_str(),
                  cells[0].c_str(), cells[1].c_str(), cells[2].c_str());
    os << buf;
  }
  return os.str();
}

}  // namespace evalkit
}  // namespace meshvox
