#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace meshvox {
namespace evalkit {

struct SubjectRecord {
  std::string subject_id;
  std::int64_t lesion_vol = 0;
  std::string acquisition;  // e.g. "accel" / "nonaccel"
};

// Lesion-size quintile cutoffs; intervals are lower-exclusive,
// upper-inclusive: (203, 33619], (33619, 67891], (67891, 128314],
// (128314, 363885].
struct StrataSpec {
  std::array<std::int64_t, 5> cutoffs{203, 33619, 67891, 128314, 363885};
};

// Returns the 1-based stratum index (1..4). Values outside the overall
// range clamp to the nearest stratum and set *clamped.
int stratum_of(std::int64_t lesion_vol, const StrataSpec& spec, bool* clamped = nullptr);

struct InnerFold {
  std::vector<std::string> train_ids, val_ids;
};
struct OuterFold {
  std::vector<std::string> train_ids, test_ids;
  std::vector<InnerFold> inner;
};
struct SplitPlan {
  std::vector<OuterFold> outer;
};

// Nested CV assignment: subjects are grouped into (stratum x acquisition)
// cells, each cell is shuffled with the seed and dealt round-robin, so every
// fold's per-cell count is within 1 of exact proportionality.
SplitPlan make_splits(const std::vector<SubjectRecord>& records, int n_outer, int n_inner,
                      std::uint64_t seed, const StrataSpec& spec = {});

std::string split_plan_to_json(const SplitPlan& plan);
SplitPlan split_plan_from_json(const std::string& text);

enum class WilcoxonMode { automatic, exact, normal };

struct WilcoxonResult {
  double p_value = 1.0;
  double statistic = 0.0;  // sum of positive ranks
  int n_used = 0;          // after dropping zero differences
  int n_zeros = 0;
  bool all_zero = false;
};

// Two-sided paired signed-rank test. Zero differences are dropped; ties get
// average ranks. Exact p by enumerating all 2^n sign assignments for
// n <= 20, else normal approximation with tie and continuity correction.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a,
                                    const std::vector<double>& b,
                                    WilcoxonMode mode = WilcoxonMode::automatic);

struct HolmResult {
  std::vector<double> adjusted;  // same order as input
  std::vector<bool> reject;
};

// Step-down Holm adjustment: sorted p_(i) -> max_{j<=i} (m-j+1)*p_(j),
// clipped at 1.
HolmResult holm(const std::vector<double>& p_values, double alpha);

struct ScoreRow {
  std::string subject_id;
  std::string model;
  double dice = 0, avd = 0, mcc = 0;
};

struct ModelSummary {
  std::string model;
  // per metric (dice, avd, mcc): mean, std, raw p, adjusted p, starred
  std::array<double, 3> mean{}, stddev{}, p_raw{}, p_adj{};
  std::array<bool, 3> starred{};
};

struct CompareReport {
  std::string baseline;
  double alpha = 0.05;
  std::vector<ModelSummary> models;
};

// Paired Wilcoxon of every model against the baseline per metric, Holm
// corrected across models within each metric. Throws if any
// (subject, model) cell is missing.
CompareReport compare_models(const std::vector<ScoreRow>& table,
                             const std::string& baseline_model, double alpha);

std::vector<ScoreRow> read_scores_csv(const std::string& path);
std::string report_to_csv(const CompareReport& r);
std::string report_to_text(const CompareReport& r);

}  // namespace evalkit
}  // namespace meshvox
