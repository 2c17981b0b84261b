#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "meshvox/evalkit.hpp"

using namespace meshvox::evalkit;
namespace fs = std::filesystem;

namespace {

// Independent exact two-sided signed-rank p: stable-sorted pairs for average
// ranks, full 2^n sign enumeration in double.
double oracle_wilcoxon_p(std::vector<double> a, std::vector<double> b) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  const int n = static_cast<int>(d.size());
  if (n == 0) return 1.0;

  std::vector<std::pair<double, int>> mag(n);
  for (int i = 0; i < n; ++i) mag[i] = {std::abs(d[i]), i};
  std::stable_sort(mag.begin(), mag.end());
  std::vector<double> rank(n);
  for (int i = 0; i < n;) {
    int j = i;
    while (j + 1 < n && mag[j + 1].first == mag[i].first) ++j;
    for (int k = i; k <= j; ++k) rank[mag[k].second] = (i + j) / 2.0 + 1.0;
    i = j + 1;
  }
  double w = 0;
  for (int i = 0; i < n; ++i)
    if (d[i] > 0) w += rank[i];

  long long le = 0, ge = 0;
  const long long total = 1ll << n;
  for (long long mask = 0; mask < total; ++mask) {
    double s = 0;
    for (int i = 0; i < n; ++i)
      if (mask >> i & 1) s += rank[i];
    if (s <= w + 1e-9) ++le;
    if (s >= w - 1e-9) ++ge;
  }
  const double p = 2.0 * std::min(le, ge) / static_cast<double>(total);
  return std::min(1.0, p);
}

}  // namespace

TEST_CASE("stratum boundaries are lower-exclusive, upper-inclusive") {
  const StrataSpec spec;
  bool clamped = false;
  CHECK(stratum_of(33619, spec, &clamped) == 1);
  CHECK_FALSE(clamped);
  CHECK(stratum_of(33620, spec) == 2);
  CHECK(stratum_of(50000, spec) == 2);
  CHECK(stratum_of(67891, spec) == 2);
  CHECK(stratum_of(67892, spec) == 3);
  CHECK(stratum_of(128314, spec) == 3);
  CHECK(stratum_of(128315, spec) == 4);
  CHECK(stratum_of(363885, spec) == 4);
  CHECK(stratum_of(204, spec, &clamped) == 1);
  CHECK_FALSE(clamped);

  // outside the fitted range clamps and flags
  CHECK(stratum_of(10, spec, &clamped) == 1);
  CHECK(clamped);
  CHECK(stratum_of(999999, spec, &clamped) == 4);
  CHECK(clamped);

  StrataSpec bad;
  bad.cutoffs = {5, 4, 6, 7, 8};
  CHECK_THROWS(stratum_of(100, bad));
}

TEST_CASE("nine identical-cell subjects split 3/3/3") {
  std::vector<SubjectRecord> recs;
  for (int i = 0; i < 9; ++i)
    recs.push_back({"s" + std::to_string(i), 50000, "accel"});
  const SplitPlan plan = make_splits(recs, 3, 2, 11);
  REQUIRE(plan.outer.size() == 3);
  std::set<std::string> seen;
  for (const auto& of : plan.outer) {
    CHECK(of.test_ids.size() == 3);
    CHECK(of.train_ids.size() == 6);
    for (const auto& id : of.test_ids) CHECK(seen.insert(id).second);
  }
  CHECK(seen.size() == 9);
}

TEST_CASE("224 subjects stay stratum/acquisition balanced within 1") {
  std::vector<SubjectRecord> recs;
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::int64_t> vol(204, 363885);
  for (int i = 0; i < 224; ++i) {
    SubjectRecord r;
    r.subject_id = "sub" + std::to_string(1000 + i);
    r.lesion_vol = vol(rng);
    r.acquisition = (i % 3 == 0) ? "accel" : "nonaccel";
    recs.push_back(r);
  }
  const StrataSpec spec;
  const int n_outer = 4, n_inner = 3;
  const SplitPlan plan = make_splits(recs, n_outer, n_inner, 7);
  REQUIRE(plan.outer.size() == n_outer);

  std::map<std::string, std::pair<int, std::string>> cell_of;
  for (const auto& r : recs)
    cell_of[r.subject_id] = {stratum_of(r.lesion_vol, spec), r.acquisition};

  std::set<std::string> all_test;
  for (const auto& of : plan.outer) {
    CHECK(of.train_ids.size() + of.test_ids.size() == recs.size());
    for (const auto& id : of.test_ids) CHECK(all_test.insert(id).second);

    // each inner val group partitions the outer-train set
    REQUIRE(of.inner.size() == n_inner);
    std::set<std::string> val_seen;
    for (const auto& in : of.inner) {
      CHECK(in.train_ids.size() + in.val_ids.size() == of.train_ids.size());
      for (const auto& id : in.val_ids) CHECK(val_seen.insert(id).second);
    }
    CHECK(val_seen.size() == of.train_ids.size());
  }
  CHECK(all_test.size() == recs.size());

  // per-cell test counts across outer folds differ by at most 1
  std::map<std::pair<int, std::string>, std::vector<int>> counts;
  for (const auto& of : plan.outer) {
    std::map<std::pair<int, std::string>, int> c;
    for (const auto& id : of.test_ids) ++c[cell_of[id]];
    for (const auto& [cell, n] : c) counts[cell].push_back(n);
  }
  for (auto& [cell, v] : counts) {
    v.resize(n_outer, 0);
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    CHECK(*mx - *mn <= 1);
  }
}

TEST_CASE("splits are seed-deterministic and round-trip through JSON") {
  std::vector<SubjectRecord> recs;
  for (int i = 0; i < 30; ++i)
    recs.push_back({"r" + std::to_string(i), 1000ll * (i + 1), i % 2 ? "accel" : "nonaccel"});
  const SplitPlan p1 = make_splits(recs, 3, 2, 123);
  const SplitPlan p2 = make_splits(recs, 3, 2, 123);
  const SplitPlan p3 = make_splits(recs, 3, 2, 124);
  CHECK(split_plan_to_json(p1) == split_plan_to_json(p2));
  CHECK(split_plan_to_json(p1) != split_plan_to_json(p3));

  const SplitPlan back = split_plan_from_json(split_plan_to_json(p1));
  CHECK(split_plan_to_json(back) == split_plan_to_json(p1));
}

TEST_CASE("wilcoxon: five concordant pairs give p = 0.0625") {
  const std::vector<double> a{1.1, 2.3, 0.9, 1.7, 1.4};
  const std::vector<double> b{1.0, 2.0, 0.5, 1.1, 1.2};
  const WilcoxonResult r = wilcoxon_signed_rank(a, b);
  CHECK(r.statistic == 15.0);
  CHECK(r.n_used == 5);
  CHECK(r.p_value == doctest::Approx(0.0625).epsilon(1e-12));
}

TEST_CASE("wilcoxon matches the enumeration oracle on random data with ties") {
  std::mt19937 rng(77);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 3 + static_cast<int>(rng() % 10);
    std::vector<double> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      // one-decimal grid forces tied magnitudes and some zero differences
      a[i] = std::round(static_cast<double>(rng() % 40)) / 10.0;
      b[i] = std::round(static_cast<double>(rng() % 40)) / 10.0;
    }
    const WilcoxonResult r = wilcoxon_signed_rank(a, b, WilcoxonMode::exact);
    if (r.all_zero) {
      CHECK(r.p_value == 1.0);
      continue;
    }
    CHECK(r.p_value == doctest::Approx(oracle_wilcoxon_p(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("wilcoxon drops zero differences and flags the all-zero case") {
  const std::vector<double> a{1.0, 2.0, 3.0, 4.0};
  const std::vector<double> b{1.0, 2.5, 2.1, 4.0};
  const WilcoxonResult r = wilcoxon_signed_rank(a, b);
  CHECK(r.n_zeros == 2);
  CHECK(r.n_used == 2);

  const WilcoxonResult z = wilcoxon_signed_rank(a, a);
  CHECK(z.all_zero);
  CHECK(z.p_value == 1.0);

  CHECK_THROWS(wilcoxon_signed_rank({}, {}));
  CHECK_THROWS(wilcoxon_signed_rank({1.0}, {1.0, 2.0}));
}

TEST_CASE("normal approximation tracks the exact test at n = 18") {
  std::mt19937 rng(5);
  std::normal_distribution<double> noise(0.08, 0.5);
  std::vector<double> a(18), b(18);
  for (int i = 0; i < 18; ++i) {
    b[i] = i * 0.1;
    a[i] = b[i] + noise(rng);
  }
  const double exact = wilcoxon_signed_rank(a, b, WilcoxonMode::exact).p_value;
  const double approx = wilcoxon_signed_rank(a, b, WilcoxonMode::normal).p_value;
  CHECK(std::abs(exact - approx) < 0.02);
}

TEST_CASE("holm adjustment on the textbook example") {
  const HolmResult r = holm({0.01, 0.04, 0.03}, 0.05);
  CHECK(r.adjusted[0] == doctest::Approx(0.03));
  CHECK(r.adjusted[1] == doctest::Approx(0.06));
  CHECK(r.adjusted[2] == doctest::Approx(0.06));
  CHECK(r.reject[0]);
  CHECK_FALSE(r.reject[1]);
  CHECK_FALSE(r.reject[2]);
}

TEST_CASE("holm clips at 1, is monotone, and validates input") {
  const HolmResult r = holm({0.9, 0.5, 0.8}, 0.05);
  for (double p : r.adjusted) CHECK(p <= 1.0);
  CHECK(r.adjusted[1] <= r.adjusted[2]);
  CHECK(r.adjusted[2] <= r.adjusted[0]);
  CHECK(holm({}, 0.05).adjusted.empty());
  CHECK_THROWS(holm({-0.1}, 0.05));
  CHECK_THROWS(holm({1.2}, 0.05));
}

TEST_CASE("compare_models stars a clear winner and spares a wash") {
  std::vector<ScoreRow> table;
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> base_dice(0.5, 0.8);
  for (int i = 0; i < 8; ++i) {
    const std::string id = "p" + std::to_string(i);
    const double d = base_dice(rng);
    table.push_back({id, "base", d, 0.3, 0.5});
    table.push_back({id, "better", d + 0.05, 0.2, 0.6});
    // alternating sign, tiny magnitude: no evidence of a difference
    table.push_back({id, "wash", d + (i % 2 ? 0.001 : -0.001), 0.3, 0.5});
  }
  const CompareReport rep = compare_models(table, "base", 0.05);
  CHECK(rep.baseline == "base");
  REQUIRE(rep.models.size() == 3);

  const ModelSummary* base = nullptr;
  const ModelSummary* better = nullptr;
  const ModelSummary* wash = nullptr;
  for (const auto& m : rep.models) {
    if (m.model == "base") base = &m;
    if (m.model == "better") better = &m;
    if (m.model == "wash") wash = &m;
  }
  REQUIRE(base);
  REQUIRE(better);
  REQUIRE(wash);
  CHECK(base->p_adj[0] == 1.0);
  // 8 concordant pairs: exact p = 2/256, Holm doubles it across 2 models
  CHECK(better->p_raw[0] == doctest::Approx(2.0 / 256.0).epsilon(1e-12));
  CHECK(better->p_adj[0] == doctest::Approx(4.0 / 256.0).epsilon(1e-12));
  CHECK(better->starred[0]);
  CHECK_FALSE(wash->starred[0]);
  CHECK(better->mean[0] == doctest::Approx(base->mean[0] + 0.05));

  CHECK(report_to_csv(rep).find("model,metric,mean,std,p_raw,p_holm,significant") == 0);
  CHECK(report_to_text(rep).find("better") != std::string::npos);
}

TEST_CASE("compare_models reports missing cells and unknown baselines") {
  std::vector<ScoreRow> table{{"p0", "a", 0.5, 0.1, 0.4},
                              {"p0", "b", 0.6, 0.1, 0.4},
                              {"p1", "a", 0.5, 0.1, 0.4}};
  CHECK_THROWS_WITH_AS(compare_models(table, "a", 0.05), doctest::Contains("p1/b"),
                       std::invalid_argument);
  CHECK_THROWS(compare_models(table, "nope", 0.05));
}

TEST_CASE("scores csv reader") {
  const fs::path dir =
      fs::temp_directory_path() / ("meshvox_eval_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const std::string path = (dir / "scores.csv").string();
  {
    std::ofstream f(path);
    f << "subject_id,model,dice,avd,mcc\n"
      << "p0,base,0.71,0.22,0.64\n"
      << "p0,cand,0.74,0.20,0.67\n";
  }
  const auto rows = read_scores_csv(path);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].subject_id == "p0");
  CHECK(rows[1].model == "cand");
  CHECK(rows[1].dice == 0.74);

  {
    std::ofstream f(path);
    f << "id,model,dice,avd,mcc\np0,base,1,1,1\n";
  }
  CHECK_THROWS(read_scores_csv(path));
  fs::remove_all(dir);
}
