#pragma once

#include <cstdint>
#include <string>

#include "meshvox/volume.hpp"

namespace meshvox {

struct Confusion {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::int64_t total() const { return tp + fp + fn + tn; }
};

// Voxelwise counts with lesion (label 1) as the positive class.
Confusion confusion(const LabelMask& pred, const LabelMask& gt);

struct DiceResult {
  double value = 0;
  bool vacuous = false;  // both masks empty: defined as 1.0
};

// 2*tp / (2*tp + fp + fn); empty-vs-empty is a flagged 1.0.
DiceResult dice(const Confusion& c);

// |pred_vol - gt_vol| / gt_vol. Throws when gt_vol == 0.
double avd(std::int64_t pred_vol, std::int64_t gt_vol);

// Matthews correlation; any zero factor in the denominator gives 0.0.
// Computed in floating point so 256^3-scale counts cannot overflow.
double mcc(const Confusion& c);

struct MetricsReport {
  DiceResult dice;
  double avd = 0;
  double mcc = 0;
  Confusion counts;
};

MetricsReport evaluate(const LabelMask& pred, const LabelMask& gt);
std::string to_json(const MetricsReport& r);

}  // namespace meshvox
