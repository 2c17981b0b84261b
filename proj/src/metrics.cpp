#include "meshvox/metrics.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace meshvox {

Confusion confusion(const LabelMask& pred, const LabelMask& gt) {
  if (pred.shape != gt.shape)
    throw std::invalid_argument("confusion: mask shapes differ");
  Confusion c;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] == 1, g = gt.data[i] == 1;
    if (p && g) ++c.tp;
    else if (p && !g) ++c.fp;
    else if (!p && g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

DiceResult dice(const Confusion& c) {
  if (c.tp + c.fp + c.fn == 0) return {1.0, true};
  return {2.0 * c.tp / static_cast<double>(2 * c.tp + c.fp + c.fn), false};
}

double avd(std::int64_t pred_vol, std::int64_t gt_vol) {
  if (gt_vol <= 0)
    throw std::invalid_argument("avd: reference lesion volume is zero");
  return std::abs(static_cast<double>(pred_vol - gt_vol)) / static_cast<double>(gt_vol);
}

double mcc(const Confusion& c) {
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp),
               fn = static_cast<double>(c.fn), tn = static_cast<double>(c.tn);
  const double denom = (tp + fp) * (tp + fn) * (fp + tn) * (fn + tn);
  if (denom == 0.0) return 0.0;
  return (tp * tn - fp * fn) / std::sqrt(denom);
}

MetricsReport evaluate(const LabelMask& pred, const LabelMask& gt) {
  MetricsReport r;
  r.counts = confusion(pred, gt);
  r.dice = dice(r.counts);
  r.mcc = mcc(r.counts);
  const std::int64_t gt_vol = r.counts.tp + r.counts.fn;
  const std::int64_t pred_vol = r.counts.tp + r.counts.fp;
  r.avd = gt_vol > 0 ? avd(pred_vol, gt_vol)
                     : (pred_vol > 0 ? 1.0 : 0.0);  // vacuous masks agree
  return r;
}

std::string to_json(const MetricsReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << "{\"dice\": " << r.dice.value << ", \"avd\": " << r.avd
     << ", \"mcc\": " << r.mcc << ", \"tp\": " << r.counts.tp
     << ", \"fp\": " << r.counts.fp << ", \"fn\": " << r.counts.fn
     << ", \"tn\": " << r.counts.tn << "}";
  return os.str();
}

}  // namespace meshvox
