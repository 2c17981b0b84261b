#include "meshvox/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "meshvox/metrics.hpp"

namespace meshvox {

double onecycle_lr(long step, const ScheduleConfig& sched) {
  if (sched.total_steps <= 0) throw std::invalid_argument("onecycle_lr: total_steps not set");
  if (step < 0 || step >= sched.total_steps)
    throw std::out_of_range("onecycle_lr: step out of range");
  const long warmup = std::max(1l, static_cast<long>(sched.warmup_frac * sched.total_steps));
  const double lo = sched.lr_max / sched.start_div;
  const double fin = sched.lr_max / sched.final_div;
  if (step <= warmup) {
    const double t = static_cast<double>(step) / warmup;
    return lo + (sched.lr_max - lo) * (1.0 - std::cos(M_PI * t)) / 2.0;
  }
  const long last = sched.total_steps - 1;
  if (last == warmup) return sched.lr_max;
  const double t = static_cast<double>(step - warmup) / (last - warmup);
  return fin + (sched.lr_max - fin) * (1.0 + std::cos(M_PI * t)) / 2.0;
}

double evaluate_dice(Model<float>& model, const SampleList& samples) {
  if (samples.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : samples) {
    Tensor4<float> logits = forward(model, s.image, BnMode::eval);
    LabelMask pred = argmax_channels(logits);
    sum += dice(confusion(pred, s.labels)).value;
  }
  return sum / samples.size();
}

TrainResult train(const MeshNetConfig& arch, const SampleList& train_set,
                  const SampleList& val_set, const TrainRunConfig& cfg) {
  arch.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.epochs < 1 || cfg.restarts < 1)
    throw std::invalid_argument("train: epochs and restarts must be >= 1");
  for (const auto& s : train_set)
    if (s.image.d != train_set[0].image.d || s.image.h != train_set[0].image.h ||
        s.image.w != train_set[0].image.w)
      throw std::invalid_argument("train: all volumes must share one shape");

  ScheduleConfig sched = cfg.schedule;
  sched.lr_max = cfg.optimizer.lr_max;
  sched.total_steps = static_cast<long>(cfg.epochs) * train_set.size();

  TrainResult result;
  result.best_dice = -1.0;

  for (int r = 0; r < cfg.restarts; ++r) {
    Model<float> model = init_weights(arch, cfg.seed + static_cast<std::uint64_t>(r));
    AdamState<float> opt_state(static_cast<std::size_t>(param_count(model)));
    TrainCache<float> cache;
    long step = 0;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::mt19937_64 shuffle_rng(cfg.seed * 1000003ull + r * 1009ull + epoch);
      std::shuffle(order.begin(), order.end(), shuffle_rng);

      double loss_sum = 0.0;
      double last_lr = 0.0;
      for (std::size_t idx : order) {
        const Sample& s = train_set[idx];
        forward_train(model, s.image, cache);
        auto loss = weighted_smoothed_ce(cache.logits, s.labels, cfg.loss);
        loss_sum += loss.loss;
        auto grads = backward_train(model, cache, loss.grad_logits);
        last_lr = onecycle_lr(step, sched);

        std::vector<float> flat = flatten_params(model);
        adamw_step(std::span<float>(flat), std::span<const float>(grads), opt_state,
                   cfg.optimizer, last_lr);
        unflatten_params(model, std::span<const float>(flat));
        ++step;
      }

      EpochStat st;
      st.restart = r;
      st.epoch = epoch;
      st.step = step;
      st.lr = last_lr;
      st.mean_loss = loss_sum / train_set.size();
      st.val_dice = val_set.empty() ? 0.0 : evaluate_dice(model, val_set);
      result.history.push_back(st);

      if (st.val_dice > result.best_dice) {
        result.best_dice = st.val_dice;
        result.best_model = model;
        result.best_restart = r;
      }
    }
    if (val_set.empty() && r == cfg.restarts - 1 && result.best_dice < 0) {
      result.best_model = model;
      result.best_dice = 0.0;
    }
  }
  return result;
}

GradCheckReport grad_check(const MeshNetConfig& arch, const Sample& sample,
                           double tolerance, std::uint64_t seed, int max_params,
                           const std::function<void(std::vector<double>&)>& tamper) {
  Model<double> model = init_weights(arch, seed).cast<double>();
  LossSpec loss_spec;

  auto loss_at = [&](Model<double>& m) {
    TrainCache<double> cache;
    forward_train(m, sample.image.cast<double>(), cache);
    return weighted_smoothed_ce(cache.logits, sample.labels, loss_spec);
  };

  TrainCache<double> cache;
  forward_train(model, sample.image.cast<double>(), cache);
  auto loss = weighted_smoothed_ce(cache.logits, sample.labels, loss_spec);
  std::vector<double> analytic = backward_train(model, cache, loss.grad_logits);
  if (tamper) tamper(analytic);

  std::vector<double> flat = flatten_params(model);
  const std::size_t n = flat.size();
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<std::size_t> picks(n);
  std::iota(picks.begin(), picks.end(), 0);
  std::shuffle(picks.begin(), picks.end(), rng);
  picks.resize(std::min<std::size_t>(picks.size(), static_cast<std::size_t>(max_params)));

  GradCheckReport rep;
  const double h = 1e-6;
  // Dead parameters (behind fully-inactive ReLU units) have true gradient 0;
  // central-difference cancellation noise (~eps*L/2h) would dominate a tiny
  // fixed floor, so the floor scales with the largest analytic gradient.
  double gmax = 0.0;
  for (double g : analytic) gmax = std::max(gmax, std::abs(g));
  const double floor = std::max(1e-4 * gmax, 1e-12);
  for (std::size_t pi : picks) {
    const double orig = flat[pi];
    // BN running stats mutate during forward; gradient of the loss w.r.t.
    // params is unaffected, so fresh train-mode forwards are fine.
    flat[pi] = orig + h;
    unflatten_params(model, std::span<const double>(flat));
    const double lp = loss_at(model).loss;
    flat[pi] = orig - h;
    unflatten_params(model, std::span<const double>(flat));
    const double lm = loss_at(model).loss;
    flat[pi] = orig;
    unflatten_params(model, std::span<const double>(flat));

    const double numeric = (lp - lm) / (2 * h);
    const double a = analytic[pi];
    const double denom = std::max({std::abs(a), std::abs(numeric), floor});
    const double rel = std::abs(a - numeric) / denom;
    rep.max_rel_error = std::max(rep.max_rel_error, rel);
    ++rep.checked;
  }
  rep.pass = rep.max_rel_error < tolerance;
  return rep;
}

namespace {
std::map<std::string, std::string> parse_kv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(f, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (!key.empty()) kv[key] = val;
  }
  return kv;
}
}  // namespace

TrainRunConfig load_train_config(const std::string& path) {
  TrainRunConfig cfg;
  for (const auto& [key, val] : parse_kv(path)) {
    if (key == "epochs") cfg.epochs = std::stoi(val);
    else if (key == "restarts") cfg.restarts = std::stoi(val);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else if (key == "lr_max") cfg.optimizer.lr_max = std::stod(val);
    else if (key == "weight_decay") cfg.optimizer.weight_decay = std::stod(val);
    else if (key == "adam_eps") cfg.optimizer.eps = std::stod(val);
    else if (key == "beta1") cfg.optimizer.beta1 = std::stod(val);
    else if (key == "beta2") cfg.optimizer.beta2 = std::stod(val);
    else if (key == "warmup_frac") cfg.schedule.warmup_frac = std::stod(val);
    else if (key == "start_div") cfg.schedule.start_div = std::stod(val);
    else if (key == "final_div") cfg.schedule.final_div = std::stod(val);
    else if (key == "label_smoothing") cfg.loss.label_smoothing = std::stod(val);
    else if (key == "background_weight") cfg.loss.weight_background = std::stod(val);
    else if (key == "lesion_weight") cfg.loss.weight_lesion = std::stod(val);
    else throw std::runtime_error("unknown training config key: " + key);
  }
  return cfg;
}

void write_history_csv(const std::vector<EpochStat>& history, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "restart,epoch,step,lr,loss,val_dice\n";
  f.precision(10);
  for (const auto& st : history)
    f << st.restart << ',' << st.epoch << ',' << st.step << ',' << st.lr << ','
      << st.mean_loss << ',' << st.val_dice << '\n';
}

}  // namespace meshvox
