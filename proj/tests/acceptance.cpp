// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failed criteria (0 when all pass).
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>

#include "decomamba/bench.hpp"
#include "decomamba/blocks.hpp"
#include "decomamba/gradcheck.hpp"
#include "decomamba/train.hpp"
#include "oracles.hpp"

using namespace dm;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  if (!ok) ++failures;
  std::cout << (ok ? "PASS" : "FAIL") << " criterion " << id << " " << name << ": " << detail << std::endl;
}

template <typename T>
Tensor<T> uniform(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<T> v(static_cast<size_t>(numel_of(shape)));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>::from_data(std::move(shape), std::move(v));
}

LabelBatch random_labels(int64_t b, int64_t h, int64_t w, int64_t n, Rng& rng) {
  std::vector<int32_t> l(static_cast<size_t>(b * h * w));
  for (auto& v : l) v = static_cast<int32_t>(rng.below(static_cast<uint64_t>(n)));
  return LabelBatch(b, h, w, n, l);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

// ------------------------------------------------------------------ 1
void gradient_suite() {
  const auto t0 = Clock::now();
  GradCheckOptions opt;  // tolerance 1e-4
  int64_t failed = 0;
  double worst = 0;
  std::string worst_name;
  const auto reports = run_gradcheck_suite(opt, [](const std::string&) {});
  for (const auto& r : reports) {
    if (!r.passed) {
      ++failed;
      std::cout << "  failed case " << r.name << " max_rel_err=" << r.max_rel_error << " " << r.message << "\n";
    }
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
  }
  const double secs = seconds_since(t0);
  report(1, "gradient suite", failed == 0 && secs < 600,
         std::to_string(reports.size()) + " cases, " + std::to_string(failed) + " failed, worst " + worst_name + " " +
             fmt(worst) + " (< 1e-4), " + fmt(secs) + " s (< 600 s)");
}

// ------------------------------------------------------------------ 2
void scan_oracle() {
  Rng rng(2);
  double err = 0;
  for (int64_t L : {1, 2, 7, 64, 257}) {
    auto u = uniform<float>({2, 4, L}, rng, -1, 1), delta = uniform<float>({2, 4, L}, rng, 0.01, 0.5);
    auto A = uniform<float>({4, 8}, rng, -2, -0.1), B = uniform<float>({2, 8, L}, rng, -1, 1);
    auto C = uniform<float>({2, 8, L}, rng, -1, 1), D = uniform<float>({4}, rng, -1, 1);
    const auto y = selective_scan(u, delta, A, B, C, D);
    const auto ref = oracle::scan(u, delta, A, B, C, D);
    for (size_t i = 0; i < ref.size(); ++i) err = std::max(err, std::abs(double(y.data()[i]) - ref[i]));
  }
  std::string ratios;
  double worst_ratio = 0;
  double prev = time_selective_scan(4096);
  for (int64_t L : {8192, 16384}) {
    const double t = time_selective_scan(L);
    const double ratio = t / prev;
    worst_ratio = std::max(worst_ratio, ratio);
    ratios += " t(" + std::to_string(L) + ")/t(" + std::to_string(L / 2) + ")=" + fmt(ratio);
    prev = t;
  }
  report(2, "scan oracle", err < 1e-5 && worst_ratio <= 2.5,
         "max abs err " + fmt(err) + " (< 1e-5) over L in {1,2,7,64,257};" + ratios + " (<= 2.5, median of 5)");
}

// ------------------------------------------------------------------ 3
void deformable_degeneracy() {
  ModelConfig a = ModelConfig::preset("desk"), b = a;
  b.conv = ConvKind::standard;
  Model<float> deform(a), plain(b);
  Rng rng(3);
  double model_diff = 0;
  for (int i = 0; i < 20; ++i) {
    auto x = uniform<float>({1, 3, a.height, a.width}, rng, 0, 1);
    NoGradGuard guard;
    for (Mode mode : {Mode::eval, Mode::train}) {
      const auto ya = deform.forward(x, mode).logits, yb = plain.forward(x, mode).logits;
      for (int64_t k = 0; k < ya.numel(); ++k) {
        model_diff = std::max(model_diff, double(std::abs(ya.data()[size_t(k)] - yb.data()[size_t(k)])));
      }
    }
  }
  // The operator itself: zero offsets and zero mask logits (m = 1) equal conv2d.
  double op_diff = 0;
  for (int i = 0; i < 20; ++i) {
    auto x = uniform<float>({2, 5, 9, 11}, rng, -1, 1), w = uniform<float>({4, 5, 3, 3}, rng, -1, 1);
    auto bias = uniform<float>({4}, rng, -1, 1);
    auto y = deformable_conv2d(x, w, bias, Tensor<float>::zeros({2, 18, 9, 11}), Tensor<float>::zeros({2, 9, 9, 11}));
    auto ref = conv2d(x, w, bias, 1, 1);
    for (int64_t k = 0; k < y.numel(); ++k) {
      op_diff = std::max(op_diff, double(std::abs(y.data()[size_t(k)] - ref.data()[size_t(k)])));
    }
  }
  report(3, "deformable degeneracy", model_diff < 1e-5 && op_diff < 1e-5,
         "desk model max abs diff " + fmt(model_diff) + ", operator " + fmt(op_diff) + " (< 1e-5, 20 inputs each)");
}

// ------------------------------------------------------------------ 4
void msda_invariants() {
  Rng rng(4);
  double kl_min = 0, kl_self = 0, sum_err = 0, onehot_err = 0, total_err = 0;
  bool pure_zero = true, mixed_positive = true;
  int64_t pure = 0, mixed = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const int64_t N = 2 + trial % 4;
    const auto gt = random_labels(2, 64, 64, N, rng);
    // Blocky labels so that both pure and mixed tiles occur.
    std::vector<int32_t> blocky(gt.labels.size());
    for (int64_t b = 0; b < 2; ++b)
      for (int64_t h = 0; h < 64; ++h)
        for (int64_t w = 0; w < 64; ++w) blocky[size_t((b * 64 + h) * 64 + w)] = gt.at(b, (h / 12) * 12, (w / 12) * 12);
    const LabelBatch blk(2, 64, 64, N, blocky);
    for (const LabelBatch* g : {&gt, &blk}) {
      for (int64_t side : {1, 2, 4, 8, 16, 32, 64}) {
        const auto P = windowed_gt_distribution<double>(*g, side, side);
        const int64_t S = side * side;
        const auto weight = boundary_weight(P, 1.0);
        for (int64_t b = 0; b < 2; ++b)
          for (int64_t i = 0; i < S; ++i) {
            double s = 0, mx = 0;
            for (int64_t n = 0; n < N; ++n) {
              const double p = P.P.data()[size_t((b * N + n) * S + i)];
              s += p;
              mx = std::max(mx, p);
            }
            sum_err = std::max(sum_err, std::abs(s - 1));
            const double w = weight.data()[size_t(b * S + i)];
            if (mx == 1.0) {
              ++pure;
              pure_zero &= w == 0.0;
            } else {
              ++mixed;
              mixed_positive &= w > 0.0;
            }
          }
        if (side == 64) {
          for (int64_t b = 0; b < 2; ++b)
            for (int64_t h = 0; h < 64; ++h)
              for (int64_t w = 0; w < 64; ++w)
                for (int64_t n = 0; n < N; ++n) {
                  const double p = P.P.data()[size_t(((b * N + n) * 64 + h) * 64 + w)];
                  onehot_err = std::max(onehot_err, std::abs(p - (g->at(b, h, w) == n ? 1.0 : 0.0)));
                }
        }
        auto q = log_softmax(uniform<double>({2, N, side, side}, rng, -4, 4), 1);
        const auto kl = kl_divergence_map(P, q);
        for (double v : kl.data()) kl_min = std::min(kl_min, v);
        const auto self = kl_divergence_map(P, log(clamp_min(P.P, 1e-300)));
        for (double v : self.data()) kl_self = std::max(kl_self, std::abs(v));
      }
    }
    // total = dice + sum lambda * dist
    ModelConfig c;
    c.num_classes = N;
    c.alpha = 0.5 + trial * 0.25;
    std::vector<Tensor<double>> aux;
    for (int s = 0; s < 5; ++s) aux.push_back(uniform<double>({2, N, 2 << s, 2 << s}, rng, -3, 3));
    const auto logits = uniform<double>({2, N, 64, 64}, rng, -3, 3);
    const auto r = total_loss(logits, aux, gt, c);
    const auto lam = c.scale_weights();
    double expected = dice_loss(exp(log_softmax(logits, 1)), one_hot<double>(gt)).item();
    for (int s = 0; s < 5; ++s) {
      const auto P = windowed_gt_distribution<double>(gt, 2 << s, 2 << s);
      expected += lam[size_t(s)] * dist_loss_scale(P, aux[size_t(s)], c.alpha).item();
    }
    total_err = std::max(total_err, std::abs(r.total.item() - expected));
  }
  const bool ok = kl_min >= 0 && kl_self == 0 && sum_err < 1e-6 && onehot_err == 0 && pure_zero && mixed_positive &&
                  pure > 0 && mixed > 0 && total_err < 1e-6;
  report(4, "msda invariants", ok,
         "min KL " + fmt(kl_min) + " (>= 0), max |KL(P||P)| " + fmt(kl_self) + ", max |sum P - 1| " + fmt(sum_err) +
             " (< 1e-6), one-hot err at 1x1 " + fmt(onehot_err) + ", boundary weight zero on " + std::to_string(pure) +
             " pure tiles: " + (pure_zero ? "yes" : "no") + ", positive on " + std::to_string(mixed) +
             " mixed tiles: " + (mixed_positive ? "yes" : "no") + ", |total - (dice + sum lambda dist)| " +
             fmt(total_err) + " (< 1e-6)");
}

// ------------------------------------------------------------------ 5
TrainConfig desk_run(Supervision sup) {
  TrainConfig t;
  t.model = ModelConfig::preset("desk");
  t.model.supervision = sup;
  t.optimizer.lr = 1e-3;
  t.schedule.t0 = 10;  // periods 10 + 30 end exactly at epoch 40
  t.epochs = 40;
  t.batch_size = 8;
  t.seed = 0;
  t.out_dir = "";
  return t;
}

void desk_training() {
  SynthSpec spec;  // 96x96, 4 classes
  spec.count = 250;
  spec.val_count = 50;
  const auto data = synth_generate(spec, 7);
  double best[2] = {0, 0}, final_dice[2] = {0, 0}, secs[2] = {0, 0};
  bool finite[2] = {true, true};
  const Supervision sups[2] = {Supervision::dice_msda, Supervision::dice};
  std::unique_ptr<Model<float>> msda_model;
  for (int i = 0; i < 2; ++i) {
    const auto cfg = desk_run(sups[i]);
    auto model = std::make_unique<Model<float>>(cfg.model);
    const auto t0 = Clock::now();
    try {
      const auto r = train(*model, cfg, data, [&](const std::string& line) {
        if (line.rfind("epoch=", 0) == 0) std::cout << "  [" << to_string(sups[i]) << "] " << line.substr(0, 160) << std::endl;
      });
      for (const auto& e : r.epochs) best[i] = std::max(best[i], e.val.mean_dice);
      final_dice[i] = r.epochs.back().val.mean_dice;
    } catch (const NumericError& e) {
      finite[i] = false;
      std::cout << "  " << e.what() << "\n";
    }
    secs[i] = seconds_since(t0);
    if (i == 0) msda_model = std::move(model);
  }
  const bool ok = finite[0] && finite[1] && final_dice[0] >= 0.90 && secs[0] <= 7200 &&
                  final_dice[0] >= final_dice[1] - 0.01;
  report(5, "desk-scale training", ok,
         "dice+msda final val mean fg Dice " + fmt(final_dice[0]) + " (>= 0.90, best " + fmt(best[0]) + ") in " +
             fmt(secs[0] / 60) + " min (<= 120); dice-only " + fmt(final_dice[1]) + " (best " + fmt(best[1]) +
             ", " + fmt(secs[1] / 60) + " min); non-inferiority margin " + fmt(final_dice[0] - final_dice[1]) +
             " (>= -0.01); every step finite: " + (finite[0] && finite[1] ? "yes" : "no"));

  // End-to-end smoke on one training image with the dice+msda model.
  const size_t idx = data.indices("train").front();
  const auto pred = predict_masks(*msda_model, data.samples, {idx});
  double d = 0;
  for (int32_t c = 1; c < data.num_classes; ++c) d += dice_score(pred[0], data.samples[idx].mask, c);
  d /= double(data.num_classes - 1);
  std::cout << (d >= 0.95 ? "PASS" : "FAIL") << " smoke predict on a train image: mean fg Dice " << fmt(d)
            << " (>= 0.95)" << std::endl;
  if (d < 0.95) ++failures;
}

// ------------------------------------------------------------------ 6
void hd95_oracle() {
  Rng rng(6);
  int64_t mismatches = 0, empty_cases = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<uint8_t> a(32 * 32, 0), b(32 * 32, 0);
    auto fill = [&](std::vector<uint8_t>& m) {
      const int style = int(rng.below(3));
      if (style == 0) {
        const double p = rng.uniform(0.01, 0.3);
        for (auto& v : m) v = rng.coin(p);
      } else {
        const int blobs = 1 + int(rng.below(3));
        for (int k = 0; k < blobs; ++k) {
          const double cx = rng.uniform(0, 32), cy = rng.uniform(0, 32), r = rng.uniform(0.5, 9);
          for (int64_t y = 0; y < 32; ++y)
            for (int64_t x = 0; x < 32; ++x)
              if (std::hypot(x + 0.5 - cx, y + 0.5 - cy) <= r) m[size_t(y * 32 + x)] = 1;
        }
      }
    };
    // Sentinels: both empty, pred empty, gt empty, then random pairs.
    if (trial % 20 != 0 && trial % 20 != 1) fill(a);
    if (trial % 20 != 0 && trial % 20 != 2) fill(b);
    const bool ea = std::none_of(a.begin(), a.end(), [](uint8_t v) { return v; });
    const bool eb = std::none_of(b.begin(), b.end(), [](uint8_t v) { return v; });
    empty_cases += ea || eb;
    if (hd95(a, b, 32, 32) != oracle::hd95(a, b, 32, 32)) ++mismatches;
  }
  report(6, "hd95 oracle", mismatches == 0,
         std::to_string(mismatches) + " mismatches over 100 pairs (" + std::to_string(empty_cases) +
             " with an empty mask), exact equality");
}

// ------------------------------------------------------------------ 7
void determinism() {
  ModelConfig m;
  m.height = m.width = 32;
  m.num_classes = 3;
  m.stem_channels = 4;
  m.encoder_widths = {8, 8, 16, 16};
  m.encoder_depths = {1, 1, 1, 1};
  m.encoder_heads = {1, 1, 2, 2};
  m.mlp_ratio = 2;
  m.decoder_widths = {16, 16, 8, 8, 8, 8};
  m.ssm_state = 4;
  m.ca_reduction = 4;
  TrainConfig t;
  t.model = m;
  t.optimizer.lr = 1e-3;
  t.epochs = 3;
  t.batch_size = 4;
  t.seed = 5;
  t.out_dir = "";
  SynthSpec spec;
  spec.count = 12;
  spec.val_count = 4;
  spec.height = spec.width = 32;
  spec.num_classes = 3;
  const auto data = synth_generate(spec, 5);
  std::vector<double> traj[2];
  for (int i = 0; i < 2; ++i) {
    Model<float> model(m);
    traj[i] = train(model, t, data, nullptr).step_losses;
  }
  const bool same_traj = !traj[0].empty() && traj[0] == traj[1];

  const auto dir = fs::temp_directory_path() / "dm_acceptance";
  fs::create_directories(dir);
  bool exact = true, counts = true;
  std::string count_detail;
  for (const char* preset : {"desk", "v0"}) {
    const ModelConfig cfg = ModelConfig::preset(preset);
    Model<float> model(cfg);
    const auto path = dir / (std::string(preset) + ".dmck");
    save_checkpoint(path, model);
    const auto loaded = load_checkpoint<float>(path);
    Rng rng(7);
    const auto x = uniform<float>({1, 3, cfg.height, cfg.width}, rng, 0, 1);
    NoGradGuard guard;
    const auto a = model.forward(x, Mode::eval).logits, b = loaded.model->forward(x, Mode::eval).logits;
    exact &= std::equal(a.data().begin(), a.data().end(), b.data().begin());
    const int64_t n = count_params(cfg), serialized = checkpoint_param_elements(path);
    counts &= n == serialized && n == model.store().param_count();
    count_detail += std::string(" ") + preset + " " + std::to_string(n) + "/" + std::to_string(serialized);
  }
  fs::remove_all(dir);
  report(7, "determinism and persistence", same_traj && exact && counts,
         std::to_string(traj[0].size()) + "-step loss trajectory bit-identical: " + (same_traj ? "yes" : "no") +
             "; reloaded forward bit-exact: " + (exact ? "yes" : "no") + "; count_params/serialized:" + count_detail);
}

// ------------------------------------------------------------------ 8
void counters() {
  const auto c = conv_reference_count();
  report(8, "complexity counters", c.params == kConvReferenceParams && c.macs == kConvReferenceMacs,
         "conv 3x3 16->32 with bias: params " + std::to_string(c.params) + " (4640), MACs at 56x56 " +
             std::to_string(c.macs) + " (14450688)");
}

}  // namespace

int main() {
  std::cout << "threads=" << thread_count() << std::endl;
  gradient_suite();
  scan_oracle();
  deformable_degeneracy();
  msda_invariants();
  desk_training();
  hd95_oracle();
  determinism();
  counters();
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed") << std::endl;
  return failures;
}
