#include "bhrnet/pose.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace bhrnet {

namespace {

void check_pose_shapes(const PoseSet& poses) {
  if (poses.num_keypoints <= 0) throw std::invalid_argument("poses: num_keypoints must be > 0");
  for (const PersonInstance& inst : poses.instances) {
    if (static_cast<int64_t>(inst.keypoints.size()) != poses.num_keypoints) {
      throw std::invalid_argument("poses: instance keypoint slot count != num_keypoints");
    }
  }
}

struct SampledInstance {
  std::vector<int64_t> kp_type;
  std::vector<int64_t> px, py;  // integer sample positions
};

// Integer sample positions of each labeled ground-truth keypoint, bounds
// checked against the tagmap extents. Instances with nothing labeled are
// dropped.
std::vector<SampledInstance> sample_positions(const PoseSet& gt, int64_t h, int64_t w) {
  check_pose_shapes(gt);
  std::vector<SampledInstance> out;
  for (const PersonInstance& inst : gt.instances) {
    SampledInstance s;
    for (int64_t k = 0; k < gt.num_keypoints; ++k) {
      if (!inst.keypoints[k]) continue;
      const Keypoint& kp = *inst.keypoints[k];
      const int64_t x = std::llround(kp.x);
      const int64_t y = std::llround(kp.y);
      if (x < 0 || x >= w || y < 0 || y >= h) {
        throw std::invalid_argument("poses: keypoint outside map extents");
      }
      s.kp_type.push_back(k);
      s.px.push_back(x);
      s.py.push_back(y);
    }
    if (!s.kp_type.empty()) out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

GroundTruth render_ground_truth(const PoseSet& poses, int64_t h, int64_t w, double sigma,
                                int64_t tag_radius) {
  check_pose_shapes(poses);
  if (h <= 0 || w <= 0) throw std::invalid_argument("render: extents must be positive");
  if (sigma <= 0) throw std::invalid_argument("render: sigma must be positive");
  const int64_t K = poses.num_keypoints;
  GroundTruth gt{Tensor(1, K, h, w, 0.0f), Tensor(1, K, h, w, 0.0f), Tensor(1, K, h, w, 0.0f)};
  for (const PersonInstance& inst : poses.instances) {
    for (int64_t k = 0; k < K; ++k) {
      if (!inst.keypoints[k]) continue;
      const Keypoint& kp = *inst.keypoints[k];
      const int64_t cx = std::llround(kp.x);
      const int64_t cy = std::llround(kp.y);
      if (cx < 0 || cx >= w || cy < 0 || cy >= h) {
        throw std::invalid_argument("render: keypoint outside map extents");
      }
      for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
          const double dx = static_cast<double>(x) - kp.x;
          const double dy = static_cast<double>(y) - kp.y;
          const float v =
              static_cast<float>(std::exp(-(dx * dx + dy * dy) / (sigma * sigma)));
          float& cell = gt.heatmaps.at(0, k, y, x);
          if (v > cell) cell = v;
        }
      }
      for (int64_t y = std::max<int64_t>(0, cy - tag_radius);
           y <= std::min(h - 1, cy + tag_radius); ++y) {
        for (int64_t x = std::max<int64_t>(0, cx - tag_radius);
             x <= std::min(w - 1, cx + tag_radius); ++x) {
          gt.tagmaps.at(0, k, y, x) = static_cast<float>(kp.tag);
        }
      }
      gt.mask.at(0, k, cy, cx) = 1.0f;
    }
  }
  return gt;
}

double heatmap_loss(const Tensor& pred, const Tensor& gt) {
  if (!pred.same_shape(gt)) throw std::invalid_argument("heatmap_loss: shape mismatch");
  double sum = 0.0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - static_cast<double>(gt.data[i]);
    sum += d * d;
  }
  const double cells = static_cast<double>(pred.shape[1]) * static_cast<double>(pred.shape[2]) *
                       static_cast<double>(pred.shape[3]);
  return sum / cells;
}

double tag_loss(const Tensor& pred_tags, const PoseSet& gt, double push_sigma) {
  if (push_sigma <= 0) throw std::invalid_argument("tag_loss: push sigma must be positive");
  const std::vector<SampledInstance> inst =
      sample_positions(gt, pred_tags.shape[2], pred_tags.shape[3]);
  const size_t n = inst.size();
  if (n == 0) throw std::invalid_argument("tag_loss: no instance has a labeled keypoint");

  std::vector<double> means(n, 0.0);
  double pull = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (size_t j = 0; j < inst[i].kp_type.size(); ++j) {
      sum += static_cast<double>(
          pred_tags.at(0, inst[i].kp_type[j], inst[i].py[j], inst[i].px[j]));
    }
    means[i] = sum / static_cast<double>(inst[i].kp_type.size());
    for (size_t j = 0; j < inst[i].kp_type.size(); ++j) {
      const double d = static_cast<double>(pred_tags.at(0, inst[i].kp_type[j], inst[i].py[j],
                                                        inst[i].px[j])) -
                       means[i];
      pull += d * d;
    }
  }
  pull /= static_cast<double>(n);

  double push = 0.0;
  for (size_t a = 0; a < n; ++a) {
    for (size_t b = 0; b < n; ++b) {
      if (a == b) continue;
      const double d = means[a] - means[b];
      push += std::exp(-d * d / (2.0 * push_sigma * push_sigma));
    }
  }
  push /= static_cast<double>(n) * static_cast<double>(n);
  return pull + push;
}

double total_loss(double lh, double lt, const LossWeights& w) {
  if (!std::isfinite(lh) || !std::isfinite(lt)) {
    throw std::invalid_argument("total_loss: non-finite inputs");
  }
  return w.alpha * lh + w.beta * lt;
}

LossGradients loss_gradients(const Tensor& pred_heat, const Tensor& pred_tags,
                             const Tensor& gt_heat, const PoseSet& gt_poses,
                             const LossWeights& w) {
  if (!pred_heat.same_shape(gt_heat)) throw std::invalid_argument("loss_gradients: heat shapes");
  LossGradients g;
  g.d_heatmaps = Tensor(pred_heat.shape[0], pred_heat.shape[1], pred_heat.shape[2],
                        pred_heat.shape[3], 0.0f);
  g.d_tagmaps = Tensor(pred_tags.shape[0], pred_tags.shape[1], pred_tags.shape[2],
                       pred_tags.shape[3], 0.0f);

  const double cells = static_cast<double>(pred_heat.shape[1]) *
                       static_cast<double>(pred_heat.shape[2]) *
                       static_cast<double>(pred_heat.shape[3]);
  for (size_t i = 0; i < pred_heat.data.size(); ++i) {
    const double d = static_cast<double>(pred_heat.data[i]) -
                     static_cast<double>(gt_heat.data[i]);
    g.d_heatmaps.data[i] = static_cast<float>(w.alpha * 2.0 * d / cells);
  }

  const std::vector<SampledInstance> inst =
      sample_positions(gt_poses, pred_tags.shape[2], pred_tags.shape[3]);
  const size_t n = inst.size();
  if (n == 0) throw std::invalid_argument("loss_gradients: no instance has a labeled keypoint");

  std::vector<double> means(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (size_t j = 0; j < inst[i].kp_type.size(); ++j) {
      sum += static_cast<double>(
          pred_tags.at(0, inst[i].kp_type[j], inst[i].py[j], inst[i].px[j]));
    }
    means[i] = sum / static_cast<double>(inst[i].kp_type.size());
  }

  // d push / d mean_a, both orderings of each pair contribute.
  std::vector<double> d_mean(n, 0.0);
  const double nn = static_cast<double>(n) * static_cast<double>(n);
  for (size_t a = 0; a < n; ++a) {
    for (size_t b = 0; b < n; ++b) {
      if (a == b) continue;
      const double d = means[a] - means[b];
      const double e = std::exp(-d * d / (2.0 * w.push_sigma * w.push_sigma));
      d_mean[a] += 2.0 * e * (-d / (w.push_sigma * w.push_sigma)) / nn;
    }
  }

  for (size_t i = 0; i < n; ++i) {
    const double kn = static_cast<double>(inst[i].kp_type.size());
    for (size_t j = 0; j < inst[i].kp_type.size(); ++j) {
      const double t = static_cast<double>(
          pred_tags.at(0, inst[i].kp_type[j], inst[i].py[j], inst[i].px[j]));
      // Pull: the mean's dependence on t cancels inside its own sum.
      const double d_pull = 2.0 * (t - means[i]) / static_cast<double>(n);
      const double d_push = d_mean[i] / kn;
      g.d_tagmaps.at(0, inst[i].kp_type[j], inst[i].py[j], inst[i].px[j]) +=
          static_cast<float>(w.beta * (d_pull + d_push));
    }
  }

  g.heatmap_term = heatmap_loss(pred_heat, gt_heat);
  g.tag_term = tag_loss(pred_tags, gt_poses, w.push_sigma);
  g.total = total_loss(g.heatmap_term, g.tag_term, w);
  return g;
}

GradCheckReport check_loss_gradients(uint64_t seed, int trials, double step) {
  if (trials <= 0) throw std::invalid_argument("check_loss_gradients: trials must be > 0");
  std::mt19937_64 rng(seed);
  GradCheckReport report;
  report.trials = trials;

  auto uniform = [&](double lo, double hi) {
    return lo + (hi - lo) * (static_cast<double>(rng() >> 11) /
                             static_cast<double>(uint64_t{1} << 53));
  };

  for (int trial = 0; trial < trials; ++trial) {
    const int64_t K = 1 + static_cast<int64_t>(rng() % 4);
    const int64_t H = 6 + static_cast<int64_t>(rng() % 11);
    const int64_t W = 6 + static_cast<int64_t>(rng() % 11);
    const int64_t N = 1 + static_cast<int64_t>(rng() % 3);

    PoseSet gt;
    gt.num_keypoints = K;
    for (int64_t p = 0; p < N; ++p) {
      PersonInstance inst;
      inst.keypoints.resize(K);
      bool any = false;
      for (int64_t k = 0; k < K; ++k) {
        if (rng() % 5 == 0 && !(k == K - 1 && !any)) continue;  // some unlabeled
        Keypoint kp;
        kp.x = static_cast<double>(rng() % static_cast<uint64_t>(W));
        kp.y = static_cast<double>(rng() % static_cast<uint64_t>(H));
        kp.tag = uniform(-2.0, 2.0);
        kp.type = k;
        inst.keypoints[k] = kp;
        any = true;
      }
      gt.instances.push_back(std::move(inst));
    }

    const GroundTruth rendered = render_ground_truth(gt, H, W);
    Tensor pred_heat(1, K, H, W, 0.0f);
    Tensor pred_tags(1, K, H, W, 0.0f);
    for (float& v : pred_heat.data) v = static_cast<float>(uniform(0.0, 1.0));
    for (float& v : pred_tags.data) v = static_cast<float>(uniform(-2.0, 2.0));

    const LossWeights w;
    const LossGradients g =
        loss_gradients(pred_heat, pred_tags, rendered.heatmaps, gt, w);

    auto loss_at = [&]() {
      return total_loss(heatmap_loss(pred_heat, rendered.heatmaps),
                        tag_loss(pred_tags, gt, w.push_sigma), w);
    };
    auto check_coord = [&](Tensor& maps, const Tensor& grads, size_t idx) {
      const float orig = maps.data[idx];
      const float vp = static_cast<float>(static_cast<double>(orig) + step);
      const float vm = static_cast<float>(static_cast<double>(orig) - step);
      maps.data[idx] = vp;
      const double lp = loss_at();
      maps.data[idx] = vm;
      const double lm = loss_at();
      maps.data[idx] = orig;
      const double heff = static_cast<double>(vp) - static_cast<double>(vm);
      const double fd = (lp - lm) / heff;
      const double an = static_cast<double>(grads.data[idx]);
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      report.max_rel_error = std::max(report.max_rel_error, std::abs(fd - an) / denom);
      ++report.coords_checked;
    };

    // Every sampled tag position carries gradient; also probe a few cells
    // with zero analytic tag gradient and random heatmap cells.
    for (const PersonInstance& inst : gt.instances) {
      for (int64_t k = 0; k < K; ++k) {
        if (!inst.keypoints[k]) continue;
        const size_t idx = pred_tags.index(0, k, std::llround(inst.keypoints[k]->y),
                                           std::llround(inst.keypoints[k]->x));
        check_coord(pred_tags, g.d_tagmaps, idx);
      }
    }
    for (int probe = 0; probe < 10; ++probe) {
      check_coord(pred_heat, g.d_heatmaps, rng() % pred_heat.data.size());
      check_coord(pred_tags, g.d_tagmaps, rng() % pred_tags.data.size());
    }
  }
  return report;
}

std::vector<std::vector<Keypoint>> detect_peaks(const Tensor& heatmaps, const Tensor& tagmaps,
                                                const PeakParams& params) {
  if (!heatmaps.same_shape(tagmaps)) throw std::invalid_argument("detect_peaks: shape mismatch");
  if (params.threshold < 0.0 || params.threshold >= 1.0) {
    throw std::invalid_argument("detect_peaks: threshold must lie in [0, 1)");
  }
  if (params.max_persons <= 0) throw std::invalid_argument("detect_peaks: max_persons");
  const int64_t K = heatmaps.shape[1];
  const int64_t H = heatmaps.shape[2];
  const int64_t W = heatmaps.shape[3];
  std::vector<std::vector<Keypoint>> out(static_cast<size_t>(K));

  for (int64_t k = 0; k < K; ++k) {
    std::vector<Keypoint>& peaks = out[static_cast<size_t>(k)];
    for (int64_t y = 0; y < H; ++y) {
      for (int64_t x = 0; x < W; ++x) {
        const float v = heatmaps.at(0, k, y, x);
        if (!(v > params.threshold)) continue;
        bool is_peak = true;
        for (int64_t dy = -1; dy <= 1 && is_peak; ++dy) {
          for (int64_t dx = -1; dx <= 1 && is_peak; ++dx) {
            if (dy == 0 && dx == 0) continue;
            const int64_t ny = y + dy;
            const int64_t nx = x + dx;
            if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
            const float q = heatmaps.at(0, k, ny, nx);
            if (q > v || (q == v && (ny < y || (ny == y && nx < x)))) is_peak = false;
          }
        }
        if (!is_peak) continue;
        Keypoint kp;
        kp.type = k;
        kp.score = v;
        kp.tag = tagmaps.at(0, k, y, x);
        kp.x = static_cast<double>(x);
        kp.y = static_cast<double>(y);
        if (params.refine) {
          if (x > 0 && x + 1 < W) {
            const float r = heatmaps.at(0, k, y, x + 1);
            const float l = heatmaps.at(0, k, y, x - 1);
            if (r > l) kp.x += 0.25;
            if (l > r) kp.x -= 0.25;
          }
          if (y > 0 && y + 1 < H) {
            const float d = heatmaps.at(0, k, y + 1, x);
            const float u = heatmaps.at(0, k, y - 1, x);
            if (d > u) kp.y += 0.25;
            if (u > d) kp.y -= 0.25;
          }
        }
        peaks.push_back(kp);
      }
    }
    std::sort(peaks.begin(), peaks.end(), [](const Keypoint& a, const Keypoint& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.y != b.y) return a.y < b.y;
      return a.x < b.x;
    });
    if (static_cast<int64_t>(peaks.size()) > params.max_persons) {
      peaks.resize(static_cast<size_t>(params.max_persons));
    }
  }
  return out;
}

PoseSet group_keypoints(const std::vector<std::vector<Keypoint>>& detections_per_type,
                        double join_threshold) {
  if (join_threshold <= 0) throw std::invalid_argument("group_keypoints: join threshold");
  const int64_t K = static_cast<int64_t>(detections_per_type.size());

  struct Group {
    double tag_sum = 0.0;
    int64_t count = 0;
    std::vector<std::optional<Keypoint>> slots;
  };
  std::vector<Group> groups;

  for (int64_t k = 0; k < K; ++k) {
    for (const Keypoint& det : detections_per_type[static_cast<size_t>(k)]) {
      int best = -1;
      double best_dist = join_threshold;
      for (size_t gi = 0; gi < groups.size(); ++gi) {
        if (groups[gi].slots[static_cast<size_t>(k)]) continue;
        const double mean = groups[gi].tag_sum / static_cast<double>(groups[gi].count);
        const double dist = std::abs(det.tag - mean);
        if (dist < best_dist) {
          best_dist = dist;
          best = static_cast<int>(gi);
        }
      }
      if (best < 0) {
        Group g;
        g.slots.resize(static_cast<size_t>(K));
        groups.push_back(std::move(g));
        best = static_cast<int>(groups.size()) - 1;
      }
      Group& g = groups[static_cast<size_t>(best)];
      g.slots[static_cast<size_t>(k)] = det;
      g.tag_sum += det.tag;
      g.count += 1;
    }
  }

  PoseSet poses;
  poses.num_keypoints = K;
  for (Group& g : groups) {
    PersonInstance inst;
    inst.keypoints = std::move(g.slots);
    double score_sum = 0.0;
    for (const auto& kp : inst.keypoints) {
      if (kp) score_sum += kp->score;
    }
    inst.score = score_sum / static_cast<double>(g.count);
    poses.instances.push_back(std::move(inst));
  }
  return poses;
}

namespace {

Tensor hflip(const Tensor& t) {
  Tensor out(t.shape[0], t.shape[1], t.shape[2], t.shape[3], 0.0f);
  for (int64_t n = 0; n < t.shape[0]; ++n) {
    for (int64_t c = 0; c < t.shape[1]; ++c) {
      for (int64_t y = 0; y < t.shape[2]; ++y) {
        for (int64_t x = 0; x < t.shape[3]; ++x) {
          out.at(n, c, y, x) = t.at(n, c, y, t.shape[3] - 1 - x);
        }
      }
    }
  }
  return out;
}

Tensor swap_channels(const Tensor& t, const std::vector<int64_t>& perm) {
  Tensor out(t.shape[0], t.shape[1], t.shape[2], t.shape[3], 0.0f);
  const size_t plane = static_cast<size_t>(t.shape[2] * t.shape[3]);
  for (int64_t c = 0; c < t.shape[1]; ++c) {
    std::copy_n(t.data.begin() + static_cast<int64_t>(plane) * perm[static_cast<size_t>(c)],
                plane, out.data.begin() + static_cast<int64_t>(plane) * c);
  }
  return out;
}

Tensor average(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("flip_average: branch shape mismatch");
  Tensor out = a;
  for (size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = 0.5f * (a.data[i] + b.data[i]);
  }
  return out;
}

}  // namespace

std::pair<Tensor, Tensor> flip_average(const ForwardFn& forward, const Tensor& image,
                                       const std::vector<std::array<int64_t, 2>>& flip_pairs) {
  auto [heat, tags] = forward(image);
  auto [mheat, mtags] = forward(hflip(image));

  const int64_t K = heat.shape[1];
  std::vector<int64_t> perm(static_cast<size_t>(K));
  for (int64_t k = 0; k < K; ++k) perm[static_cast<size_t>(k)] = k;
  std::vector<bool> used(static_cast<size_t>(K), false);
  for (const auto& p : flip_pairs) {
    if (p[0] < 0 || p[0] >= K || p[1] < 0 || p[1] >= K || p[0] == p[1]) {
      throw std::invalid_argument("flip_average: flip pair out of range or degenerate");
    }
    if (used[static_cast<size_t>(p[0])] || used[static_cast<size_t>(p[1])]) {
      throw std::invalid_argument("flip_average: keypoint repeated across flip pairs");
    }
    used[static_cast<size_t>(p[0])] = used[static_cast<size_t>(p[1])] = true;
    perm[static_cast<size_t>(p[0])] = p[1];
    perm[static_cast<size_t>(p[1])] = p[0];
  }

  const Tensor back_heat = swap_channels(hflip(mheat), perm);
  const Tensor back_tags = swap_channels(hflip(mtags), perm);
  return {average(heat, back_heat), average(tags, back_tags)};
}

double oks_score(const PersonInstance& pred, const PersonInstance& gt, double scale,
                 const std::vector<double>& k_constants) {
  if (scale <= 0) throw std::invalid_argument("oks_score: scale must be positive");
  if (gt.keypoints.size() != pred.keypoints.size() ||
      gt.keypoints.size() != k_constants.size()) {
    throw std::invalid_argument("oks_score: slot count mismatch");
  }
  double sum = 0.0;
  int64_t labeled = 0;
  for (size_t k = 0; k < gt.keypoints.size(); ++k) {
    if (!gt.keypoints[k]) continue;
    if (k_constants[k] <= 0) throw std::invalid_argument("oks_score: k constants must be > 0");
    ++labeled;
    if (!pred.keypoints[k]) continue;  // missing prediction scores 0
    const double dx = pred.keypoints[k]->x - gt.keypoints[k]->x;
    const double dy = pred.keypoints[k]->y - gt.keypoints[k]->y;
    sum += std::exp(-(dx * dx + dy * dy) /
                    (2.0 * scale * scale * k_constants[k] * k_constants[k]));
  }
  if (labeled == 0) throw std::invalid_argument("oks_score: no labeled ground-truth keypoints");
  return sum / static_cast<double>(labeled);
}

std::string poses_to_json(const PoseSet& poses) {
  nlohmann::json j;
  j["num_keypoints"] = poses.num_keypoints;
  j["instances"] = nlohmann::json::array();
  for (const PersonInstance& inst : poses.instances) {
    nlohmann::json ji;
    ji["score"] = inst.score;
    ji["keypoints"] = nlohmann::json::array();
    for (const auto& kp : inst.keypoints) {
      if (kp) {
        ji["keypoints"].push_back(
            {{"x", kp->x}, {"y", kp->y}, {"score", kp->score}, {"tag", kp->tag}});
      } else {
        ji["keypoints"].push_back(nullptr);
      }
    }
    j["instances"].push_back(std::move(ji));
  }
  return j.dump(2) + "\n";
}

PoseSet poses_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("poses: invalid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("num_keypoints") || !j.contains("instances")) {
    throw std::invalid_argument("poses: missing num_keypoints or instances");
  }
  PoseSet poses;
  poses.num_keypoints = j.at("num_keypoints").get<int64_t>();
  for (const nlohmann::json& ji : j.at("instances")) {
    PersonInstance inst;
    inst.score = ji.at("score").get<double>();
    const nlohmann::json& kps = ji.at("keypoints");
    if (static_cast<int64_t>(kps.size()) != poses.num_keypoints) {
      throw std::invalid_argument("poses: keypoint slot count != num_keypoints");
    }
    int64_t type = 0;
    for (const nlohmann::json& jk : kps) {
      if (jk.is_null()) {
        inst.keypoints.emplace_back(std::nullopt);
      } else {
        Keypoint kp;
        kp.x = jk.at("x").get<double>();
        kp.y = jk.at("y").get<double>();
        kp.score = jk.at("score").get<double>();
        kp.tag = jk.at("tag").get<double>();
        kp.type = type;
        inst.keypoints.emplace_back(kp);
      }
      ++type;
    }
    poses.instances.push_back(std::move(inst));
  }
  return poses;
}

}  // namespace bhrnet
