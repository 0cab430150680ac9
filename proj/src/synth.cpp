#include "bhrnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace bhrnet {

namespace {

constexpr double kPi = 3.14159265358979323846;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) /
                           static_cast<double>(uint64_t{1} << 53));
}

}  // namespace

Scene sample_scene(uint64_t seed, const SceneParams& p) {
  if (p.num_keypoints <= 0 || p.num_persons <= 0) {
    throw std::invalid_argument("sample_scene: counts must be positive");
  }
  if (p.min_separation <= 0 || p.tag_separation <= 0 || p.star_radius < 1 || p.sigma <= 0) {
    throw std::invalid_argument("sample_scene: geometry knobs must be positive");
  }
  if (p.unlabeled_prob < 0 || p.unlabeled_prob >= 1) {
    throw std::invalid_argument("sample_scene: unlabeled_prob must lie in [0, 1)");
  }
  const int64_t margin = std::llround(p.star_radius) + 3;
  if (p.width <= 2 * margin || p.height <= 2 * margin) {
    throw std::invalid_argument("sample_scene: extents too small for the star radius");
  }

  std::mt19937_64 rng(seed);
  // Anchor spacing that guarantees keypoint spacing: each keypoint sits
  // within star_radius + 1 of its anchor (template radius plus jitter).
  const double anchor_gap = p.min_separation + 2.0 * (p.star_radius + 1.0);

  Scene scene;
  scene.seed = seed;
  scene.height = p.height;
  scene.width = p.width;
  scene.sigma = p.sigma;
  scene.poses.num_keypoints = p.num_keypoints;

  std::vector<std::pair<int64_t, int64_t>> anchors;
  for (int64_t n = 0; n < p.num_persons; ++n) {
    int64_t ax = 0, ay = 0;
    int tries = 0;
    for (;;) {
      ax = margin + static_cast<int64_t>(rng() % static_cast<uint64_t>(p.width - 2 * margin));
      ay = margin + static_cast<int64_t>(rng() % static_cast<uint64_t>(p.height - 2 * margin));
      bool ok = true;
      for (const auto& [bx, by] : anchors) {
        const double dx = static_cast<double>(ax - bx);
        const double dy = static_cast<double>(ay - by);
        if (std::sqrt(dx * dx + dy * dy) < anchor_gap) ok = false;
      }
      if (ok) break;
      if (++tries > 1000) {
        throw std::runtime_error("sample_scene: placement infeasible after 1000 tries");
      }
    }
    anchors.emplace_back(ax, ay);

    PersonInstance inst;
    inst.keypoints.resize(static_cast<size_t>(p.num_keypoints));
    bool any_labeled = false;
    for (int64_t k = 0; k < p.num_keypoints; ++k) {
      const double angle = 2.0 * kPi * static_cast<double>(k) /
                           static_cast<double>(p.num_keypoints);
      const int64_t jx = static_cast<int64_t>(rng() % 3) - 1;
      const int64_t jy = static_cast<int64_t>(rng() % 3) - 1;
      const bool drop = uniform(rng, 0.0, 1.0) < p.unlabeled_prob;
      if (drop && !(k == p.num_keypoints - 1 && !any_labeled)) continue;
      Keypoint kp;
      kp.type = k;
      kp.x = static_cast<double>(
          std::llround(static_cast<double>(ax) + p.star_radius * std::cos(angle)) + jx);
      kp.y = static_cast<double>(
          std::llround(static_cast<double>(ay) + p.star_radius * std::sin(angle)) + jy);
      kp.tag = static_cast<double>(n) * p.tag_separation;
      kp.score = 1.0;
      inst.keypoints[static_cast<size_t>(k)] = kp;
      any_labeled = true;
    }
    scene.poses.instances.push_back(std::move(inst));
  }

  const GroundTruth gt = render_ground_truth(scene.poses, p.height, p.width, p.sigma);
  scene.heatmaps = gt.heatmaps;
  scene.tagmaps = gt.tagmaps;
  scene.mask = gt.mask;
  return scene;
}

void apply_noise(Scene& scene, uint64_t seed, double map_amplitude, double tag_jitter) {
  if (map_amplitude < 0 || tag_jitter < 0) {
    throw std::invalid_argument("apply_noise: amplitudes must be non-negative");
  }
  std::mt19937_64 rng(seed);
  if (map_amplitude > 0) {
    for (float& v : scene.heatmaps.data) {
      v += static_cast<float>(uniform(rng, -map_amplitude, map_amplitude));
    }
  }
  if (tag_jitter > 0) {
    for (float& v : scene.tagmaps.data) {
      v += static_cast<float>(uniform(rng, -tag_jitter, tag_jitter));
    }
  }
}

namespace {

// Instances compared and emitted in a canonical order: mean tag, then the
// lowest occupied slot's geometry.
void sort_instances(PoseSet& poses) {
  auto key = [](const PersonInstance& inst) {
    double sum = 0.0;
    int64_t count = 0;
    for (const auto& kp : inst.keypoints) {
      if (kp) {
        sum += kp->tag;
        ++count;
      }
    }
    double first_y = 0.0, first_x = 0.0;
    for (const auto& kp : inst.keypoints) {
      if (kp) {
        first_y = kp->y;
        first_x = kp->x;
        break;
      }
    }
    return std::tuple(count > 0 ? sum / static_cast<double>(count) : 0.0, first_y, first_x);
  };
  std::stable_sort(poses.instances.begin(), poses.instances.end(),
                   [&](const PersonInstance& a, const PersonInstance& b) {
                     return key(a) < key(b);
                   });
}

}  // namespace

PoseSet oracle_group(const std::vector<std::vector<Keypoint>>& detections_per_type) {
  const int64_t K = static_cast<int64_t>(detections_per_type.size());
  if (K > 6) throw std::invalid_argument("oracle_group: more than 6 keypoint types");
  size_t groups = 0;
  for (const auto& dets : detections_per_type) {
    groups = std::max(groups, dets.size());
  }
  if (groups > 3) throw std::invalid_argument("oracle_group: more than 3 instances");

  PoseSet result;
  result.num_keypoints = K;
  if (groups == 0) return result;

  // Canonical detection order makes the enumeration input-order independent.
  std::vector<std::vector<Keypoint>> dets = detections_per_type;
  for (auto& d : dets) {
    std::sort(d.begin(), d.end(), [](const Keypoint& a, const Keypoint& b) {
      return std::tuple(a.tag, a.y, a.x, a.score) < std::tuple(b.tag, b.y, b.x, b.score);
    });
  }

  // All injective maps from one type's detections to the G instances.
  std::vector<std::vector<std::vector<int>>> options(static_cast<size_t>(K));
  for (int64_t k = 0; k < K; ++k) {
    const size_t m = dets[static_cast<size_t>(k)].size();
    std::vector<int> current(m, 0);
    std::vector<bool> used(groups, false);
    auto rec = [&](auto&& self, size_t det) -> void {
      if (det == m) {
        options[static_cast<size_t>(k)].push_back(current);
        return;
      }
      for (size_t g = 0; g < groups; ++g) {
        if (used[g]) continue;
        used[g] = true;
        current[det] = static_cast<int>(g);
        self(self, det + 1);
        used[g] = false;
      }
    };
    rec(rec, 0);
  }

  std::vector<int> choice(static_cast<size_t>(K), 0);
  std::vector<int> best_choice;
  double best_cost = std::numeric_limits<double>::infinity();

  auto eval = [&]() {
    std::vector<double> sum(groups, 0.0), sumsq(groups, 0.0);
    std::vector<int> count(groups, 0);
    for (int64_t k = 0; k < K; ++k) {
      const auto& assign = options[static_cast<size_t>(k)][static_cast<size_t>(
          choice[static_cast<size_t>(k)])];
      for (size_t j = 0; j < assign.size(); ++j) {
        const double t = dets[static_cast<size_t>(k)][j].tag;
        const size_t g = static_cast<size_t>(assign[j]);
        sum[g] += t;
        sumsq[g] += t * t;
        count[g] += 1;
      }
    }
    double cost = 0.0;
    for (size_t g = 0; g < groups; ++g) {
      if (count[g] > 0) cost += sumsq[g] - sum[g] * sum[g] / static_cast<double>(count[g]);
    }
    return cost;
  };

  auto search = [&](auto&& self, size_t k) -> void {
    if (k == static_cast<size_t>(K)) {
      const double cost = eval();
      if (cost < best_cost) {
        best_cost = cost;
        best_choice = choice;
      }
      return;
    }
    for (size_t i = 0; i < options[k].size(); ++i) {
      choice[k] = static_cast<int>(i);
      self(self, k + 1);
    }
  };
  search(search, 0);

  std::vector<PersonInstance> inst(groups);
  std::vector<int> count(groups, 0);
  std::vector<double> score_sum(groups, 0.0);
  for (auto& i : inst) i.keypoints.resize(static_cast<size_t>(K));
  for (int64_t k = 0; k < K; ++k) {
    const auto& assign = options[static_cast<size_t>(k)][static_cast<size_t>(
        best_choice[static_cast<size_t>(k)])];
    for (size_t j = 0; j < assign.size(); ++j) {
      const size_t g = static_cast<size_t>(assign[j]);
      inst[g].keypoints[static_cast<size_t>(k)] = dets[static_cast<size_t>(k)][j];
      score_sum[g] += dets[static_cast<size_t>(k)][j].score;
      count[g] += 1;
    }
  }
  for (size_t g = 0; g < groups; ++g) {
    if (count[g] == 0) continue;
    inst[g].score = score_sum[g] / static_cast<double>(count[g]);
    result.instances.push_back(std::move(inst[g]));
  }
  sort_instances(result);
  return result;
}

namespace {

double instance_scale(const PersonInstance& inst) {
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  bool any = false;
  for (const auto& kp : inst.keypoints) {
    if (!kp) continue;
    xmin = std::min(xmin, kp->x);
    xmax = std::max(xmax, kp->x);
    ymin = std::min(ymin, kp->y);
    ymax = std::max(ymax, kp->y);
    any = true;
  }
  if (!any) throw std::invalid_argument("evaluate_decoder: instance with no labeled keypoints");
  return std::sqrt((xmax - xmin + 1.0) * (ymax - ymin + 1.0));
}

}  // namespace

EvalReport evaluate_decoder(const std::vector<Scene>& scenes, const EvalParams& params) {
  if (scenes.empty()) throw std::invalid_argument("evaluate_decoder: no scenes");
  EvalReport report;
  double oks_sum = 0.0;

  for (const Scene& scene : scenes) {
    const auto peaks = detect_peaks(scene.heatmaps, scene.tagmaps, params.peaks);
    const PoseSet decoded = group_keypoints(peaks, params.join_threshold);
    const std::vector<double> ks(static_cast<size_t>(scene.poses.num_keypoints), params.oks_k);

    const size_t n_gt = scene.poses.instances.size();
    const size_t n_dec = decoded.instances.size();
    std::vector<std::vector<double>> oks(n_gt, std::vector<double>(n_dec, 0.0));
    for (size_t g = 0; g < n_gt; ++g) {
      const double s = instance_scale(scene.poses.instances[g]);
      for (size_t d = 0; d < n_dec; ++d) {
        oks[g][d] = oks_score(decoded.instances[d], scene.poses.instances[g], s, ks);
      }
    }

    // Greedy global matching: repeatedly take the best remaining pair.
    std::vector<bool> gt_done(n_gt, false), dec_done(n_dec, false);
    report.total_instances += static_cast<int64_t>(n_gt);
    for (;;) {
      double best = params.match_threshold;
      int bg = -1, bd = -1;
      for (size_t g = 0; g < n_gt; ++g) {
        if (gt_done[g]) continue;
        for (size_t d = 0; d < n_dec; ++d) {
          if (dec_done[d]) continue;
          if (oks[g][d] > best || (bg < 0 && oks[g][d] == best)) {
            best = oks[g][d];
            bg = static_cast<int>(g);
            bd = static_cast<int>(d);
          }
        }
      }
      if (bg < 0) break;
      gt_done[static_cast<size_t>(bg)] = true;
      dec_done[static_cast<size_t>(bd)] = true;
      report.matched += 1;
      oks_sum += best;
    }
    for (size_t g = 0; g < n_gt; ++g) {
      if (!gt_done[g]) report.missed += 1;
    }
  }

  report.mean_oks = oks_sum / static_cast<double>(report.total_instances);
  report.detection_rate =
      static_cast<double>(report.matched) / static_cast<double>(report.total_instances);
  return report;
}

std::string scenes_to_json(const std::vector<Scene>& scenes) {
  nlohmann::json j;
  j["scenes"] = nlohmann::json::array();
  for (const Scene& s : scenes) {
    nlohmann::json js;
    js["seed"] = s.seed;
    js["height"] = s.height;
    js["width"] = s.width;
    js["sigma"] = s.sigma;
    js["poses"] = nlohmann::json::parse(poses_to_json(s.poses));
    j["scenes"].push_back(std::move(js));
  }
  return j.dump(2) + "\n";
}

std::vector<Scene> scenes_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("scenes: invalid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("scenes") || !j.at("scenes").is_array()) {
    throw std::invalid_argument("scenes: missing scenes array");
  }
  std::vector<Scene> out;
  for (const nlohmann::json& js : j.at("scenes")) {
    Scene s;
    s.seed = js.at("seed").get<uint64_t>();
    s.height = js.at("height").get<int64_t>();
    s.width = js.at("width").get<int64_t>();
    s.sigma = js.at("sigma").get<double>();
    s.poses = poses_from_json(js.at("poses").dump());
    const GroundTruth gt = render_ground_truth(s.poses, s.height, s.width, s.sigma);
    s.heatmaps = gt.heatmaps;
    s.tagmaps = gt.tagmaps;
    s.mask = gt.mask;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace bhrnet
