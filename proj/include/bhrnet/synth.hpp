#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bhrnet/pose.hpp"
#include "bhrnet/tensor.hpp"

namespace bhrnet {

struct SceneParams {
  int64_t num_keypoints = 3;
  int64_t height = 64;
  int64_t width = 64;
  int64_t num_persons = 2;
  double min_separation = 8.0;   // between keypoints of different persons
  double tag_separation = 4.0;   // person n carries tag n * tag_separation
  double unlabeled_prob = 0.0;   // per keypoint; one per person always survives
  double star_radius = 3.0;      // keypoint spread around the person anchor
  double sigma = 2.0;            // heatmap Gaussian width
};

// A generated scene: ground-truth poses at integer pixel positions plus the
// maps rendered from them. Reproducible from (seed, params).
struct Scene {
  uint64_t seed = 0;
  int64_t height = 0;
  int64_t width = 0;
  double sigma = 2.0;
  PoseSet poses;
  Tensor heatmaps;
  Tensor tagmaps;
  Tensor mask;
};

// Persons are star-shaped point sets with 1 px jitter, placed so keypoints
// of different persons stay at least min_separation apart. Placement is
// rejection sampled; an infeasible request fails after bounded retries.
Scene sample_scene(uint64_t seed, const SceneParams& params = {});

// Additive uniform noise: amplitude on the heatmaps, jitter on the tagmaps.
// A zero knob leaves the corresponding tensor untouched bit for bit.
void apply_noise(Scene& scene, uint64_t seed, double map_amplitude, double tag_jitter);

// Exhaustive reference grouping: enumerates every assignment of detections
// to G instances (G = the largest per-type detection count, each type using
// distinct instances) and returns the one minimizing the total squared tag
// distance to instance means. Detections are canonically sorted first, so
// the result ignores input order. Instances come back sorted by mean tag.
// Guards the search space: at most 3 instances and 6 keypoint types.
PoseSet oracle_group(const std::vector<std::vector<Keypoint>>& detections_per_type);

struct EvalParams {
  PeakParams peaks;
  double join_threshold = 1.0;
  double oks_k = 0.1;           // uniform per-type OKS constant
  double match_threshold = 0.5; // a ground-truth instance counts as matched at this OKS
};

struct EvalReport {
  int64_t total_instances = 0;
  int64_t matched = 0;
  int64_t missed = 0;
  double mean_oks = 0.0;       // over all ground-truth instances, unmatched scoring 0
  double detection_rate = 0.0; // matched / total
};

// Decodes every scene's maps with detect_peaks + group_keypoints and matches
// decoded instances to ground truth greedily by best OKS. The OKS scale is
// the square root of the instance's labeled bounding-box area, padded by one
// pixel on each axis.
EvalReport evaluate_decoder(const std::vector<Scene>& scenes, const EvalParams& params = {});

// Generative fixture format: seed, extents, sigma, and poses. Maps are
// re-rendered on load, so noise applied after sampling is not preserved.
std::string scenes_to_json(const std::vector<Scene>& scenes);
std::vector<Scene> scenes_from_json(const std::string& text);

}  // namespace bhrnet
