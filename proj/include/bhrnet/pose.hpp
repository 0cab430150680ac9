#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bhrnet/tensor.hpp"

namespace bhrnet {

// One detected or ground-truth keypoint in heatmap pixel coordinates.
struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double score = 0.0;
  double tag = 0.0;
  int64_t type = 0;
};

struct PersonInstance {
  std::vector<std::optional<Keypoint>> keypoints;  // one slot per type
  double score = 0.0;
};

struct PoseSet {
  int64_t num_keypoints = 0;
  std::vector<PersonInstance> instances;
};

struct LossWeights {
  double alpha = 0.99;      // heatmap term
  double beta = 0.01;       // tag term
  double sigma = 2.0;       // heatmap Gaussian width
  double push_sigma = 1.0;  // tag push width
};

struct GroundTruth {
  Tensor heatmaps;  // (1, K, H, W), per-pixel max over person Gaussians
  Tensor tagmaps;   // (1, K, H, W), person tag painted near each keypoint
  Tensor mask;      // (1, K, H, W), 1 at labeled keypoint pixels
};

// Renders exp(-d^2 / sigma^2) Gaussians per labeled keypoint, max-combined
// across persons. Tagmaps hold each person's tag on a square of the given
// radius around the keypoint (later persons win on overlap), so peak pixels
// and their quarter-pixel refinements sample the intended tag. Keypoints
// must land inside the map after rounding.
GroundTruth render_ground_truth(const PoseSet& poses, int64_t h, int64_t w, double sigma = 2.0,
                                int64_t tag_radius = 2);

// Mean squared error over all K*H*W cells, accumulated in double.
double heatmap_loss(const Tensor& pred, const Tensor& gt);

// Pull-to-mean plus pairwise push between instance mean tags, sampled at the
// ground-truth keypoints' integer positions. Instances without labeled
// keypoints are skipped; zero usable instances is an error.
double tag_loss(const Tensor& pred_tags, const PoseSet& gt, double push_sigma = 1.0);

double total_loss(double lh, double lt, const LossWeights& w = {});

struct LossGradients {
  double heatmap_term = 0.0;
  double tag_term = 0.0;
  double total = 0.0;
  Tensor d_heatmaps;  // d total / d predicted heatmaps
  Tensor d_tagmaps;
};

LossGradients loss_gradients(const Tensor& pred_heat, const Tensor& pred_tags,
                             const Tensor& gt_heat, const PoseSet& gt_poses,
                             const LossWeights& w = {});

struct GradCheckReport {
  double max_rel_error = 0.0;
  int trials = 0;
  int coords_checked = 0;
};

// Central finite differences against the analytic gradients on random small
// instances. The perturbation is applied in f32 and the realized step is
// measured in double, so the comparison tests the math, not float rounding.
GradCheckReport check_loss_gradients(uint64_t seed, int trials, double step = 1e-3);

struct PeakParams {
  double threshold = 0.1;
  int64_t max_persons = 10;
  bool refine = true;  // shift 0.25 px toward the larger neighbor per axis
};

// Local maxima per type: strictly above every 8-neighbor, with equal values
// resolved toward the lexicographically smallest (row, column) pixel, so a
// constant plateau yields exactly one peak. Tags are sampled at the integer
// peak pixel. Results per type are sorted by descending score (ties by row
// then column) and truncated to max_persons.
std::vector<std::vector<Keypoint>> detect_peaks(const Tensor& heatmaps, const Tensor& tagmaps,
                                                const PeakParams& params = {});

// Greedy associative grouping: types in index order, detections in score
// order; a detection joins the group with the nearest running-mean tag if
// that distance is below the threshold and the slot is free, else it opens a
// new group. Instance score is the mean member keypoint score.
PoseSet group_keypoints(const std::vector<std::vector<Keypoint>>& detections_per_type,
                        double join_threshold = 1.0);

using ForwardFn = std::function<std::pair<Tensor, Tensor>(const Tensor&)>;

// Averages forward(image) with the mirrored forward of the mirrored image,
// swapping channel pairs (left/right keypoints) on the way back.
std::pair<Tensor, Tensor> flip_average(const ForwardFn& forward, const Tensor& image,
                                       const std::vector<std::array<int64_t, 2>>& flip_pairs);

// Mean over labeled gt keypoints of exp(-d^2 / (2 s^2 k_i^2)); a labeled
// keypoint with no matching prediction contributes 0.
double oks_score(const PersonInstance& pred, const PersonInstance& gt, double scale,
                 const std::vector<double>& k_constants);

std::string poses_to_json(const PoseSet& poses);
PoseSet poses_from_json(const std::string& text);

}  // namespace bhrnet
