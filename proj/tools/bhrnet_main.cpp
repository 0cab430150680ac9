#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bhrnet/config.hpp"
#include "bhrnet/cost.hpp"
#include "bhrnet/network.hpp"
#include "bhrnet/pose.hpp"
#include "bhrnet/serial.hpp"
#include "bhrnet/synth.hpp"

namespace {

using namespace bhrnet;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

int run_cost(const std::string& config, int64_t input_size, bool json) {
  const NetworkSpec spec = resolve_config(config);
  Network net = build_network(spec);
  const CostReport report = cost_report(net, input_size, input_size);
  std::cout << (json ? report_to_json(report) : report_to_text(report));
  return 0;
}

int run_init_weights(const std::string& config, uint64_t seed, const std::string& output) {
  const NetworkSpec spec = resolve_config(config);
  Network net = build_network(spec);
  init_weights(net, seed);
  save_weights(output, net);
  uint64_t values = 0;
  const auto params = parameters(net);
  for (const ParamRef& p : params) values += p.count;
  std::cout << "wrote " << output << ": " << params.size() << " tensors, " << values
            << " values (seed " << seed << ")\n";
  return 0;
}

int run_infer(const std::string& config, const std::string& weights, const std::string& input,
              const std::string& out_heat, const std::string& out_tags, bool flip) {
  const NetworkSpec spec = resolve_config(config);
  Network net = build_network(spec);
  load_weights(weights, net);
  const Tensor image = load_tensor(input);

  Tensor heat, tags;
  if (flip) {
    ForwardFn forward = [&](const Tensor& t) { return network_forward(net, t); };
    std::tie(heat, tags) = flip_average(forward, image, spec.flip_pairs);
  } else {
    std::tie(heat, tags) = network_forward(net, image);
  }
  save_tensor(out_heat, heat);
  save_tensor(out_tags, tags);
  std::cout << "heatmaps " << heat.shape_str() << " -> " << out_heat << "\n";
  std::cout << "tagmaps " << tags.shape_str() << " -> " << out_tags << "\n";
  return 0;
}

int run_decode(const std::string& heat_path, const std::string& tags_path, double threshold,
               double join_threshold, const std::string& output) {
  const Tensor heat = load_tensor(heat_path);
  const Tensor tags = load_tensor(tags_path);
  PeakParams params;
  params.threshold = threshold;
  const PoseSet poses = group_keypoints(detect_peaks(heat, tags, params), join_threshold);
  const std::string text = poses_to_json(poses);
  if (output.empty()) {
    std::cout << text;
  } else {
    write_text(output, text);
    std::cout << "wrote " << output << ": " << poses.instances.size() << " instances\n";
  }
  return 0;
}

int run_loss_check(uint64_t seed, int trials) {
  const GradCheckReport report = check_loss_gradients(seed, trials);
  const bool pass = report.max_rel_error < 1e-4;
  std::cout << "trials " << report.trials << "\n";
  std::cout << "coords " << report.coords_checked << "\n";
  std::cout << "max relative error " << std::scientific << std::setprecision(3)
            << report.max_rel_error << "\n";
  std::cout << "gate 1e-4: " << (pass ? "PASS" : "FAIL") << "\n";
  return pass ? 0 : 2;
}

int run_synth_eval(uint64_t seed, int64_t num_scenes, int64_t persons, double noise,
                   double tag_jitter) {
  if (num_scenes <= 0) throw std::invalid_argument("synth-eval: need at least one scene");
  SceneParams params;
  params.num_persons = persons;
  std::vector<Scene> scenes;
  for (int64_t i = 0; i < num_scenes; ++i) {
    Scene s = sample_scene(seed + static_cast<uint64_t>(i), params);
    if (noise > 0 || tag_jitter > 0) {
      apply_noise(s, seed ^ (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(i + 1)), noise,
                  tag_jitter);
    }
    scenes.push_back(std::move(s));
  }
  const EvalReport r = evaluate_decoder(scenes);
  std::cout << "scenes " << num_scenes << "\n";
  std::cout << "instances " << r.total_instances << "\n";
  std::cout << "matched " << r.matched << "\n";
  std::cout << "missed " << r.missed << "\n";
  std::cout << std::fixed << std::setprecision(4);
  std::cout << "detection rate " << r.detection_rate << "\n";
  std::cout << "mean oks " << r.mean_oks << "\n";
  return 0;
}

// Per-resolution MAC shares of the branch buckets (between stem and head).
std::vector<BucketShare> resolution_buckets(const CostReport& r) {
  std::vector<BucketShare> out;
  for (const BucketShare& b : r.buckets) {
    if (b.bucket.rfind("1/", 0) == 0) out.push_back(b);
  }
  return out;
}

int run_compare_dist(const std::string& config_a, const std::string& config_b,
                     int64_t input_size) {
  const NetworkSpec spec_a = resolve_config(config_a);
  const NetworkSpec spec_b = resolve_config(config_b);
  Network net_a = build_network(spec_a);
  Network net_b = build_network(spec_b);
  const CostReport ra = cost_report(net_a, input_size, input_size);
  const CostReport rb = cost_report(net_b, input_size, input_size);

  std::cout << "input " << input_size << "x" << input_size << "\n";
  std::cout << std::left << std::setw(8) << "bucket" << std::right << std::setw(14)
            << spec_a.name << std::setw(8) << "share" << std::setw(14) << spec_b.name
            << std::setw(8) << "share" << "\n";
  std::cout << std::fixed << std::setprecision(1);
  for (size_t i = 0; i < ra.buckets.size() || i < rb.buckets.size(); ++i) {
    const std::string bucket =
        i < ra.buckets.size() ? ra.buckets[i].bucket
                              : rb.buckets[i].bucket;
    std::cout << std::left << std::setw(8) << bucket << std::right;
    if (i < ra.buckets.size()) {
      std::cout << std::setw(14) << ra.buckets[i].macs << std::setw(7)
                << ra.buckets[i].percent << "%";
    } else {
      std::cout << std::setw(14) << "-" << std::setw(8) << "-";
    }
    if (i < rb.buckets.size()) {
      std::cout << std::setw(14) << rb.buckets[i].macs << std::setw(7)
                << rb.buckets[i].percent << "%";
    } else {
      std::cout << std::setw(14) << "-" << std::setw(8) << "-";
    }
    std::cout << "\n";
  }

  const std::vector<BucketShare> res_a = resolution_buckets(ra);
  const std::vector<BucketShare> res_b = resolution_buckets(rb);
  if (res_a.empty() || res_b.empty()) {
    throw std::runtime_error("compare-dist: no resolution buckets");
  }
  bool monotone = true;
  for (size_t i = 1; i < res_a.size(); ++i) {
    if (!(res_a[i - 1].macs > res_a[i].macs)) monotone = false;
  }
  auto spread = [](const std::vector<BucketShare>& buckets) {
    uint64_t lo = buckets[0].macs, hi = buckets[0].macs;
    for (const BucketShare& b : buckets) {
      lo = std::min(lo, b.macs);
      hi = std::max(hi, b.macs);
    }
    if (lo == 0) throw std::runtime_error("compare-dist: empty resolution bucket");
    return static_cast<double>(hi) / static_cast<double>(lo);
  };
  const double ratio_a = spread(res_a);
  const double ratio_b = spread(res_b);
  const bool balanced = ratio_b <= 0.5 * ratio_a;

  std::cout << std::setprecision(3);
  std::cout << "share ratio " << spec_a.name << " " << ratio_a << ", " << spec_b.name << " "
            << ratio_b << "\n";
  std::cout << "monotone decreasing (" << spec_a.name << "): " << (monotone ? "yes" : "no")
            << "\n";
  std::cout << "balance ratio at most half (" << spec_b.name << "): "
            << (balanced ? "yes" : "no") << "\n";
  const bool pass = monotone && balanced;
  std::cout << "check: " << (pass ? "PASS" : "FAIL") << "\n";
  return pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"balanced high-resolution pose network toolkit"};
  app.require_subcommand(1);

  std::string cost_config;
  int64_t cost_size = 256;
  bool cost_json = false;
  CLI::App* cost = app.add_subcommand("cost", "analytic parameter and MAC report");
  cost->add_option("--config", cost_config, "config name or JSON path")->required();
  cost->add_option("--input-size", cost_size, "square input resolution");
  cost->add_flag("--json", cost_json, "emit the structured report");

  std::string init_config, init_output;
  uint64_t init_seed = 1;
  CLI::App* init = app.add_subcommand("init-weights", "write seeded random weights");
  init->add_option("--config", init_config, "config name or JSON path")->required();
  init->add_option("--seed", init_seed, "rng seed");
  init->add_option("--output", init_output, "weight file to write")->required();

  std::string infer_config, infer_weights, infer_input, infer_heat, infer_tags;
  bool infer_flip = false;
  CLI::App* infer = app.add_subcommand("infer", "run the network on a raw tensor");
  infer->add_option("--config", infer_config, "config name or JSON path")->required();
  infer->add_option("--weights", infer_weights, "weight file")->required();
  infer->add_option("--input", infer_input, "input image tensor file")->required();
  infer->add_option("--output-heatmaps", infer_heat, "heatmap tensor file to write")
      ->required();
  infer->add_option("--output-tagmaps", infer_tags, "tagmap tensor file to write")->required();
  infer->add_flag("--flip", infer_flip, "average with the mirrored forward pass");

  std::string dec_heat, dec_tags, dec_output;
  double dec_threshold = 0.1, dec_join = 1.0;
  CLI::App* dec = app.add_subcommand("decode", "decode maps into pose instances");
  dec->add_option("--heatmaps", dec_heat, "heatmap tensor file")->required();
  dec->add_option("--tagmaps", dec_tags, "tagmap tensor file")->required();
  dec->add_option("--threshold", dec_threshold, "peak threshold");
  dec->add_option("--join-threshold", dec_join, "tag distance for joining a group");
  dec->add_option("--output", dec_output, "write instances here instead of stdout");

  uint64_t loss_seed = 7;
  int loss_trials = 20;
  CLI::App* loss = app.add_subcommand("loss-check", "finite-difference gradient suite");
  loss->add_option("--seed", loss_seed, "rng seed");
  loss->add_option("--trials", loss_trials, "random instances to check");

  uint64_t eval_seed = 1;
  int64_t eval_scenes = 100, eval_persons = 2;
  double eval_noise = 0.0, eval_jitter = 0.0;
  CLI::App* eval = app.add_subcommand("synth-eval", "decode synthetic scenes and score them");
  eval->add_option("--seed", eval_seed, "rng seed");
  eval->add_option("--scenes", eval_scenes, "number of scenes");
  eval->add_option("--persons", eval_persons, "persons per scene");
  eval->add_option("--noise", eval_noise, "uniform heatmap noise amplitude");
  eval->add_option("--tag-jitter", eval_jitter, "uniform tagmap noise amplitude");

  std::string cmp_a, cmp_b;
  int64_t cmp_size = 256;
  CLI::App* cmp = app.add_subcommand("compare-dist", "per-resolution MAC shares side by side");
  cmp->add_option("--config-a", cmp_a, "reference config")->required();
  cmp->add_option("--config-b", cmp_b, "balanced config")->required();
  cmp->add_option("--input-size", cmp_size, "square input resolution");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*cost) return run_cost(cost_config, cost_size, cost_json);
    if (*init) return run_init_weights(init_config, init_seed, init_output);
    if (*infer) {
      return run_infer(infer_config, infer_weights, infer_input, infer_heat, infer_tags,
                       infer_flip);
    }
    if (*dec) return run_decode(dec_heat, dec_tags, dec_threshold, dec_join, dec_output);
    if (*loss) return run_loss_check(loss_seed, loss_trials);
    if (*eval) return run_synth_eval(eval_seed, eval_scenes, eval_persons, eval_noise,
                                     eval_jitter);
    if (*cmp) return run_compare_dist(cmp_a, cmp_b, cmp_size);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
