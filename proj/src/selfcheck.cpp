#include "efs/selfcheck.hpp"

#include <cmath>
#include <sstream>

#include "efs/autodiff.hpp"
#include "efs/data_pipeline.hpp"
#include "efs/encodings.hpp"
#include "efs/event_sim.hpp"
#include "efs/reference.hpp"

namespace efs {

namespace {

// Copies a tensor but registers a backward pass that over-propagates the
// gradient by 5%. Used only for fault injection.
TensorD corrupt_backward(const TensorD& x) {
  auto node = std::make_shared<Node<double>>();
  node->shape = x.shape();
  node->values = x.values();
  node->requires_grad = x.node()->requires_grad;
  if (node->requires_grad) {
    node->parents = {x.node()};
    node->backward_fn = [](Node<double>& self) {
      auto& p = self.parents[0];
      p->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * 1.05;
    };
  }
  return TensorD::wrap(node);
}

using OpFn = std::function<TensorD(const std::vector<TensorD>&)>;

double run_primitive_check(const OpFn& op, std::vector<TensorD> inputs, bool corrupt,
                           uint64_t seed) {
  OpFn wrapped = op;
  if (corrupt) {
    wrapped = [op](const std::vector<TensorD>& in) { return corrupt_backward(op(in)); };
  }
  return grad_check_op<double>(wrapped, inputs, seed);
}

SelfCheckResult gradient_check(const std::string& name, const OpFn& op,
                               std::vector<TensorD> inputs, const std::string& inject_fault) {
  SelfCheckResult result;
  result.name = "grad_" + name;
  const double err = run_primitive_check(op, std::move(inputs), inject_fault == name, 1234);
  std::ostringstream os;
  os << "max relative gradient error " << err;
  result.detail = os.str();
  result.pass = err < 1e-4;
  return result;
}

SelfCheckResult voxel_partition_of_unity() {
  SelfCheckResult result;
  result.name = "voxel_partition_of_unity";
  EventStream stream;
  stream.width = 6;
  stream.height = 6;
  stream.sweep = FocalSweep{1.0, 10.0, 1.0, 0.0, 16};
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> t_dist(0.0, 1.0);
  std::uniform_int_distribution<int> c_dist(0, 5);
  for (int i = 0; i < 500; ++i) {
    Event e;
    e.t_s = t_dist(rng);
    e.x = static_cast<uint16_t>(c_dist(rng));
    e.y = static_cast<uint16_t>(c_dist(rng));
    e.polarity = (rng() & 1) ? 1 : -1;
    stream.events.push_back(e);
  }
  sort_events(stream.events);

  EncodingConfig enc{8, 6, 6};
  const VoxelGrid grid = build_voxel_grid(stream, enc);
  double total = 0.0;
  bool nonnegative = true;
  for (double v : grid.values.data) {
    total += v;
    nonnegative = nonnegative && v >= 0.0;
  }
  const double mass_error = std::abs(total - static_cast<double>(stream.count()));
  std::ostringstream os;
  os << "total mass " << total << " for " << stream.count() << " events";
  result.detail = os.str();
  result.pass = nonnegative && mass_error < 1e-9 * std::max<double>(1.0, stream.count());
  return result;
}

SelfCheckResult event_sim_oracle() {
  SelfCheckResult result;
  result.name = "event_sim_oracle";

  SceneConfig scene_cfg;
  scene_cfg.num_objects = 1;
  scene_cfg.height = 6;
  scene_cfg.width = 6;
  scene_cfg.seed = 3;
  scene_cfg.texture.cell_px = 2;
  const Scene scene = generate_scene(scene_cfg);
  const LensConfig lens;
  const FocalSweep sweep{1.0, 10.0, 0.5, 0.0, 12};
  const auto frames = render_focal_sweep(scene, lens, sweep);
  EventSimConfig sim;
  sim.threshold_c = 0.15;
  const EventStream stream = simulate_events(frames, sim);

  const int oversample = 100;
  const double step = (frames[1].timestamp_s - frames[0].timestamp_s) / oversample;
  for (int y = 0; y < scene_cfg.height; ++y) {
    for (int x = 0; x < scene_cfg.width; ++x) {
      std::vector<Event> pixel;
      for (const Event& e : stream.events) {
        if (e.x == x && e.y == y) pixel.push_back(e);
      }
      const auto oracle =
          dense_threshold_scan_pixel(frames, x, y, sim.threshold_c, sim.log_eps, oversample);
      if (pixel.size() != oracle.size()) {
        result.detail = "event count mismatch at pixel (" + std::to_string(x) + "," +
                        std::to_string(y) + ")";
        return result;
      }
      for (size_t i = 0; i < pixel.size(); ++i) {
        if (pixel[i].polarity != oracle[i].polarity ||
            std::abs(pixel[i].t_s - oracle[i].t_s) > step + 1e-12) {
          result.detail = "event mismatch at pixel (" + std::to_string(x) + "," +
                          std::to_string(y) + ") index " + std::to_string(i);
          return result;
        }
      }
    }
  }
  result.detail = std::to_string(stream.count()) + " events matched the dense scanner";
  result.pass = true;
  return result;
}

}  // namespace

std::vector<SelfCheckResult> run_selfcheck(const std::string& inject_fault) {
  std::vector<SelfCheckResult> results;
  std::mt19937_64 rng(77);

  auto t = [&rng](std::vector<int> shape, double stddev = 1.0) {
    return randn<double>(std::move(shape), rng, stddev, true);
  };

  results.push_back(gradient_check(
      "add", [](const std::vector<TensorD>& in) { return add(in[0], in[1]); },
      {t({3, 4}), t({3, 4})}, inject_fault));
  results.push_back(gradient_check(
      "mul", [](const std::vector<TensorD>& in) { return mul(in[0], in[1]); },
      {t({3, 4}), t({3, 4})}, inject_fault));
  results.push_back(gradient_check(
      "matmul", [](const std::vector<TensorD>& in) { return matmul(in[0], in[1]); },
      {t({3, 4}), t({4, 2})}, inject_fault));
  results.push_back(gradient_check(
      "conv2d",
      [](const std::vector<TensorD>& in) { return conv2d(in[0], in[1], in[2], 1, 1); },
      {t({1, 5, 5}), t({2, 1, 3, 3}, 0.5), t({2}, 0.5)}, inject_fault));
  results.push_back(gradient_check(
      "layer_norm",
      [](const std::vector<TensorD>& in) { return layer_norm_chw(in[0], in[1], in[2]); },
      {t({4, 3, 3}), t({4}, 0.5), t({4}, 0.5)}, inject_fault));
  results.push_back(gradient_check(
      "softmax", [](const std::vector<TensorD>& in) { return softmax(in[0], 0); }, {t({5, 3})},
      inject_fault));
  results.push_back(gradient_check(
      "relu", [](const std::vector<TensorD>& in) { return relu(in[0]); }, {t({4, 4})},
      inject_fault));
  results.push_back(gradient_check(
      "concat",
      [](const std::vector<TensorD>& in) { return concat<double>({in[0], in[1]}, 0); },
      {t({2, 3, 3}), t({3, 3, 3})}, inject_fault));
  results.push_back(gradient_check(
      "slice", [](const std::vector<TensorD>& in) { return slice(in[0], 1, 1, 2); },
      {t({2, 4, 3})}, inject_fault));
  results.push_back(gradient_check(
      "mean", [](const std::vector<TensorD>& in) { return mean_all(in[0]); }, {t({3, 5})},
      inject_fault));
  results.push_back(gradient_check(
      "pixel_unshuffle",
      [](const std::vector<TensorD>& in) { return pixel_unshuffle(in[0], 2); }, {t({2, 4, 4})},
      inject_fault));
  results.push_back(gradient_check(
      "pixel_shuffle", [](const std::vector<TensorD>& in) { return pixel_shuffle(in[0], 2); },
      {t({4, 2, 2})}, inject_fault));
  results.push_back(gradient_check(
      "upsample_nearest",
      [](const std::vector<TensorD>& in) { return upsample_nearest(in[0], 2); }, {t({2, 3, 3})},
      inject_fault));
  results.push_back(gradient_check(
      "l1", [](const std::vector<TensorD>& in) { return l1_distance(in[0], in[1]); },
      {t({3, 4}), t({3, 4})}, inject_fault));
  results.push_back(gradient_check(
      "l2", [](const std::vector<TensorD>& in) { return l2_distance(in[0], in[1]); },
      {t({3, 4}), t({3, 4})}, inject_fault));

  results.push_back(voxel_partition_of_unity());
  results.push_back(event_sim_oracle());
  return results;
}

}  // namespace efs
