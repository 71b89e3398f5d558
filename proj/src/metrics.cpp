#include "efs/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace efs {

namespace {
constexpr double kDelta1 = 1.25;
constexpr double kDelta2 = 1.25 * 1.25;
constexpr double kDelta3 = 1.25 * 1.25 * 1.25;
}  // namespace

void MetricsAccumulator::add(double pred, double gt) {
  const double diff = pred - gt;
  squared_error += diff * diff;
  absrel_sum += std::abs(diff) / gt;
  const double ratio = pred > 0.0 ? std::max(pred / gt, gt / pred)
                                  : std::numeric_limits<double>::infinity();
  if (ratio < kDelta1) ++within1;
  if (ratio < kDelta2) ++within2;
  if (ratio < kDelta3) ++within3;
  ++count;
}

void MetricsAccumulator::merge(const MetricsAccumulator& other) {
  squared_error += other.squared_error;
  absrel_sum += other.absrel_sum;
  within1 += other.within1;
  within2 += other.within2;
  within3 += other.within3;
  count += other.count;
}

Metrics MetricsAccumulator::finalize() const {
  if (count == 0) throw EmptyMaskError("metrics: no valid pixel under the mask");
  Metrics m;
  m.rmse_m = std::sqrt(squared_error / count);
  m.absrel = absrel_sum / count;
  m.delta1 = static_cast<double>(within1) / count;
  m.delta2 = static_cast<double>(within2) / count;
  m.delta3 = static_cast<double>(within3) / count;
  m.pixel_count = count;
  return m;
}

Metrics compute_metrics(const NdArray& pred, const NdArray& gt, const NdArray& mask) {
  if (pred.shape != gt.shape || pred.shape != mask.shape) {
    throw std::invalid_argument("compute_metrics: shape mismatch " + shape_to_string(pred.shape) +
                                " / " + shape_to_string(gt.shape) + " / " +
                                shape_to_string(mask.shape));
  }
  MetricsAccumulator acc;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    if (mask.data[i] > 0.5 && gt.data[i] > 0.0) acc.add(pred.data[i], gt.data[i]);
  }
  return acc.finalize();
}

double masked_rmse(const NdArray& pred, const NdArray& gt, const NdArray& mask) {
  double se = 0.0;
  int64_t n = 0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    if (mask.data[i] > 0.5 && gt.data[i] > 0.0) {
      const double d = pred.data[i] - gt.data[i];
      se += d * d;
      ++n;
    }
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : std::sqrt(se / n);
}

Estimator classical_estimator(const ReversalConfig& cfg) {
  return [cfg](const LoadedSample& sample) { return estimate_sparse_depth(sample.stream, cfg); };
}

Estimator model_estimator(std::shared_ptr<EDFFModel> model) {
  return [model](const LoadedSample& sample) { return edff_predict(sample.stream, *model); };
}

EvalReport evaluate(const DatasetManifest& manifest, const std::filesystem::path& manifest_dir,
                    const Estimator& estimator) {
  EvalReport report;
  MetricsAccumulator total;
  for (const SampleRecord& record : manifest.samples) {
    LoadedSample sample;
    try {
      sample = load_sample(manifest_dir, manifest, record);
    } catch (const std::exception& e) {
      throw IoError("evaluate: sample '" + record.id + "' failed to load: " + e.what());
    }
    const SparseDepth est = estimator(sample);

    MetricsAccumulator acc;
    for (size_t i = 0; i < sample.mask.data.size(); ++i) {
      if (sample.mask.data[i] > 0.5 && est.mask.data[i] > 0.5 && sample.depth_gt.data[i] > 0.0) {
        acc.add(est.depth_map.data[i], sample.depth_gt.data[i]);
      }
    }
    SampleEval eval;
    eval.id = record.id;
    if (acc.count > 0) eval.metrics = acc.finalize();
    report.per_sample.push_back(std::move(eval));
    total.merge(acc);
  }
  report.aggregate = total.finalize();
  return report;
}

namespace {
void metrics_row(std::ostringstream& os, const std::string& id, const Metrics& m) {
  os << id << "," << m.pixel_count << "," << m.rmse_m << "," << m.absrel << "," << m.delta1 << ","
     << m.delta2 << "," << m.delta3 << "\n";
}
}  // namespace

std::string metrics_report_csv(const EvalReport& report) {
  std::ostringstream os;
  os.precision(8);
  os << "# aggregation = pixel-weighted mean over samples\n";
  os << "sample,pixels,rmse_m,absrel,delta1,delta2,delta3\n";
  for (const auto& s : report.per_sample) metrics_row(os, s.id, s.metrics);
  metrics_row(os, "aggregate", report.aggregate);
  return os.str();
}

std::vector<TrainingSample> load_training_samples(const DatasetManifest& manifest,
                                                  const std::filesystem::path& manifest_dir) {
  std::vector<TrainingSample> samples;
  for (const SampleRecord& record : manifest.samples) {
    const LoadedSample loaded = load_sample(manifest_dir, manifest, record);
    TrainingSample t;
    t.voxel = loaded.voxel;
    t.surface = loaded.surface;
    t.gt = loaded.depth_gt;
    t.mask = loaded.mask;
    samples.push_back(std::move(t));
  }
  return samples;
}

std::vector<AblationRow> ablation_run(const DatasetManifest& manifest,
                                      const std::filesystem::path& manifest_dir,
                                      const ModelConfig& base, const AblationConfig& cfg) {
  const auto [train_manifest, val_manifest] =
      split_dataset(manifest, cfg.split_fraction, cfg.split_seed);
  const auto train_samples = load_training_samples(train_manifest, manifest_dir);
  if (train_samples.empty()) throw std::invalid_argument("ablation_run: empty training split");
  const int height = train_samples.front().gt.shape[0];
  const int width = train_samples.front().gt.shape[1];

  // The flag matrix mirrors the four ablation rows: neither module, one at a
  // time, then both.
  const struct {
    const char* name;
    bool fdcm, mdfb;
  } rows[] = {
      {"baseline", false, false},
      {"fdcm_only", true, false},
      {"mdfb_only", false, true},
      {"full", true, true},
  };

  std::vector<AblationRow> report;
  for (const auto& spec : rows) {
    AblationRow row;
    row.name = spec.name;
    row.use_fdcm = spec.fdcm;
    row.use_mdfb = spec.mdfb;
    try {
      ModelConfig mc = base;
      mc.use_fdcm = spec.fdcm;
      mc.use_mdfb = spec.mdfb;
      mc.ablation_parity = true;
      auto model = std::make_shared<EDFFModel>(mc, height, width);
      train_edff(*model, train_samples, nullptr, cfg.train, cfg.loss);
      const EvalReport eval = evaluate(val_manifest, manifest_dir, model_estimator(model));
      row.metrics = eval.aggregate;
      row.ok = true;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
    }
    report.push_back(std::move(row));
  }
  return report;
}

std::string ablation_report_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os.precision(8);
  os << "# validation metrics per module combination; pixel-weighted\n";
  os << "row,fdcm,mdfb,status,rmse_m,absrel,delta1\n";
  for (const auto& r : rows) {
    os << r.name << "," << (r.use_fdcm ? 1 : 0) << "," << (r.use_mdfb ? 1 : 0) << ","
       << (r.ok ? "ok" : "failed") << ",";
    if (r.ok) {
      os << r.metrics.rmse_m << "," << r.metrics.absrel << "," << r.metrics.delta1;
    } else {
      os << ",,";
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace efs
