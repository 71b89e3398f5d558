#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "efs/classical_dff.hpp"
#include "efs/data_pipeline.hpp"
#include "efs/edff.hpp"

namespace efs {

struct Metrics {
  double rmse_m = 0.0;
  double absrel = 0.0;
  double delta1 = 0.0;  // fraction with max(pred/gt, gt/pred) < 1.25
  double delta2 = 0.0;  // ... < 1.25^2
  double delta3 = 0.0;  // ... < 1.25^3
  int64_t pixel_count = 0;
};

// Raised when an evaluation has no valid pixel (mask AND gt>0 empty); kept
// distinct from zero metrics.
struct EmptyMaskError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Metrics compute_metrics(const NdArray& pred, const NdArray& gt, const NdArray& mask);

struct MetricsAccumulator {
  double squared_error = 0.0;
  double absrel_sum = 0.0;
  int64_t within1 = 0, within2 = 0, within3 = 0;
  int64_t count = 0;

  void add(double pred, double gt);
  void merge(const MetricsAccumulator& other);
  Metrics finalize() const;  // throws EmptyMaskError when count == 0
};

using Estimator = std::function<SparseDepth(const LoadedSample&)>;

Estimator classical_estimator(const ReversalConfig& cfg);
Estimator model_estimator(std::shared_ptr<EDFFModel> model);

struct SampleEval {
  std::string id;
  Metrics metrics;  // pixel_count == 0 marks a sample with no valid pixel
};

struct EvalReport {
  Metrics aggregate;  // pixel-weighted over samples
  std::vector<SampleEval> per_sample;
};

/// Evaluates an estimator over every sample of a manifest. Evaluation is
/// restricted to dataset mask AND estimator validity AND gt > 0; aggregation
/// is pixel-weighted. An unreadable sample aborts with its id.
EvalReport evaluate(const DatasetManifest& manifest, const std::filesystem::path& manifest_dir,
                    const Estimator& estimator);

std::string metrics_report_csv(const EvalReport& report);

struct AblationRow {
  std::string name;
  bool use_fdcm = false;
  bool use_mdfb = false;
  bool ok = false;
  std::string error;
  Metrics metrics;
};

struct AblationConfig {
  double split_fraction = 0.8;
  uint64_t split_seed = 0;
  TrainConfig train;
  LossConfig loss;
};

/// Trains and evaluates the four flag combinations {-,-}, {FDCM}, {MDFB},
/// {both} under one seed and budget. A diverging row is marked failed
/// without discarding the others. Disabled modules are replaced by
/// parameter-matched convolution stacks for architectural parity.
std::vector<AblationRow> ablation_run(const DatasetManifest& manifest,
                                      const std::filesystem::path& manifest_dir,
                                      const ModelConfig& base, const AblationConfig& cfg);

std::string ablation_report_csv(const std::vector<AblationRow>& rows);

/// RMSE over pixels with mask == 1 and gt > 0; NaN when that set is empty.
double masked_rmse(const NdArray& pred, const NdArray& gt, const NdArray& mask);

/// Builds in-memory training samples from manifest records.
std::vector<TrainingSample> load_training_samples(const DatasetManifest& manifest,
                                                  const std::filesystem::path& manifest_dir);

}  // namespace efs
