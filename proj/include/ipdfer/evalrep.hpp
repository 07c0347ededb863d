#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ipdfer/factorgen.hpp"
#include "ipdfer/nets.hpp"

namespace ipdfer::eval {

struct SubsetAccuracy {
  std::string name;
  int count = 0;
  double accuracy = 0.0;  // meaningless when count == 0 (subset reported absent)
};

struct EvalReport {
  int n = 0;
  double overall_accuracy = 0.0;
  std::vector<double> per_class_accuracy;           // K entries; NaN-free (0 for empty classes)
  std::vector<int> per_class_count;
  std::vector<std::vector<double>> confusion;       // K x K, row-normalized over nonempty rows
  std::vector<int> bucket_count;                    // K_P entries
  std::vector<double> bucket_accuracy;
  std::vector<SubsetAccuracy> yaw_subsets;          // all, >10, >20, >30, >40
  std::optional<double> mean_abs_cos, max_abs_cos;  // absent for baseline bundles
  std::optional<double> disentanglement_score;      // absent without a decoder

  std::string to_text() const;
};

/// Predicted expression labels: argmax of C_exp(E_exp(x)), ties resolved to
/// the lowest class index.
std::vector<int> predict(const ModelBundle& bundle, const data::Dataset& ds, const std::vector<int>& indices);

/// Accuracy bookkeeping for a given prediction vector: overall, per class,
/// confusion matrix, pose buckets, and the strictly-greater yaw subsets.
EvalReport tabulate(const data::Dataset& ds, const std::vector<int>& indices, const std::vector<int>& predictions,
                    int k_expressions);

EvalReport evaluate(const ModelBundle& bundle, const data::Dataset& ds, const std::vector<int>& indices,
                    std::uint64_t score_seed = 0x5c04e);

/// [input, decode(f_id), decode(f_id+f_pose), decode(f_id+f_pose+f_exp)] for
/// the ipd mode; the pose column is omitted for id-only bundles.
std::vector<Tensor> synthesis_panel(const ModelBundle& bundle, const Tensor& image);

/// Writes panels as {sample}_{real,id,id_pose,id_pose_exp}.pgm (or .ppm).
void write_synthesis_panels(const ModelBundle& bundle, const data::Dataset& ds, const std::vector<int>& indices,
                            const std::string& out_dir);

struct OrthogonalityStats {
  double mean_abs_cos = 0.0;
  double max_abs_cos = 0.0;
};

/// Mean and max |cos(f_id, f_exp)| over the given samples.
OrthogonalityStats orthogonality_report(const ModelBundle& bundle, const data::Dataset& ds,
                                        const std::vector<int>& indices);

/// Fraction of samples whose synthesized neutral is L1-closer to their own
/// ground-truth neutral render than to a random other identity's at the same
/// yaw. Deterministic given score_seed.
double disentanglement_score(const ModelBundle& bundle, const data::Dataset& ds, const std::vector<int>& indices,
                             std::uint64_t score_seed);

/// Tab-separated rows: index, identity_id, y_e, y_p, then the expression
/// feature printed at 9 significant digits (float32 precision, so the text
/// round-trips bit-exactly).
void export_embeddings(const ModelBundle& bundle, const data::Dataset& ds, const std::vector<int>& indices,
                       const std::string& path);

/// Mean pairwise distance between class centroids divided by mean distance of
/// samples to their own centroid, computed on unit-normalized feature rows.
double class_separation_ratio(const Tensor& features, const std::vector<int>& labels);

/// Aligned text table in the per-subset layout (one accuracy column per
/// labeled report).
std::string subset_table(const std::vector<std::pair<std::string, EvalReport>>& columns);

}  // namespace ipdfer::eval
