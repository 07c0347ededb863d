#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ipdfer/tensor.hpp"

namespace ipdfer::data {

/// Ground-truth generative factors behind one synthetic face image.
struct FactorTuple {
  int identity_id = 0;
  /// (head aspect ratio, eye spacing, feature scale, base intensity);
  /// a pure function of identity_id.
  std::array<double, 4> identity_params{};
  double yaw_deg = 0.0;        // in [0, 50]
  int expression_id = 0;       // class 0 is neutral
};

/// Deterministic identity geometry derived from the id alone.
std::array<double, 4> identity_params_for(int identity_id);

FactorTuple make_factors(int identity_id, double yaw_deg, int expression_id);

/// Yaw magnitude -> bucket label. Half-open ranges [0,10) [10,20) [20,30)
/// [30,40), and 4 for 40 degrees and above. Negative yaw is a domain error.
int pose_bucket(double yaw_deg);

inline constexpr int kPoseBuckets = 5;

struct ImageShape {
  int height = 32;
  int width = 32;
  int channels = 1;
  bool operator==(const ImageShape&) const = default;
};

/// Rasterizes the toy face for the given factors: an elliptical head whose
/// lateral shift/narrowing/shading encode yaw, eyes and mouth whose opening
/// and curvature encode the expression, geometry and intensity set by the
/// identity parameters. Pure function; frontal faces (yaw 0) are exactly
/// mirror symmetric. Returns (C,H,W) with all values in [0,1].
Tensor render(const FactorTuple& factors, const ImageShape& shape, int k_expressions);

/// Mouth/eye pose for one expression class: (curvature, opening, eye open).
std::array<double, 3> expression_shape_params(int expression_id, int k_expressions);

/// Identity-keyed strength of expression display in [0.7, 1.3]; scales the
/// deviation from the neutral configuration (class 0 is unaffected).
double expression_amplitude_for(int identity_id);

struct GeneratorConfig {
  int n_identities = 20;
  std::vector<double> yaws = {0.0, 15.0, 25.0, 35.0, 45.0};
  int k_expressions = 4;
  int n_folds = 5;
  ImageShape shape;
  std::uint64_t seed = 1;
};

struct LabeledSample {
  FactorTuple factors;
  int y_e = 0;   // expression label
  int y_p = 0;   // pose bucket label
  int fold = 0;  // identity-derived fold assignment
  Tensor image;  // (C,H,W)
};

struct Dataset {
  GeneratorConfig config;
  std::vector<LabeledSample> samples;

  std::vector<int> train_indices(int fold) const;
  std::vector<int> test_indices(int fold) const;
  /// Identity ids present in the train/test side of a fold.
  std::vector<int> train_identities(int fold) const;
  std::vector<int> test_identities(int fold) const;
};

/// Full factorial of identities x yaws x expressions, rendered and labeled,
/// with identity-disjoint fold assignment (fold = identity_id mod n_folds).
Dataset build_dataset(const GeneratorConfig& config);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

/// Sample counts per pose bucket label.
std::array<int, kPoseBuckets> bucket_histogram(const Dataset& ds);

/// Binary PGM (P5) for single-channel images, PPM (P6) for three channels.
void write_image(const Tensor& image, const std::string& path);

/// Stacks dataset samples into an (N,C,H,W) batch tensor.
Tensor stack_images(const Dataset& ds, const std::vector<int>& indices);

}  // namespace ipdfer::data
