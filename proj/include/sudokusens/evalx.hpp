#pragma once

// Classification metrics, session-clustering diagnostics, and the
// coverage-sweep experiment harness tying the whole pipeline together on
// the built-in synthetic benchmark.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sudokusens/classifiers.hpp"
#include "sudokusens/cvae.hpp"
#include "sudokusens/pipeline.hpp"
#include "sudokusens/satcl.hpp"
#include "sudokusens/synthgen.hpp"
#include "sudokusens/tensor.hpp"

namespace sudoku::evalx {

// Fraction of positions where pred == truth. Throws on empty or
// length-mismatched input.
double accuracy(const std::vector<int64_t>& pred,
                const std::vector<int64_t>& truth);

// Unweighted mean of per-class F1 over every class that appears in pred or
// truth; classes absent from both cannot be scored and are excluded.
double macro_f1(const std::vector<int64_t>& pred,
                const std::vector<int64_t>& truth);

// Mean silhouette of emb rows [N, D] under Euclidean distance, with labels
// as cluster ids. Singleton clusters score 0 (nothing to cohere with).
// Throws when fewer than two distinct labels or fewer than two points.
double silhouette(const Tensor<float>& emb, const std::vector<int64_t>& labels);

struct Projection {
  Tensor<float> points; // [N, target_dim]
  double retained = 0;  // variance share kept by the 50-dim first stage
};

// Deterministic two-stage PCA: to min(50, D) dims, then to target_dim.
// Eigenvector signs are normalized (largest-magnitude component positive).
// Throws on fewer than target_dim points or zero total variance.
Projection project_embeddings(const Tensor<float>& emb, int64_t target_dim = 2);

// x,y,label rows for external plotting.
void write_projection_csv(const std::string& path, const Tensor<float>& pts,
                          const std::vector<std::string>& labels);

enum class Method {
  basic,
  conventional_aug,
  sudokusens,
  sudokusens_minus_satcl,
  sudokusens_minus_interp,
  sudokusens_frozen_mask,
};

std::string method_name(Method m);
Method method_from_name(const std::string& s);

// Which pipeline stages a method runs.
bool method_uses_interp(Method m);
bool method_uses_satcl(Method m);

// Hides cells until the matrix reaches the requested coverage, keeping only
// patterns the masking constraints accept. Candidate order is shuffled so
// different seeds explore different patterns; infeasible candidates are
// skipped. Throws when a sub-100 target admits no feasible pattern at all.
SudokuMatrix apply_coverage(const Dataset& ds, const SudokuMatrix& m,
                            double coverage, Rng& rng);

enum class SplitPart { train, val, test };

// Feature-set rows backing one side of a split; features are laid out
// session-major in dataset session order, matching build_features.
std::vector<int64_t> split_feature_rows(const Dataset& ds,
                                        const SplitAssignment& sp,
                                        SplitPart part);

struct ExperimentConfig {
  GeneratorConfig generator;
  double window_s = 2.0;
  double overlap_s = 1.0;
  StftConfig stft;

  cvae::CvaeConfig cvae;
  cvae::CvaeTrainConfig cvae_train;
  cvae::InterpolationConfig interp;
  satcl::SatclConfig satcl;
  satcl::SatclTrainConfig satcl_train;
  cls::ClassifierSpec classifier;
  cls::ClsTrainConfig cls_train;
  AugmentConfig augment;

  std::vector<Method> methods = {Method::basic, Method::sudokusens};
  std::vector<double> coverages = {100.0, 50.0}; // percent seen cells
  std::vector<uint64_t> seeds = {1, 2, 3};

  // Row cap for the O(N^2) silhouette / projection diagnostics.
  int64_t diagnostic_cap = 1024;

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  uint64_t hash() const; // stable hash of the canonical JSON form
};

struct CellResult {
  Method method = Method::basic;
  double coverage = 100.0;
  uint64_t seed = 0;
  std::string classifier_family;

  double accuracy = 0;
  double macro_f1 = 0;
  std::optional<double> silhouette_before; // raw flattened-PCA features
  std::optional<double> silhouette_after;  // contrastive embeddings
  double duration_s = 0;
  std::string error; // empty on success; failed stage otherwise

  bool ok() const { return error.empty(); }
  nlohmann::json to_json() const;
};

struct ExperimentReport {
  nlohmann::json config;
  uint64_t config_hash = 0;
  std::vector<CellResult> cells; // every requested cell, exactly once

  nlohmann::json to_json() const;
};

// Runs the full (method x coverage x seed) sweep on the built-in synthetic
// benchmark. A failing stage records the error in its cell and the sweep
// continues. When out_dir is nonempty, per-cell metrics and predictions,
// embedding scatter data (first seed), and the report files are persisted
// there; an empty out_dir keeps everything in memory.
ExperimentReport run_experiment(const ExperimentConfig& cfg,
                                const std::string& out_dir = "");

void write_report_json(const std::string& path, const ExperimentReport& rep);
// One row per cell: method, coverage, seed, family, metrics, error.
void write_report_csv(const std::string& path, const ExperimentReport& rep);
// Mean/stddev accuracy and macro F1 per (method, coverage) across seeds.
void write_summary_csv(const std::string& path, const ExperimentReport& rep);

} // namespace sudoku::evalx
