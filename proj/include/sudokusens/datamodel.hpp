#pragma once

// Canonical representation of sessioned, condition-labeled multimodal
// datasets plus the seen/unseen cell grid and split logic. All types are
// plain values, immutable by convention after construction; the operations
// are pure functions.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace sudoku {

struct AttributeSchema {
  // ordered (attribute name, ordered categorical values)
  std::vector<std::pair<std::string, std::vector<std::string>>> attributes;

  // throws std::invalid_argument on duplicate names/values or empty lists
  void validate() const;

  int attr_index(const std::string& name) const; // -1 if absent
  // index of value within attribute attr, -1 if absent
  int64_t value_index(int attr, const std::string& value) const;
  int64_t onehot_length() const;
};

struct ConditionVector {
  std::vector<std::string> values; // one per attribute, schema order

  bool operator==(const ConditionVector& o) const { return values == o.values; }
};

// throws std::invalid_argument when c does not validate against schema
void validate_condition(const ConditionVector& c, const AttributeSchema& s);

struct Sample {
  // raw 1-D signal per modality, modality order fixed by the dataset
  std::vector<std::vector<float>> per_modality;
  int64_t timestamp_index = 0;
};

// Session-level metadata lives here; by construction every sample in the
// session shares it.
struct Session {
  std::string session_id;
  std::string class_label;
  ConditionVector condition;
  std::vector<Sample> samples;
};

struct ModalitySpec {
  std::string name;
  double sample_rate_hz = 0;
};

struct Dataset {
  AttributeSchema schema;
  std::vector<ModalitySpec> modality_spec;
  std::string class_attribute;
  std::vector<Session> sessions;

  // throws on schema violations, bad conditions, class/condition mismatch,
  // empty signals, or unsorted timestamp indices
  void validate() const;
};

struct SudokuMatrix {
  std::vector<std::string> classes;                    // rows
  std::vector<ConditionVector> environment_conditions; // columns, non-class attrs
  std::vector<uint8_t> seen;                           // row-major grid
  double coverage_percent = 0;

  int64_t rows() const { return static_cast<int64_t>(classes.size()); }
  int64_t cols() const {
    return static_cast<int64_t>(environment_conditions.size());
  }
  bool is_seen(int64_t r, int64_t c) const {
    return seen[static_cast<size_t>(r * cols() + c)] != 0;
  }
  std::vector<std::pair<int64_t, int64_t>> seen_cells() const;
  std::vector<std::pair<int64_t, int64_t>> unseen_cells() const;

  int64_t row_of(const std::string& class_label) const;  // -1 if absent
  int64_t col_of(const ConditionVector& env) const;      // -1 if absent
};

enum class SplitMode { in_dataset, sudoku };

struct SessionSplit {
  std::string session_id;
  std::vector<int64_t> train, val, test; // sample indices, contiguous runs
};

struct SplitAssignment {
  SplitMode mode = SplitMode::in_dataset;
  std::vector<SessionSplit> per_session; // dataset session order
};

struct SegmentResult {
  Dataset dataset;
  std::vector<std::string> rejected_sessions; // shorter than one window
};

// Windows every session's continuous signals into overlapping fixed-length
// samples. window_s and overlap_s are in seconds; per-modality lengths come
// from each modality's own sample rate so window counts line up across
// modalities.
SegmentResult segment_sessions(const Dataset& ds, double window_s,
                               double overlap_s);

// Builds the class x environment-condition grid from the values actually
// present in the dataset (columns are the cartesian product of observed
// non-class attribute values, in schema order).
SudokuMatrix build_sudoku_matrix(const Dataset& ds);

struct MaskResult {
  SudokuMatrix matrix;
  Dataset dataset; // hidden cells' sessions removed
};

// Marks the given (row, col) cells unseen and removes their sessions.
// Always rejects patterns that orphan an attribute value. Patterns that
// leave some unseen cell without a closing rectangle of seen cells (no
// row/column knowledge transfer possible) are rejected unless
// allow_no_transfer is set.
MaskResult mask_cells(const Dataset& ds, const SudokuMatrix& m,
                      const std::vector<std::pair<int64_t, int64_t>>& cells,
                      bool allow_no_transfer = false);

// in_dataset: contiguous 80/10/10 per session (floor val/test, remainder to
// train). sudoku: contiguous 80/20 train/val for sessions in seen cells and
// every sample of unseen-cell sessions as test; errors when no cell is
// unseen.
SplitAssignment make_split(const Dataset& ds, const SudokuMatrix& m,
                           SplitMode mode);

// Full condition vector for a matrix cell: the environment condition with
// the class value inserted at the class attribute's position.
ConditionVector cell_condition(const Dataset& ds, const SudokuMatrix& m,
                               int64_t row, int64_t col);

// Environment part of a session's condition (class attribute removed).
ConditionVector env_of_condition(const ConditionVector& c,
                                 const AttributeSchema& schema,
                                 const std::string& class_attribute);

} // namespace sudoku
