#include "sudokusens/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <unordered_set>

namespace sudoku {

void AttributeSchema::validate() const {
  if (attributes.empty())
    throw std::invalid_argument("schema: no attributes");
  std::unordered_set<std::string> names;
  for (const auto& [name, values] : attributes) {
    if (!names.insert(name).second)
      throw std::invalid_argument("schema: duplicate attribute '" + name + "'");
    if (values.empty())
      throw std::invalid_argument("schema: attribute '" + name +
                                  "' has no values");
    std::unordered_set<std::string> vs;
    for (const auto& v : values)
      if (!vs.insert(v).second)
        throw std::invalid_argument("schema: duplicate value '" + v +
                                    "' in attribute '" + name + "'");
  }
}

int AttributeSchema::attr_index(const std::string& name) const {
  for (size_t i = 0; i < attributes.size(); ++i)
    if (attributes[i].first == name) return static_cast<int>(i);
  return -1;
}

int64_t AttributeSchema::value_index(int attr, const std::string& value) const {
  const auto& vals = attributes.at(static_cast<size_t>(attr)).second;
  for (size_t i = 0; i < vals.size(); ++i)
    if (vals[i] == value) return static_cast<int64_t>(i);
  return -1;
}

int64_t AttributeSchema::onehot_length() const {
  int64_t n = 0;
  for (const auto& [name, values] : attributes)
    n += static_cast<int64_t>(values.size());
  return n;
}

void validate_condition(const ConditionVector& c, const AttributeSchema& s) {
  if (c.values.size() != s.attributes.size())
    throw std::invalid_argument("condition: has " +
                                std::to_string(c.values.size()) +
                                " values, schema has " +
                                std::to_string(s.attributes.size()) +
                                " attributes");
  for (size_t i = 0; i < c.values.size(); ++i) {
    if (s.value_index(static_cast<int>(i), c.values[i]) < 0)
      throw std::invalid_argument("condition: value '" + c.values[i] +
                                  "' not in attribute '" +
                                  s.attributes[i].first + "'");
  }
}

void Dataset::validate() const {
  schema.validate();
  const int cls = schema.attr_index(class_attribute);
  if (cls < 0)
    throw std::invalid_argument("dataset: class attribute '" +
                                class_attribute + "' not in schema");
  if (modality_spec.empty())
    throw std::invalid_argument("dataset: no modalities");
  std::unordered_set<std::string> ids;
  for (const auto& s : sessions) {
    if (!ids.insert(s.session_id).second)
      throw std::invalid_argument("dataset: duplicate session id '" +
                                  s.session_id + "'");
    validate_condition(s.condition, schema);
    if (s.class_label != s.condition.values[static_cast<size_t>(cls)])
      throw std::invalid_argument(
          "dataset: session '" + s.session_id + "' class label '" +
          s.class_label + "' != condition value '" +
          s.condition.values[static_cast<size_t>(cls)] + "'");
    if (s.samples.empty())
      throw std::invalid_argument("dataset: session '" + s.session_id +
                                  "' has no samples");
    int64_t prev = -1;
    for (const auto& smp : s.samples) {
      if (smp.per_modality.size() != modality_spec.size())
        throw std::invalid_argument("dataset: session '" + s.session_id +
                                    "' sample modality count mismatch");
      for (const auto& sig : smp.per_modality)
        if (sig.empty())
          throw std::invalid_argument("dataset: empty signal in session '" +
                                      s.session_id + "'");
      if (smp.timestamp_index <= prev)
        throw std::invalid_argument("dataset: session '" + s.session_id +
                                    "' samples not ordered by timestamp");
      prev = smp.timestamp_index;
    }
  }
}

std::vector<std::pair<int64_t, int64_t>> SudokuMatrix::seen_cells() const {
  std::vector<std::pair<int64_t, int64_t>> out;
  for (int64_t r = 0; r < rows(); ++r)
    for (int64_t c = 0; c < cols(); ++c)
      if (is_seen(r, c)) out.emplace_back(r, c);
  return out;
}

std::vector<std::pair<int64_t, int64_t>> SudokuMatrix::unseen_cells() const {
  std::vector<std::pair<int64_t, int64_t>> out;
  for (int64_t r = 0; r < rows(); ++r)
    for (int64_t c = 0; c < cols(); ++c)
      if (!is_seen(r, c)) out.emplace_back(r, c);
  return out;
}

int64_t SudokuMatrix::row_of(const std::string& class_label) const {
  for (size_t i = 0; i < classes.size(); ++i)
    if (classes[i] == class_label) return static_cast<int64_t>(i);
  return -1;
}

int64_t SudokuMatrix::col_of(const ConditionVector& env) const {
  for (size_t i = 0; i < environment_conditions.size(); ++i)
    if (environment_conditions[i] == env) return static_cast<int64_t>(i);
  return -1;
}

ConditionVector env_of_condition(const ConditionVector& c,
                                 const AttributeSchema& schema,
                                 const std::string& class_attribute) {
  const int cls = schema.attr_index(class_attribute);
  ConditionVector env;
  for (size_t i = 0; i < c.values.size(); ++i)
    if (static_cast<int>(i) != cls) env.values.push_back(c.values[i]);
  return env;
}

ConditionVector cell_condition(const Dataset& ds, const SudokuMatrix& m,
                               int64_t row, int64_t col) {
  const int cls = ds.schema.attr_index(ds.class_attribute);
  const auto& env = m.environment_conditions.at(static_cast<size_t>(col));
  ConditionVector full;
  size_t e = 0;
  for (size_t i = 0; i < ds.schema.attributes.size(); ++i) {
    if (static_cast<int>(i) == cls)
      full.values.push_back(m.classes.at(static_cast<size_t>(row)));
    else
      full.values.push_back(env.values.at(e++));
  }
  return full;
}

SegmentResult segment_sessions(const Dataset& ds, double window_s,
                               double overlap_s) {
  if (!(window_s > overlap_s) || overlap_s < 0)
    throw std::invalid_argument("segment_sessions: need window > overlap >= 0");
  SegmentResult out;
  out.dataset.schema = ds.schema;
  out.dataset.modality_spec = ds.modality_spec;
  out.dataset.class_attribute = ds.class_attribute;

  const size_t M = ds.modality_spec.size();
  std::vector<int64_t> win(M), step(M);
  for (size_t m = 0; m < M; ++m) {
    const double rate = ds.modality_spec[m].sample_rate_hz;
    win[m] = static_cast<int64_t>(std::llround(window_s * rate));
    step[m] = static_cast<int64_t>(std::llround((window_s - overlap_s) * rate));
    if (win[m] <= 0 || step[m] <= 0)
      throw std::invalid_argument(
          "segment_sessions: window or step rounds to zero samples for "
          "modality '" +
          ds.modality_spec[m].name + "'");
  }

  for (const auto& s : ds.sessions) {
    // Sessions arrive as one continuous sample per modality; concatenate
    // defensively if a session was already chunked.
    std::vector<std::vector<float>> cont(M);
    for (const auto& smp : s.samples)
      for (size_t m = 0; m < M; ++m)
        cont[m].insert(cont[m].end(), smp.per_modality[m].begin(),
                       smp.per_modality[m].end());
    // Window count agreed across modalities: the minimum over modalities.
    int64_t count = -1;
    for (size_t m = 0; m < M; ++m) {
      const int64_t len = static_cast<int64_t>(cont[m].size());
      if (len < win[m]) {
        count = 0;
        break;
      }
      const int64_t c = 1 + (len - win[m]) / step[m];
      count = (count < 0) ? c : std::min(count, c);
    }
    if (count <= 0) {
      out.rejected_sessions.push_back(s.session_id);
      continue;
    }
    Session ns;
    ns.session_id = s.session_id;
    ns.class_label = s.class_label;
    ns.condition = s.condition;
    ns.samples.reserve(static_cast<size_t>(count));
    for (int64_t k = 0; k < count; ++k) {
      Sample smp;
      smp.timestamp_index = k;
      smp.per_modality.resize(M);
      for (size_t m = 0; m < M; ++m) {
        const int64_t start = k * step[m];
        smp.per_modality[m].assign(
            cont[m].begin() + static_cast<ptrdiff_t>(start),
            cont[m].begin() + static_cast<ptrdiff_t>(start + win[m]));
      }
      ns.samples.push_back(std::move(smp));
    }
    out.dataset.sessions.push_back(std::move(ns));
  }
  return out;
}

SudokuMatrix build_sudoku_matrix(const Dataset& ds) {
  if (ds.sessions.empty())
    throw std::invalid_argument("build_sudoku_matrix: empty dataset");
  const int cls = ds.schema.attr_index(ds.class_attribute);
  if (cls < 0)
    throw std::invalid_argument("build_sudoku_matrix: bad class attribute");

  // Observed values per attribute, kept in schema order.
  std::vector<std::set<int64_t>> observed(ds.schema.attributes.size());
  for (const auto& s : ds.sessions)
    for (size_t a = 0; a < s.condition.values.size(); ++a)
      observed[a].insert(
          ds.schema.value_index(static_cast<int>(a), s.condition.values[a]));

  SudokuMatrix m;
  for (int64_t vi : observed[static_cast<size_t>(cls)])
    m.classes.push_back(
        ds.schema.attributes[static_cast<size_t>(cls)].second[static_cast<size_t>(vi)]);

  // Columns: cartesian product of observed non-class values, schema order.
  std::vector<size_t> env_attrs;
  for (size_t a = 0; a < ds.schema.attributes.size(); ++a)
    if (static_cast<int>(a) != cls) env_attrs.push_back(a);
  std::vector<ConditionVector> cols{ConditionVector{}};
  for (size_t a : env_attrs) {
    std::vector<ConditionVector> next;
    for (const auto& partial : cols)
      for (int64_t vi : observed[a]) {
        ConditionVector c = partial;
        c.values.push_back(
            ds.schema.attributes[a].second[static_cast<size_t>(vi)]);
        next.push_back(std::move(c));
      }
    cols = std::move(next);
  }
  m.environment_conditions = std::move(cols);

  m.seen.assign(static_cast<size_t>(m.rows() * m.cols()), 0);
  for (const auto& s : ds.sessions) {
    const int64_t r = m.row_of(s.class_label);
    const int64_t c = m.col_of(
        env_of_condition(s.condition, ds.schema, ds.class_attribute));
    if (r < 0 || c < 0)
      throw std::logic_error("build_sudoku_matrix: session cell not in grid");
    m.seen[static_cast<size_t>(r * m.cols() + c)] = 1;
  }
  int64_t nseen = 0;
  for (uint8_t v : m.seen) nseen += v;
  m.coverage_percent =
      100.0 * static_cast<double>(nseen) / static_cast<double>(m.seen.size());
  return m;
}

namespace {

// An unseen cell can borrow knowledge when some seen row-mate, column-mate,
// and the rectangle-closing anchor all exist.
bool has_closing_rectangle(const SudokuMatrix& m, int64_t r, int64_t c) {
  for (int64_t r2 = 0; r2 < m.rows(); ++r2) {
    if (r2 == r || !m.is_seen(r2, c)) continue;
    for (int64_t c2 = 0; c2 < m.cols(); ++c2) {
      if (c2 == c || !m.is_seen(r, c2)) continue;
      if (m.is_seen(r2, c2)) return true;
    }
  }
  return false;
}

} // namespace

MaskResult mask_cells(const Dataset& ds, const SudokuMatrix& m,
                      const std::vector<std::pair<int64_t, int64_t>>& cells,
                      bool allow_no_transfer) {
  SudokuMatrix nm = m;
  for (auto [r, c] : cells) {
    if (r < 0 || r >= m.rows() || c < 0 || c >= m.cols())
      throw std::invalid_argument("mask_cells: cell out of range");
    if (!nm.is_seen(r, c))
      throw std::invalid_argument("mask_cells: cell (" + std::to_string(r) +
                                  "," + std::to_string(c) +
                                  ") is not currently seen");
    nm.seen[static_cast<size_t>(r * nm.cols() + c)] = 0;
  }

  // Every attribute value must survive in some seen cell.
  const int cls = ds.schema.attr_index(ds.class_attribute);
  std::vector<std::set<std::string>> surviving(ds.schema.attributes.size());
  for (int64_t r = 0; r < nm.rows(); ++r)
    for (int64_t c = 0; c < nm.cols(); ++c) {
      if (!nm.is_seen(r, c)) continue;
      const auto full = cell_condition(ds, nm, r, c);
      for (size_t a = 0; a < full.values.size(); ++a)
        surviving[a].insert(full.values[a]);
    }
  std::vector<std::set<std::string>> present(ds.schema.attributes.size());
  for (int64_t r = 0; r < m.rows(); ++r)
    for (int64_t c = 0; c < m.cols(); ++c) {
      if (!m.is_seen(r, c)) continue;
      const auto full = cell_condition(ds, m, r, c);
      for (size_t a = 0; a < full.values.size(); ++a)
        present[a].insert(full.values[a]);
    }
  (void)cls;
  for (size_t a = 0; a < present.size(); ++a)
    for (const auto& v : present[a])
      if (!surviving[a].count(v))
        throw std::invalid_argument("mask_cells: attribute value orphaned: '" +
                                    v + "' of attribute '" +
                                    ds.schema.attributes[a].first +
                                    "' appears in no seen cell");

  if (!allow_no_transfer) {
    for (auto [r, c] : nm.unseen_cells()) {
      if (!has_closing_rectangle(nm, r, c))
        throw std::invalid_argument(
            "mask_cells: unseen cell (" + std::to_string(r) + "," +
            std::to_string(c) +
            ") has no closing rectangle of seen cells; knowledge transfer is "
            "not possible (pass allow_no_transfer to force)");
    }
  }

  int64_t nseen = 0;
  for (uint8_t v : nm.seen) nseen += v;
  nm.coverage_percent = 100.0 * static_cast<double>(nseen) /
                        static_cast<double>(nm.seen.size());

  MaskResult out;
  out.matrix = std::move(nm);
  out.dataset.schema = ds.schema;
  out.dataset.modality_spec = ds.modality_spec;
  out.dataset.class_attribute = ds.class_attribute;
  for (const auto& s : ds.sessions) {
    const int64_t r = out.matrix.row_of(s.class_label);
    const int64_t c = out.matrix.col_of(
        env_of_condition(s.condition, ds.schema, ds.class_attribute));
    if (out.matrix.is_seen(r, c)) out.dataset.sessions.push_back(s);
  }
  return out;
}

SplitAssignment make_split(const Dataset& ds, const SudokuMatrix& m,
                           SplitMode mode) {
  SplitAssignment out;
  out.mode = mode;
  if (mode == SplitMode::sudoku && m.unseen_cells().empty())
    throw std::invalid_argument(
        "make_split: sudoku mode requires at least one unseen cell");
  for (const auto& s : ds.sessions) {
    SessionSplit sp;
    sp.session_id = s.session_id;
    const int64_t n = static_cast<int64_t>(s.samples.size());
    if (mode == SplitMode::in_dataset) {
      const int64_t nval = n / 10;
      const int64_t ntest = n / 10;
      const int64_t ntrain = n - nval - ntest;
      for (int64_t i = 0; i < ntrain; ++i) sp.train.push_back(i);
      for (int64_t i = ntrain; i < ntrain + nval; ++i) sp.val.push_back(i);
      for (int64_t i = ntrain + nval; i < n; ++i) sp.test.push_back(i);
    } else {
      const int64_t r = m.row_of(s.class_label);
      const int64_t c = m.col_of(
          env_of_condition(s.condition, ds.schema, ds.class_attribute));
      if (r < 0 || c < 0)
        throw std::invalid_argument("make_split: session '" + s.session_id +
                                    "' not locatable in matrix");
      if (m.is_seen(r, c)) {
        const int64_t nval = n / 5;
        const int64_t ntrain = n - nval;
        for (int64_t i = 0; i < ntrain; ++i) sp.train.push_back(i);
        for (int64_t i = ntrain; i < n; ++i) sp.val.push_back(i);
      } else {
        for (int64_t i = 0; i < n; ++i) sp.test.push_back(i);
      }
    }
    out.per_session.push_back(std::move(sp));
  }
  return out;
}

} // namespace sudoku
