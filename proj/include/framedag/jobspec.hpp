#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "framedag/graph.hpp"
#include "framedag/required_set.hpp"

namespace framedag {

struct ColumnRef {
  std::string table;
  std::string column;

  std::string to_string() const { return table + "." + column; }
  /// Parses "table.column"; the column is everything after the last dot.
  static ColumnRef parse(const std::string& text);
};

/// Requested output points: every point, or those a sampling strategy selects.
struct PointSelection {
  std::optional<SamplingStrategy> strategy;  // nullopt = all

  /// Throws ValidationError if the selection leaves [0, length).
  RequiredSet resolve(Index length) const;
};

struct JobSpec {
  std::map<std::string, ColumnRef> inputs;  // source name -> table column
  std::string output;                       // output table name
  PointSelection points;
};

/// A parsed job-spec file: one graph run as one or more jobs.
struct JobFile {
  GraphSpec graph;
  std::vector<JobSpec> jobs;
  nlohmann::json config = nlohmann::json::object();  // run overrides, checked by the executor
};

/// Parses a job-spec document. Unknown fields are rejected; errors name the
/// JSON pointer of the offending value, and syntax errors carry line and column.
JobFile parse_job_file(const std::string& text);
JobFile load_job_file(const std::string& path);

GraphSpec parse_graph(const nlohmann::json& j);

}  // namespace framedag
