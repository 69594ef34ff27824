// Schema-validated CSV output. Schemas are versioned here; every row is
// checked against its schema before it is written.
#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "uda/bounds.hpp"
#include "uda/common.hpp"

namespace uda::csv {

struct Schema {
  std::string name;
  int version = 1;
  std::vector<std::string> columns;

  std::string header() const {
    std::string out;
    for (std::size_t i = 0; i < columns.size(); ++i) out += (i ? "," : "") + columns[i];
    return out;
  }
};

inline const Schema kMetricsSchema{
    "metrics", 1,
    {"epoch", "train_loss", "train_ce", "src_risk01", "tgt_risk01", "tgt_ce", "tgt_acc",
     "jeffrey", "kl_fwd_est", "kl_rev_est", "cl_penalty"}};
inline const Schema kPlotDataSchema{"plotdata", 1, {"epoch", "test_error", "jeffrey"}};
inline const Schema kBoundReportSchema{"bound_report", 1,
                                       {"name", "lhs", "rhs", "slack", "valid", "ingredients"}};
inline const Schema kTrajectorySchema{"trajectory", 1,
                                      {"step", "lr", "sigma", "v", "grad_norm_sq"}};
inline const Schema kAggregateSchema{
    "aggregate", 1,
    {"method", "seeds", "mean_tgt_acc", "std_tgt_acc", "mean_tgt_risk01", "std_tgt_risk01",
     "mean_final_jeffrey", "std_final_jeffrey", "mean_trajectory_sum"}};
inline const Schema kConvergenceSchema{
    "convergence", 1, {"n", "trials", "delta", "quantile", "envelope", "within"}};
inline const Schema kQuantitiesSchema{"quantities", 1, {"key", "value"}};

class Writer {
 public:
  Writer(const std::string& path, const Schema& schema) : path_(path), schema_(schema) {
    out_.open(path);
    require(out_.good(), "csv: cannot open " + path + " for writing");
    out_ << "# schema=" << schema.name << ".v" << schema.version << "\n";
    out_ << schema.header() << "\n";
  }

  void row(const std::vector<std::string>& fields) {
    require(fields.size() == schema_.columns.size(),
            "csv: " + path_ + ": row has " + std::to_string(fields.size()) + " fields, schema " +
                schema_.name + " expects " + std::to_string(schema_.columns.size()));
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ",";
      out_ << fields[i];
    }
    out_ << "\n";
  }

  // for the bound_report schema, which carries its own row format
  void raw_row(const std::string& line) {
    require(schema_.name == "bound_report", "csv: raw rows only for bound reports");
    out_ << line << "\n";
  }

 private:
  std::string path_;
  Schema schema_;
  std::ofstream out_;
};

inline std::string fmt(double v) { return bounds::fmt_double(v); }

struct Table {
  std::string schema_line;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<int>(i);
    throw error("csv: no column named " + name);
  }
};

inline Table read(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "csv: cannot open " + path);
  Table t;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.front() == '#') {
      t.schema_line = line;
      continue;
    }
    std::vector<std::string> fields;
    // ingredient blobs use ';' internally, so a plain comma split is safe
    std::string tok;
    std::istringstream ls(line);
    while (std::getline(ls, tok, ',')) fields.push_back(tok);
    if (!have_header) {
      t.columns = fields;
      have_header = true;
    } else {
      t.rows.push_back(fields);
    }
  }
  require(have_header, "csv: " + path + " has no header row");
  return t;
}

}  // namespace uda::csv
