#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace prsr::eval {

// A published table of per-metric means: the two reference model rows plus a
// set of router rows, each carrying the improvement value the source printed.
struct TableRow {
  std::string name;
  std::vector<double> means;
  double printed_dp_percent = 0.0;
};

struct MeanTable {
  std::string name;
  std::string edge_model;
  std::string cloud_model;
  std::vector<double> edge;
  std::vector<double> cloud;
  std::vector<TableRow> rows;
};

struct TableSet {
  std::vector<std::string> metrics;
  std::vector<MeanTable> tables;
};

TableSet load_table_means(const std::filesystem::path& path);

struct TableCheck {
  std::string table;
  std::string row;
  double computed_dp_percent = 0.0;
  double printed_dp_percent = 0.0;

  double abs_diff() const;
};

// Recomputes every row's improvement from the table means and pairs it with
// the printed value.
std::vector<TableCheck> reproduce_tables(const TableSet& set);

std::string table_checks_to_csv(const std::vector<TableCheck>& checks);

}  // namespace prsr::eval
