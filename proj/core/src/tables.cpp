#include "prsr/tables.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "prsr/errors.hpp"
#include "prsr/eval.hpp"

namespace prsr::eval {

double TableCheck::abs_diff() const {
  return std::fabs(computed_dp_percent - printed_dp_percent);
}

TableSet load_table_means(const std::filesystem::path& path) {
  std::ifstream file(path);
  if (!file) {
    throw_error(ErrorCategory::io, "cannot open table means file: " + path.string());
  }
  nlohmann::json j = nlohmann::json::parse(file, nullptr, false);
  if (j.is_discarded()) {
    throw_error(ErrorCategory::parse, path.string() + ": malformed JSON");
  }

  TableSet set;
  try {
    set.metrics = j.at("metrics").get<std::vector<std::string>>();
    for (const auto& tj : j.at("tables")) {
      MeanTable table;
      table.name = tj.at("name").get<std::string>();
      table.edge_model = tj.value("edge_model", "");
      table.cloud_model = tj.value("cloud_model", "");
      table.edge = tj.at("edge").get<std::vector<double>>();
      table.cloud = tj.at("cloud").get<std::vector<double>>();
      for (const auto& rj : tj.at("rows")) {
        TableRow row;
        row.name = rj.at("name").get<std::string>();
        row.means = rj.at("means").get<std::vector<double>>();
        row.printed_dp_percent = rj.at("printed_dp_percent").get<double>();
        table.rows.push_back(std::move(row));
      }
      set.tables.push_back(std::move(table));
    }
  } catch (const std::exception& e) {
    throw_error(ErrorCategory::parse, path.string() + ": " + e.what());
  }

  const size_t n = set.metrics.size();
  for (const auto& table : set.tables) {
    if (table.edge.size() != n || table.cloud.size() != n) {
      throw_error(ErrorCategory::dimension,
                  "table '" + table.name + "' reference rows disagree with the metric count");
    }
    for (const auto& row : table.rows) {
      if (row.means.size() != n) {
        throw_error(ErrorCategory::dimension,
                    "table '" + table.name + "' row '" + row.name +
                        "' disagrees with the metric count");
      }
    }
  }
  return set;
}

std::vector<TableCheck> reproduce_tables(const TableSet& set) {
  std::vector<TableCheck> checks;
  for (const auto& table : set.tables) {
    for (const auto& row : table.rows) {
      TableCheck check;
      check.table = table.name;
      check.row = row.name;
      check.computed_dp_percent =
          100.0 * relative_performance_improvement(row.means, table.edge, table.cloud);
      check.printed_dp_percent = row.printed_dp_percent;
      checks.push_back(std::move(check));
    }
  }
  return checks;
}

std::string table_checks_to_csv(const std::vector<TableCheck>& checks) {
  std::string out = "table,row,computed_dp_percent,printed_dp_percent,abs_diff_pp\n";
  char buf[160];
  for (const auto& c : checks) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%.4f,%.4f,%.4f\n", c.table.c_str(), c.row.c_str(),
                  c.computed_dp_percent, c.printed_dp_percent, c.abs_diff());
    out += buf;
  }
  return out;
}

}  // namespace prsr::eval
