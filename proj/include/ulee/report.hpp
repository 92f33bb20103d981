#pragma once

#include <istream>
#include <map>
#include <string>
#include <vector>

namespace ulee::report {

struct Tables {
  std::map<std::string, std::string> csv;  // file name -> contents
  std::vector<std::string> mismatches;     // summaries not reproduced from task records
  int summaries_checked = 0;
};

/// Reads a metrics stream and builds the CSV tables. Every evaluation summary
/// is recomputed from its per-task records and compared.
Tables build_tables(std::istream& jsonl);

}  // namespace ulee::report
