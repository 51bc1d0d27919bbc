#pragma once

#include <string>

#include "eval.hpp"

namespace misode {

// Renders accuracy-vs-instances and accuracy-vs-noise SVG plots plus summary
// tables (CSV and Markdown) into outdir, grouped by tag, dimension and task.
// Empty results are an error, not an empty plot.
void write_report(const ResultsTable& results, const std::string& outdir);

}  // namespace misode
