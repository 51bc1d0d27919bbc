#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "report.hpp"

using namespace misode;

namespace {

ResultsTable synthetic_results() {
  ResultsTable t;
  Rng rng(8);
  for (const char* tag : {"mean", "stlsq"})
    for (const char* task : {"reconstruction", "generalization"})
      for (int dim : {1, 2})
        for (double sigma : {0.0, 0.05})
          for (int n = 1; n <= 4; ++n)
            for (long id = 0; id < 10; ++id) {
              ResultRow r;
              r.tag = tag;
              r.task = task;
              r.dim = dim;
              r.sigma = sigma;
              r.instances = n;
              r.system_id = id;
              r.pass = rng.uniform() < 0.5 + 0.1 * n;
              r.r2 = r.pass ? 0.95 : 0.2;
              r.reason = r.pass ? "none" : "low_r2";
              t.rows.push_back(r);
            }
  return t;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE("report") {

TEST_CASE("empty results are an explicit error") {
  CHECK_THROWS_AS(write_report(ResultsTable{}, "/tmp/misode_report_empty"), DataError);
}

TEST_CASE("report renders plots and tables deterministically") {
  const ResultsTable results = synthetic_results();
  const std::string dir = "/tmp/misode_report_test";
  std::filesystem::remove_all(dir);
  write_report(results, dir);

  const std::string inst_svg = slurp(dir + "/accuracy_vs_instances.svg");
  CHECK(inst_svg.find("<svg") != std::string::npos);
  CHECK(inst_svg.find("polyline") != std::string::npos);
  CHECK(inst_svg.find("instances") != std::string::npos);
  CHECK(inst_svg.find("mean 1D") != std::string::npos);

  const std::string noise_svg = slurp(dir + "/accuracy_vs_noise.svg");
  CHECK(noise_svg.find("sigma") != std::string::npos);

  const std::string md = slurp(dir + "/summary.md");
  CHECK(md.find("| tag |") != std::string::npos);
  CHECK(md.find("stlsq") != std::string::npos);
  CHECK(!slurp(dir + "/summary.csv").empty());

  // byte-determinism
  const std::string dir2 = "/tmp/misode_report_test2";
  std::filesystem::remove_all(dir2);
  write_report(results, dir2);
  CHECK(slurp(dir + "/accuracy_vs_instances.svg") == slurp(dir2 + "/accuracy_vs_instances.svg"));
  CHECK(slurp(dir + "/summary.md") == slurp(dir2 + "/summary.md"));
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}

}  // TEST_SUITE
