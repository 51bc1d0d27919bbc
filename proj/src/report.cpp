#include "report.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace misode {

namespace {

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;  // x, accuracy
};

struct Panel {
  std::string title;
  std::vector<Series> series;
};

// One panel grid: columns = tasks, rows = facet values.
std::string render_svg(const std::string& x_label, const std::vector<std::vector<Panel>>& grid,
                       double x_min, double x_max) {
  const int pw = 360, ph = 260, margin = 52, legend_h = 26;
  const int ncols = static_cast<int>(grid.front().size());
  const int nrows = static_cast<int>(grid.size());
  const int width = ncols * pw + margin;
  const int height = nrows * ph + legend_h + 20;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  std::map<std::string, int> color_of;
  for (int r = 0; r < nrows; ++r)
    for (int c = 0; c < ncols; ++c)
      for (const Series& s : grid[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].series)
        if (!color_of.count(s.label))
          color_of[s.label] = static_cast<int>(color_of.size()) % 8;

  for (int r = 0; r < nrows; ++r) {
    for (int c = 0; c < ncols; ++c) {
      const Panel& panel = grid[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
      const double ox = margin + c * pw, oy = 24 + r * ph;
      const double iw = pw - 70, ih = ph - 70;
      auto px = [&](double x) { return ox + (x - x_min) / std::max(1e-12, x_max - x_min) * iw; };
      auto py = [&](double y) { return oy + ih - y * ih; };

      svg << "<text x=\"" << ox + iw / 2 << "\" y=\"" << oy - 8
          << "\" text-anchor=\"middle\" font-weight=\"bold\">" << panel.title << "</text>\n";
      svg << "<rect x=\"" << ox << "\" y=\"" << oy << "\" width=\"" << iw << "\" height=\"" << ih
          << "\" fill=\"none\" stroke=\"#444\"/>\n";
      for (int g = 0; g <= 4; ++g) {
        const double y = g / 4.0;
        svg << "<line x1=\"" << ox << "\" y1=\"" << py(y) << "\" x2=\"" << ox + iw << "\" y2=\""
            << py(y) << "\" stroke=\"#ddd\"/>\n";
        svg << "<text x=\"" << ox - 6 << "\" y=\"" << py(y) + 4
            << "\" text-anchor=\"end\">" << fmt(y, 2) << "</text>\n";
      }
      std::set<double> xticks;
      for (const Series& s : panel.series)
        for (auto [x, y] : s.points) xticks.insert(x);
      for (double x : xticks)
        svg << "<text x=\"" << px(x) << "\" y=\"" << oy + ih + 14
            << "\" text-anchor=\"middle\">" << fmt(x, 3) << "</text>\n";
      svg << "<text x=\"" << ox + iw / 2 << "\" y=\"" << oy + ih + 30
          << "\" text-anchor=\"middle\">" << x_label << "</text>\n";

      for (const Series& s : panel.series) {
        const char* color = kPalette[color_of[s.label]];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.6\" points=\"";
        for (auto [x, y] : s.points) svg << fmt(px(x), 6) << ',' << fmt(py(y), 6) << ' ';
        svg << "\"/>\n";
        for (auto [x, y] : s.points)
          svg << "<circle cx=\"" << fmt(px(x), 6) << "\" cy=\"" << fmt(py(y), 6)
              << "\" r=\"2.4\" fill=\"" << color << "\"/>\n";
      }
    }
  }

  double lx = margin;
  const double ly = nrows * ph + 30;
  for (const auto& [label, ci] : color_of) {
    svg << "<line x1=\"" << lx << "\" y1=\"" << ly - 4 << "\" x2=\"" << lx + 18 << "\" y2=\""
        << ly - 4 << "\" stroke=\"" << kPalette[ci] << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << lx + 22 << "\" y=\"" << ly << "\">" << label << "</text>\n";
    lx += 26 + 7.0 * static_cast<double>(label.size());
  }
  svg << "</svg>\n";
  return svg.str();
}

struct GroupAcc {
  long passes = 0, total = 0;
  double value() const { return total ? static_cast<double>(passes) / static_cast<double>(total) : -1; }
};

}  // namespace

void write_report(const ResultsTable& results, const std::string& outdir) {
  if (results.rows.empty()) throw DataError("report: results are empty");
  std::filesystem::create_directories(outdir);

  write_summary_csv(results, outdir + "/summary.csv");

  std::set<std::string> tasks, tags;
  std::set<int> dims, instance_counts;
  std::set<double> sigmas;
  for (const ResultRow& r : results.rows) {
    tasks.insert(r.task);
    tags.insert(r.tag);
    dims.insert(r.dim);
    sigmas.insert(r.sigma);
    instance_counts.insert(r.instances);
  }

  // accuracy, keyed however the caller below needs
  auto accumulate = [&](auto key_fn) {
    std::map<decltype(key_fn(results.rows.front())), GroupAcc> acc;
    for (const ResultRow& r : results.rows) {
      if (r.excluded) continue;
      GroupAcc& a = acc[key_fn(r)];
      ++a.total;
      if (r.pass) ++a.passes;
    }
    return acc;
  };

  // ---- accuracy vs. instances: rows = sigma, cols = task, lines = tag/dim
  {
    auto acc = accumulate([](const ResultRow& r) {
      return std::tuple<std::string, std::string, int, double, int>(r.tag, r.task, r.dim, r.sigma,
                                                                    r.instances);
    });
    std::vector<std::vector<Panel>> grid;
    for (double sigma : sigmas) {
      grid.emplace_back();
      for (const std::string& task : tasks) {
        Panel panel;
        panel.title = task + ", sigma=" + fmt(sigma, 3);
        for (const std::string& tag : tags)
          for (int dim : dims) {
            Series s;
            s.label = tag + " " + std::to_string(dim) + "D";
            for (int n : instance_counts) {
              auto it = acc.find({tag, task, dim, sigma, n});
              if (it != acc.end() && it->second.total > 0)
                s.points.emplace_back(static_cast<double>(n), it->second.value());
            }
            if (!s.points.empty()) panel.series.push_back(std::move(s));
          }
        grid.back().push_back(std::move(panel));
      }
    }
    std::ofstream out(outdir + "/accuracy_vs_instances.svg");
    if (!out) throw DataError("report: cannot write accuracy_vs_instances.svg");
    out << render_svg("instances", grid, *instance_counts.begin(), *instance_counts.rbegin());
  }

  // ---- accuracy vs. noise: one row, cols = task, lines = tag/dim (all n pooled)
  {
    auto acc = accumulate([](const ResultRow& r) {
      return std::tuple<std::string, std::string, int, double>(r.tag, r.task, r.dim, r.sigma);
    });
    std::vector<std::vector<Panel>> grid(1);
    for (const std::string& task : tasks) {
      Panel panel;
      panel.title = task + " (all instance counts)";
      for (const std::string& tag : tags)
        for (int dim : dims) {
          Series s;
          s.label = tag + " " + std::to_string(dim) + "D";
          for (double sigma : sigmas) {
            auto it = acc.find({tag, task, dim, sigma});
            if (it != acc.end() && it->second.total > 0)
              s.points.emplace_back(sigma, it->second.value());
          }
          if (!s.points.empty()) panel.series.push_back(std::move(s));
        }
      grid[0].push_back(std::move(panel));
    }
    std::ofstream out(outdir + "/accuracy_vs_noise.svg");
    if (!out) throw DataError("report: cannot write accuracy_vs_noise.svg");
    out << render_svg("sigma", grid, *sigmas.begin(), std::max(*sigmas.rbegin(), 1e-9));
  }

  // ---- markdown summary
  {
    auto acc = accumulate([](const ResultRow& r) {
      return std::tuple<std::string, std::string, int, double, int>(r.tag, r.task, r.dim, r.sigma,
                                                                    r.instances);
    });
    std::ofstream out(outdir + "/summary.md");
    if (!out) throw DataError("report: cannot write summary.md");
    out << "# Evaluation summary\n\n";
    out << "| tag | task | dim | sigma | instances | accuracy |\n";
    out << "|-----|------|-----|-------|-----------|----------|\n";
    for (const auto& [key, a] : acc) {
      const auto& [tag, task, dim, sigma, n] = key;
      out << "| " << tag << " | " << task << " | " << dim << " | " << fmt(sigma, 3) << " | " << n
          << " | " << fmt(a.value(), 4) << " |\n";
    }
  }
}

}  // namespace misode
