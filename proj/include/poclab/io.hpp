#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace poclab {

inline int thread_cap() {
  if (const char* env = std::getenv("POC_LAB_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  return 1;
}

// Data-parallel loop over [0, n). Work is sharded in fixed contiguous blocks so
// each index is processed exactly once; callers must write only to their own
// per-index slots to keep results independent of the thread count.
inline void parallel_for(long n, const std::function<void(long, long)>& body_range) {
  const int threads = std::min<long>(thread_cap(), std::max<long>(1, n));
  if (threads <= 1) {
    body_range(0, n);
    return;
  }
  std::vector<std::thread> pool;
  const long chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const long lo = t * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&body_range, lo, hi] { body_range(lo, hi); });
  }
  for (auto& th : pool) th.join();
}

// Sum f(i) over [0, n) with a fixed block size and fixed combination order, so
// the floating-point result is identical for any thread count.
inline double blocked_sum(long n, const std::function<double(long)>& f, long block = 1024) {
  const long nblocks = (n + block - 1) / block;
  std::vector<double> partial(static_cast<std::size_t>(std::max<long>(1, nblocks)), 0.0);
  parallel_for(nblocks, [&](long blo, long bhi) {
    for (long b = blo; b < bhi; ++b) {
      double s = 0.0;
      const long lo = b * block, hi = std::min(n, lo + block);
      for (long i = lo; i < hi; ++i) s += f(i);
      partial[static_cast<std::size_t>(b)] = s;
    }
  });
  double total = 0.0;
  for (long b = 0; b < nblocks; ++b) total += partial[static_cast<std::size_t>(b)];
  return total;
}

inline std::string fmt_g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw std::runtime_error("CsvWriter: cannot open " + path);
    for (std::size_t i = 0; i < header.size(); ++i)
      out_ << (i ? "," : "") << header[i];
    out_ << "\n";
  }

  void row(const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i)
      out_ << (i ? "," : "") << fmt_g17(values[i]);
    out_ << "\n";
  }

 private:
  std::ofstream out_;
};

// Minimal SVG line chart: one or more series over a shared x grid, optional log
// scale on y (values clamped below at floor).
struct SvgSeries {
  std::string label;
  std::string color = "#1f6fb2";
  std::vector<double> ys;
};

inline void write_svg_lines(const std::string& path, const std::string& title,
                            const std::vector<double>& xs, const std::vector<SvgSeries>& series,
                            bool log_y = false, double log_floor = 1e-12) {
  const int W = 760, H = 480, ML = 70, MR = 20, MT = 40, MB = 45;
  double xmin = xs.empty() ? 0 : xs.front(), xmax = xs.empty() ? 1 : xs.back();
  if (xmax <= xmin) xmax = xmin + 1;
  double ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (double y : s.ys) {
      const double v = log_y ? std::log10(std::max(y, log_floor)) : y;
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  if (!(ymin < ymax)) {
    ymin -= 1;
    ymax += 1;
  }
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  auto px = [&](double x) { return ML + (x - xmin) / (xmax - xmin) * (W - ML - MR); };
  auto py = [&](double y) {
    const double v = log_y ? std::log10(std::max(y, log_floor)) : y;
    return H - MB - (v - ymin) / (ymax - ymin) * (H - MT - MB);
  };
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title
      << "</text>\n"
      << "<line x1=\"" << ML << "\" y1=\"" << H - MB << "\" x2=\"" << W - MR << "\" y2=\""
      << H - MB << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << ML << "\" y1=\"" << MT << "\" x2=\"" << ML << "\" y2=\"" << H - MB
      << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = xmin + t * (xmax - xmin) / 4;
    const double yraw = ymin + t * (ymax - ymin) / 4;
    const double yv = log_y ? std::pow(10.0, yraw) : yraw;
    svg << "<text x=\"" << px(xv) << "\" y=\"" << H - MB + 18
        << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt_g17(xv).substr(0, 8)
        << "</text>\n"
        << "<text x=\"" << ML - 6 << "\" y=\""
        << H - MB - t * (H - MT - MB) / 4.0 + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
        << fmt_g17(yv).substr(0, 8) << "</text>\n";
  }
  int li = 0;
  for (const auto& s : series) {
    svg << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < xs.size() && i < s.ys.size(); ++i)
      svg << px(xs[i]) << "," << py(s.ys[i]) << " ";
    svg << "\"/>\n"
        << "<text x=\"" << W - MR - 150 << "\" y=\"" << MT + 16 * li << "\" font-size=\"12\" fill=\""
        << s.color << "\">" << s.label << "</text>\n";
    ++li;
  }
  svg << "</svg>\n";
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_svg_lines: cannot open " + path);
  out << svg.str();
}

}  // namespace poclab
