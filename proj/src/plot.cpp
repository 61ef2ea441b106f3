#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ifk/bench.hpp"
#include "ifk/errors.hpp"
#include "ifk/io.hpp"

namespace ifk {

namespace {

constexpr double kWidth = 800.0;
constexpr double kHeight = 500.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 170.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 50.0;

const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                         "#8c564b", "#e377c2", "#7f7f7f"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed << v;
  std::string s = out.str();
  while (s.back() == '0') s.pop_back();
  if (s.back() == '.') s.pop_back();
  return s;
}

}  // namespace

std::string plot_svg(const std::vector<int>& k, const std::vector<std::string>& labels,
                     const std::vector<std::vector<double>>& series, const std::string& title) {
  if (k.empty() || series.empty()) throw Error(ErrorCode::DimMismatch, "nothing to plot");
  if (labels.size() != series.size()) {
    throw Error(ErrorCode::DimMismatch, "one label per series is required");
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (const auto& s : series) {
    if (s.size() != k.size()) throw Error(ErrorCode::DimMismatch, "series length differs from k");
    for (double v : s) {
      if (std::isfinite(v) && v > 0.0) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  if (!std::isfinite(lo)) {
    lo = 1e-3;
    hi = 1.0;
  }
  double dlo = std::floor(std::log10(lo));
  double dhi = std::ceil(std::log10(hi));
  if (dhi <= dlo) dhi = dlo + 1.0;

  const double k0 = k.front();
  const double k1 = std::max<double>(k.back(), k0 + 1.0);
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto sx = [&](double kk) { return kLeft + (kk - k0) / (k1 - k0) * pw; };
  auto sy = [&](double v) { return kTop + (dhi - std::log10(v)) / (dhi - dlo) * ph; };

  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kWidth) << "\" height=\""
      << num(kHeight) << "\" viewBox=\"0 0 " << num(kWidth) << ' ' << num(kHeight) << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << num(kLeft) << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\">"
      << escape(title) << "</text>\n";

  out << "<g stroke=\"#dddddd\" stroke-width=\"1\">\n";
  for (double d = dlo; d <= dhi + 0.5; d += 1.0) {
    const double y = sy(std::pow(10.0, d));
    out << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(y) << "\" x2=\"" << num(kLeft + pw)
        << "\" y2=\"" << num(y) << "\"/>\n";
  }
  out << "</g>\n";
  out << "<g font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">\n";
  for (double d = dlo; d <= dhi + 0.5; d += 1.0) {
    out << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(sy(std::pow(10.0, d)) + 4)
        << "\">1e" << static_cast<int>(d) << "</text>\n";
  }
  out << "</g>\n";
  out << "<g font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">\n";
  const int ticks = 5;
  for (int i = 0; i <= ticks; ++i) {
    const double kk = k0 + (k1 - k0) * i / ticks;
    out << "<text x=\"" << num(sx(kk)) << "\" y=\"" << num(kTop + ph + 18) << "\">"
        << num(std::round(kk)) << "</text>\n";
  }
  out << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kHeight - 10) << "\">k</text>\n"
      << "</g>\n";
  out << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(pw)
      << "\" height=\"" << num(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % (sizeof(kColors) / sizeof(kColors[0]))];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" data-label=\""
        << escape(labels[s]) << "\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < k.size(); ++i) {
      const double v = series[s][i];
      if (!std::isfinite(v) || v <= 0.0) continue;
      out << (first ? "" : " ") << num(sx(k[i])) << ',' << num(sy(v));
      first = false;
    }
    out << "\"/>\n";
  }

  out << "<g font-family=\"sans-serif\" font-size=\"12\">\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % (sizeof(kColors) / sizeof(kColors[0]))];
    const double y = kTop + 14 + 18.0 * s;
    const double x = kLeft + pw + 12;
    out << "<line x1=\"" << num(x) << "\" y1=\"" << num(y - 4) << "\" x2=\"" << num(x + 22)
        << "\" y2=\"" << num(y - 4) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << num(x + 28) << "\" y=\"" << num(y) << "\">" << escape(labels[s])
        << "</text>\n";
  }
  out << "</g>\n</svg>\n";
  return out.str();
}

void emit_plot(const ExperimentResult& r, const std::string& path) {
  const std::string title = r.config.model + ": " + std::string(to_string(r.config.forward)) +
                            " / " + std::string(to_string(r.config.inverse));
  write_file_atomic(path, plot_svg(r.k, {"rmse_fwd", "amse_fwd", "rcrlb_fwd", "amse_inv", "rcrlb_inv"},
                                   {r.rmse_fwd, r.amse_fwd, r.rcrlb_fwd, r.amse_inv, r.rcrlb_inv},
                                   title));
}

}  // namespace ifk
