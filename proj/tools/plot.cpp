#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "cli.hpp"
#include "csflock/errors.hpp"

namespace csflock::cli {

namespace {

constexpr double kWidth = 720, kHeight = 480;
constexpr double kLeft = 80, kRight = 30, kTop = 40, kBottom = 60;
const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"};

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    if (ch == '<') out += "&lt;";
    else if (ch == '>') out += "&gt;";
    else if (ch == '&') out += "&amp;";
    else out += ch;
  }
  return out;
}

// Cartesian frame with optional log10 y axis.
class Canvas {
 public:
  Canvas(double x0, double x1, double y0, double y1, bool log_y) : x0_(x0), x1_(x1), log_y_(log_y) {
    if (log_y_) {
      y0 = std::log10(y0);
      y1 = std::log10(y1);
    }
    if (!(x1_ > x0_)) x1_ = x0_ + 1.0;
    if (!(y1 > y0)) {
      y0 -= 0.5;
      y1 += 0.5;
    }
    const double pad = 0.05 * (y1 - y0);
    y0_ = y0 - pad;
    y1_ = y1 + pad;
  }

  double px(double x) const { return kLeft + (x - x0_) / (x1_ - x0_) * (kWidth - kLeft - kRight); }
  double py(double y) const {
    const double v = log_y_ ? std::log10(y) : y;
    return kHeight - kBottom - (v - y0_) / (y1_ - y0_) * (kHeight - kTop - kBottom);
  }

  void axes(const std::string& title, const std::string& xlabel, const std::string& ylabel,
            const std::vector<std::pair<double, std::string>>& xticks = {}) {
    const double xa = kLeft, xb = kWidth - kRight, ya = kHeight - kBottom, yb = kTop;
    svg_ << "<rect x=\"" << xa << "\" y=\"" << yb << "\" width=\"" << xb - xa << "\" height=\"" << ya - yb
         << "\" fill=\"none\" stroke=\"#333\"/>\n";
    std::vector<std::pair<double, std::string>> ticks = xticks;
    if (ticks.empty())
      for (int i = 0; i <= 5; ++i) ticks.push_back({x0_ + (x1_ - x0_) * i / 5.0, num(x0_ + (x1_ - x0_) * i / 5.0)});
    for (const auto& [x, label] : ticks)
      svg_ << "<text x=\"" << px(x) << "\" y=\"" << ya + 18 << "\" font-size=\"12\" text-anchor=\"middle\">"
           << escape(label) << "</text>\n";
    for (int i = 0; i <= 5; ++i) {
      const double v = y0_ + (y1_ - y0_) * i / 5.0;
      const double y = log_y_ ? std::pow(10.0, v) : v;
      svg_ << "<text x=\"" << xa - 6 << "\" y=\"" << py(y) + 4 << "\" font-size=\"12\" text-anchor=\"end\">"
           << num(y) << "</text>\n";
    }
    svg_ << "<text x=\"" << kWidth / 2 << "\" y=\"" << kTop - 14 << "\" font-size=\"15\" text-anchor=\"middle\">"
         << escape(title) << "</text>\n";
    svg_ << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight - 18 << "\" font-size=\"13\" text-anchor=\"middle\">"
         << escape(xlabel) << "</text>\n";
    svg_ << "<text x=\"18\" y=\"" << kHeight / 2 << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
         << kHeight / 2 << ")\">" << escape(ylabel) << "</text>\n";
  }

  void polyline(const std::vector<double>& xs, const std::vector<double>& ys, const std::string& color,
                const std::string& dash = {}, double width = 1.5) {
    std::ostringstream d;
    bool pen = false;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (log_y_ && !(ys[i] > 0.0)) {
        pen = false;
        continue;
      }
      d << (pen ? " L" : " M") << px(xs[i]) << ' ' << py(ys[i]);
      pen = true;
    }
    if (d.str().empty()) return;
    svg_ << "<path d=\"" << d.str() << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << width << '"';
    if (!dash.empty()) svg_ << " stroke-dasharray=\"" << dash << '"';
    svg_ << "/>\n";
  }

  void polygon(const std::vector<std::pair<double, double>>& pts, const std::string& color) {
    svg_ << "<path d=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) svg_ << (i ? " L" : "M") << pts[i].first << ' ' << pts[i].second;
    svg_ << " Z\" fill=\"" << color << "\" fill-opacity=\"0.45\" stroke=\"" << color << "\"/>\n";
  }

  void marker(double x, double y, double lo, double hi, const std::string& color) {
    svg_ << "<path d=\"M" << px(x) << ' ' << py(lo) << " L" << px(x) << ' ' << py(hi) << "\" stroke=\"" << color
         << "\"/>\n";
    svg_ << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3.5\" fill=\"" << color << "\"/>\n";
  }

  void legend(std::size_t row, const std::string& color, const std::string& label, const std::string& dash = {}) {
    const double x = kWidth - kRight - 215, y = kTop + 16 + 16 * static_cast<double>(row);
    svg_ << "<path d=\"M" << x << ' ' << y - 4 << " L" << x + 24 << ' ' << y - 4 << "\" stroke=\"" << color << '"';
    if (!dash.empty()) svg_ << " stroke-dasharray=\"" << dash << '"';
    svg_ << " stroke-width=\"2\"/>\n<text x=\"" << x + 30 << "\" y=\"" << y << "\" font-size=\"11\">" << escape(label)
         << "</text>\n";
  }

  std::string finish() const {
    std::ostringstream doc;
    doc << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
        << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << svg_.str() << "</svg>\n";
    return doc.str();
  }

 private:
  double x0_, x1_, y0_ = 0, y1_ = 1;
  bool log_y_;
  std::ostringstream svg_;
};

std::vector<double> numbers(const json& j, const char* what) {
  if (!j.is_array()) throw ConfigError(std::string("report field '") + what + "' is not an array");
  std::vector<double> out;
  for (const auto& x : j) out.push_back(x.is_number() ? x.get<double>() : std::numeric_limits<double>::quiet_NaN());
  return out;
}

double field(const json& results, const char* key) {
  if (!results.contains(key) || !results[key].is_number())
    throw ConfigError(std::string("report results lack numeric '") + key + "'");
  return results[key].get<double>();
}

struct Curve {
  double sigma;
  std::vector<double> t, e;
};

std::string render_series(const json& report) {
  const auto& r = report["results"];
  std::vector<Curve> curves;
  if (r.contains("series")) {
    curves.push_back({field(r, "sigma"), numbers(r["series"]["times"], "series.times"),
                      numbers(r["series"]["E"], "series.E")});
  } else if (r.contains("sigmas")) {
    for (const auto& s : r["sigmas"])
      curves.push_back({s["sigma"].get<double>(), numbers(s["series"]["times"], "series.times"),
                        numbers(s["series"]["mean"], "series.mean")});
  } else {
    throw ConfigError("report has no time series");
  }
  const double pm = field(r, "psi_min"), pM = field(r, "psi_max"), e0 = field(r, "E0");

  double tmax = 0.0, lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& c : curves) {
    if (c.t.empty() || c.t.size() != c.e.size()) throw ConfigError("report has an empty series");
    tmax = std::max(tmax, c.t.back());
    for (double v : c.e)
      if (v > 0.0 && std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
  }
  if (!(hi > 0.0)) throw ConfigError("report series has no positive values to plot on a log scale");
  // Envelopes share the frame so the bracket is visible.
  for (const auto& c : curves)
    for (double rate : {pM - 2.0 * c.sigma, pm - 2.0 * c.sigma}) {
      const double end = e0 * std::exp(-2.0 * rate * tmax);
      lo = std::min(lo, std::max(end, hi * 1e-12));
      hi = std::max(hi, end);
    }

  Canvas cv(0.0, tmax, lo, hi, true);
  cv.axes("Variance functional", "t", "E_t (log scale)");
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto& c = curves[i];
    const std::string color = kPalette[i % 8];
    std::vector<double> upper(c.t.size()), lower(c.t.size());
    for (std::size_t k = 0; k < c.t.size(); ++k) {
      upper[k] = e0 * std::exp(-2.0 * (pm - 2.0 * c.sigma) * c.t[k]);
      lower[k] = e0 * std::exp(-2.0 * (pM - 2.0 * c.sigma) * c.t[k]);
    }
    cv.polyline(c.t, c.e, color, {}, 2.0);
    cv.polyline(c.t, upper, color, "6 4", 1.0);
    cv.polyline(c.t, lower, color, "2 3", 1.0);
    cv.legend(i, color, "sigma = " + num(c.sigma));
  }
  cv.legend(curves.size(), "#555", "E0 exp(-2(psi_m - 2 sigma) t)", "6 4");
  cv.legend(curves.size() + 1, "#555", "E0 exp(-2(psi_M - 2 sigma) t)", "2 3");
  return cv.finish();
}

std::string render_phase(const json& report) {
  const auto& r = report["results"];
  if (!r.contains("sigmas") || !r["sigmas"].is_array()) throw ConfigError("report has no sigma sweep");
  const double pm = field(r, "psi_min"), pM = field(r, "psi_max");
  std::vector<double> s, rate, se;
  for (const auto& e : r["sigmas"]) {
    if (!e.contains("fit") || e["fit"].is_null()) continue;
    s.push_back(e["sigma"].get<double>());
    rate.push_back(e["fit"]["rate"].get<double>());
    se.push_back(e["fit"]["std_error"].get<double>());
  }
  if (s.empty()) throw ConfigError("report has an empty series of fitted rates");
  double s0 = *std::min_element(s.begin(), s.end()), s1 = *std::max_element(s.begin(), s.end());
  if (s1 == s0) {
    s0 -= 0.1;
    s1 += 0.1;
  }
  s0 = std::max(0.0, s0 - 0.05);
  s1 += 0.05;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < s.size(); ++i) {
    lo = std::min(lo, rate[i] - 3 * se[i]);
    hi = std::max(hi, rate[i] + 3 * se[i]);
  }
  for (double x : {s0, s1}) {
    lo = std::min({lo, 2 * (pm - 2 * x), 2 * (pM - 2 * x)});
    hi = std::max({hi, 2 * (pm - 2 * x), 2 * (pM - 2 * x)});
  }
  Canvas cv(s0, s1, lo, hi, false);
  cv.axes("Fitted decay rate", "sigma", "rate r");
  cv.polyline({s0, s1}, {2 * (pm - 2 * s0), 2 * (pm - 2 * s1)}, "#d62728", {}, 1.5);
  cv.polyline({s0, s1}, {2 * (pM - 2 * s0), 2 * (pM - 2 * s1)}, "#d62728", "6 4", 1.0);
  cv.polyline({s0, s1}, {0.0, 0.0}, "#999", "2 3", 1.0);
  for (std::size_t i = 0; i < s.size(); ++i) cv.marker(s[i], rate[i], rate[i] - 3 * se[i], rate[i] + 3 * se[i], "#1f77b4");
  cv.legend(0, "#d62728", "r = 2(psi_m - 2 sigma)");
  cv.legend(1, "#d62728", "r = 2(psi_M - 2 sigma)", "6 4");
  cv.legend(2, "#1f77b4", "fit +- 3 se");
  return cv.finish();
}

std::string render_violin(const json& report) {
  const auto& r = report["results"];
  if (!r.contains("sigmas") || !r["sigmas"].is_array()) throw ConfigError("report has no sigma sweep");
  std::vector<double> s;
  std::vector<std::vector<double>> groups;
  for (const auto& e : r["sigmas"]) {
    if (!e.contains("pathwise_rates")) continue;
    auto v = numbers(e["pathwise_rates"], "pathwise_rates");
    std::erase_if(v, [](double x) { return !std::isfinite(x); });
    if (v.size() < 2) continue;
    s.push_back(e["sigma"].get<double>());
    groups.push_back(std::move(v));
  }
  if (groups.empty()) throw ConfigError("report has an empty series of per-path rates");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& g : groups)
    for (double x : g) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  const double slots = static_cast<double>(groups.size());
  Canvas cv(-0.5, slots - 0.5, lo, hi, false);
  std::vector<std::pair<double, std::string>> ticks;
  for (std::size_t i = 0; i < s.size(); ++i) ticks.push_back({static_cast<double>(i), num(s[i])});
  cv.axes("Per-path rate -log(E_T/E_0)/T", "sigma", "rate", ticks);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    const double n = static_cast<double>(g.size());
    double mean = 0.0, var = 0.0;
    for (double x : g) mean += x / n;
    for (double x : g) var += (x - mean) * (x - mean) / (n - 1.0);
    const double bw = std::max(1.06 * std::sqrt(var) * std::pow(n, -0.2), 1e-9 * (1.0 + std::abs(mean)));
    const double a = *std::min_element(g.begin(), g.end()), b = *std::max_element(g.begin(), g.end());
    std::vector<double> ys, dens;
    double peak = 0.0;
    for (int k = 0; k <= 60; ++k) {
      const double y = a + (b - a) * k / 60.0;
      double f = 0.0;
      for (double x : g) f += std::exp(-0.5 * (y - x) * (y - x) / (bw * bw));
      ys.push_back(y);
      dens.push_back(f);
      peak = std::max(peak, f);
    }
    const double centre = static_cast<double>(i);
    std::vector<std::pair<double, double>> pts;
    for (std::size_t k = 0; k < ys.size(); ++k) pts.push_back({cv.px(centre + 0.4 * dens[k] / peak), cv.py(ys[k])});
    for (std::size_t k = ys.size(); k-- > 0;) pts.push_back({cv.px(centre - 0.4 * dens[k] / peak), cv.py(ys[k])});
    cv.polygon(pts, kPalette[i % 8]);
    cv.polyline({centre - 0.25, centre + 0.25}, {mean, mean}, "#000", {}, 1.5);
    cv.legend(i, kPalette[i % 8], "sigma = " + num(s[i]));
  }
  return cv.finish();
}

}  // namespace

std::string_view to_string(PlotKind kind) {
  switch (kind) {
    case PlotKind::series: return "series";
    case PlotKind::phase_diagram: return "phase-diagram";
    case PlotKind::violin: return "violin";
  }
  return "unknown";
}

PlotKind plot_kind_from_string(std::string_view name) {
  for (auto k : {PlotKind::series, PlotKind::phase_diagram, PlotKind::violin})
    if (name == to_string(k)) return k;
  throw ConfigError("unknown plot kind '" + std::string(name) + "'");
}

std::string render_svg(const json& report, PlotKind kind) {
  const auto parsed = ExperimentReport::from_json(report);  // schema check
  try {
    switch (kind) {
      case PlotKind::series: return render_series(report);
      case PlotKind::phase_diagram: return render_phase(report);
      case PlotKind::violin: return render_violin(report);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("report does not carry plot data: ") + e.what());
  }
  return {};
}

}  // namespace csflock::cli
