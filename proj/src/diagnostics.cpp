#include "airl/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace airl {

namespace {

constexpr Rgb kWhite{255, 255, 255};
constexpr Rgb kRed{215, 48, 39};
constexpr Rgb kGreen{26, 152, 80};

int lerp(int a, int b, double t) {
  return static_cast<int>(std::lround(a + (b - a) * t));
}

std::string escape_xml(std::string_view text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

RenderTarget render_target_from_name(std::string_view name) {
  if (name == "html") return RenderTarget::html;
  if (name == "ansi") return RenderTarget::ansi;
  throw Error("usage", "unknown render target '" + std::string(name) + "' (html or ansi)");
}

double heat_vmax(std::span<const double> values) {
  double m = 1e-6;
  for (double v : values) m = std::max(m, std::fabs(v));
  return m;
}

Rgb heat_color(double value, double vmax) {
  const double t = std::clamp(value / vmax, -1.0, 1.0);
  const Rgb& end = t < 0 ? kRed : kGreen;
  const double a = std::fabs(t);
  return {lerp(kWhite.r, end.r, a), lerp(kWhite.g, end.g, a), lerp(kWhite.b, end.b, a)};
}

int ansi256(Rgb c) {
  auto level = [](int v) { return static_cast<int>(std::lround(v / 255.0 * 5.0)); };
  return 16 + 36 * level(c.r) + 6 * level(c.g) + level(c.b);
}

std::string css_hex(Rgb c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c.r, c.g, c.b);
  return buf;
}

std::string render_heatmap(const Trace& trace, std::span<const double> values,
                           const Vocabulary& vocab, RenderTarget target,
                           std::string_view title) {
  if (static_cast<int>(values.size()) != trace.response_len()) {
    throw std::invalid_argument("heatmap needs one value per response token");
  }
  const double vmax = heat_vmax(values);
  std::ostringstream out;
  const int p = trace.prompt_len();
  if (target == RenderTarget::ansi) {
    if (!title.empty()) out << title << '\n';
    for (int t = 0; t < p; ++t) out << vocab.symbol(trace[t]) << ' ';
    for (int t = p; t < trace.length(); ++t) {
      out << "\x1b[38;5;16;48;5;" << ansi256(heat_color(values[t - p], vmax)) << 'm'
          << vocab.symbol(trace[t]) << "\x1b[0m ";
    }
    out << '\n';
    return out.str();
  }
  char vbuf[32];
  std::snprintf(vbuf, sizeof vbuf, "%.4g", vmax);
  out << "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\"/>\n<title>"
      << escape_xml(title) << "</title>\n<style>\n"
      << "body { font-family: monospace; line-height: 2; }\n"
      << "span.tok { padding: 2px 3px; margin: 1px; border-radius: 3px; }\n"
      << "span.prompt { color: #777777; }\n"
      << "</style>\n</head>\n<body>\n<p>" << escape_xml(title) << " (scale: &#177;"
      << vbuf << ")</p>\n<div class=\"trace\">\n";
  for (int t = 0; t < p; ++t) {
    out << "<span class=\"prompt\">" << escape_xml(vocab.symbol(trace[t])) << "</span>\n";
  }
  for (int t = p; t < trace.length(); ++t) {
    const double v = values[t - p];
    char tip[32];
    std::snprintf(tip, sizeof tip, "%.4f", v);
    out << "<span class=\"tok\" style=\"background-color: "
        << css_hex(heat_color(v, vmax)) << "\" title=\"" << tip << "\">"
        << escape_xml(vocab.symbol(trace[t])) << "</span>\n";
  }
  out << "</div>\n</body>\n</html>\n";
  return out.str();
}

}  // namespace airl
