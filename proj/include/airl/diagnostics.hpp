#pragma once

#include <span>
#include <string>
#include <string_view>

#include "airl/trace.hpp"

namespace airl {

enum class RenderTarget { html, ansi };

RenderTarget render_target_from_name(std::string_view name);

struct Rgb {
  int r = 255, g = 255, b = 255;
  bool operator==(const Rgb&) const = default;
};

// max(|v|, 1e-6) over the values.
double heat_vmax(std::span<const double> values);

// Diverging scale: -vmax red, 0 white, +vmax green; values beyond are clipped.
Rgb heat_color(double value, double vmax);

// Nearest entry of the xterm 6x6x6 colour cube (indices 16-231).
int ansi256(Rgb color);

std::string css_hex(Rgb color);

// One value per response token. html yields a standalone well-formed
// document; ansi yields a single line with 256-colour backgrounds.
std::string render_heatmap(const Trace& trace, std::span<const double> values,
                           const Vocabulary& vocab, RenderTarget target,
                           std::string_view title = "");

}  // namespace airl
