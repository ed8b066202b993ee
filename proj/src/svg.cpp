#include "vpipe/svg.hpp"

#include <array>
#include <cstdio>
#include <sstream>

namespace vpipe {

namespace {

const char* pass_color(PassKind kind) {
  switch (kind) {
    case PassKind::F: return "#4e91e6";
    case PassKind::B: return "#56b870";
    case PassKind::S: return "#e6a23c";
    case PassKind::T: return "#d46a6a";
    case PassKind::CBroadcast: return "#9b7fd4";
    case PassKind::CAllReduce: return "#7f6ad4";
    case PassKind::CReduce: return "#6a54c9";
    case PassKind::InputF: return "#6fc7c2";
    case PassKind::InputB: return "#3f9e98";
  }
  return "#888888";
}

std::string fmt(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", value);
  return buf;
}

}  // namespace

std::string render_timeline_svg(const Timeline& timeline,
                                double pixels_per_unit) {
  constexpr double kComputeHeight = 18.0;
  constexpr double kCommHeight = 6.0;
  constexpr double kRowGap = 8.0;
  constexpr double kLeft = 70.0;
  constexpr double kTop = 10.0;
  constexpr double kLegendHeight = 26.0;
  const double row_height = kComputeHeight + kCommHeight + kRowGap;
  const int devices = static_cast<int>(timeline.streams.size());
  if (pixels_per_unit <= 0.0) {
    pixels_per_unit = timeline.makespan > 0.0 ? 1200.0 / timeline.makespan : 1.0;
  }
  const double width = kLeft + timeline.makespan * pixels_per_unit + 20.0;
  const double height = kTop + devices * row_height + kLegendHeight + 10.0;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width)
     << "\" height=\"" << fmt(height) << "\" font-family=\"monospace\" font-size=\"10\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  for (int d = 0; d < devices; ++d) {
    const double y = kTop + d * row_height;
    os << "<text x=\"4\" y=\"" << fmt(y + kComputeHeight - 4.0)
       << "\">device " << d << "</text>\n";
    for (int stream = 0; stream < 2; ++stream) {
      const double sy = stream == kComputeStream ? y : y + kComputeHeight + 1.0;
      const double sh = stream == kComputeStream ? kComputeHeight : kCommHeight;
      for (const TimelineEntry& e : timeline.streams[d][stream]) {
        const double x = kLeft + e.start * pixels_per_unit;
        const double w = (e.end - e.start) * pixels_per_unit;
        os << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(sy) << "\" width=\""
           << fmt(w) << "\" height=\"" << fmt(sh) << "\" fill=\""
           << pass_color(e.pass.kind)
           << "\" stroke=\"white\" stroke-width=\"0.5\"><title>"
           << pass_kind_name(e.pass.kind) << " mb " << e.pass.microbatch
           << " [" << fmt(e.start) << ", " << fmt(e.end) << ")</title></rect>\n";
        if (stream == kComputeStream && w >= 14.0 &&
            (e.pass.kind == PassKind::F || e.pass.kind == PassKind::B)) {
          os << "<text x=\"" << fmt(x + w / 2.0) << "\" y=\""
             << fmt(sy + sh - 5.0) << "\" text-anchor=\"middle\" fill=\"white\">"
             << e.pass.microbatch << "</text>\n";
        }
      }
    }
  }

  const std::array<PassKind, 9> kinds = {
      PassKind::F, PassKind::B, PassKind::S, PassKind::T,
      PassKind::CBroadcast, PassKind::CAllReduce, PassKind::CReduce,
      PassKind::InputF, PassKind::InputB};
  double lx = kLeft;
  const double ly = kTop + devices * row_height + 8.0;
  for (PassKind kind : kinds) {
    os << "<rect x=\"" << fmt(lx) << "\" y=\"" << fmt(ly)
       << "\" width=\"12\" height=\"12\" fill=\"" << pass_color(kind) << "\"/>\n";
    os << "<text x=\"" << fmt(lx + 16.0) << "\" y=\"" << fmt(ly + 10.0) << "\">"
       << pass_kind_name(kind) << "</text>\n";
    lx += 52.0;
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace vpipe
