#pragma once

namespace jointseq {

// Axis-aligned box in normalized image coordinates, (x0, y0) upper left.
struct Box {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  bool valid() const {
    return 0.0 <= x0 && x0 < x1 && x1 <= 1.0 && 0.0 <= y0 && y0 < y1 && y1 <= 1.0;
  }
  double area() const { return (x1 - x0) * (y1 - y0); }

  bool operator==(const Box&) const = default;
};

}  // namespace jointseq
