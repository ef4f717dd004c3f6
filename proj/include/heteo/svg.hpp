#pragma once

#include <array>
#include <sstream>
#include <string>

namespace heteo::svg {

std::string rgb(double r, double g, double b);
/// Linear blue (t=0) to yellow (t=1) ramp.
std::string ramp(double t);
std::string escape(const std::string& text);

class Document {
public:
  Document(double width, double height);

  void rect(double x, double y, double w, double h, const std::string& fill, const std::string& stroke = "none");
  void line(double x1, double y1, double x2, double y2, const std::string& stroke = "#000000", double width = 1.0);
  void circle(double cx, double cy, double r, const std::string& fill);
  void text(double x, double y, const std::string& s, int size = 11, const std::string& anchor = "start");

  std::string str() const;

private:
  double width_;
  double height_;
  std::ostringstream body_;
};

/// Maps [lo, hi] onto [a, b]; a zero-width domain maps to the midpoint.
struct Scale {
  double lo, hi, a, b;
  double operator()(double v) const { return hi > lo ? a + (v - lo) / (hi - lo) * (b - a) : 0.5 * (a + b); }
};

}  // namespace heteo::svg
