#pragma once

#include <optional>
#include <string>
#include <vector>

#include "numkernel/linalg.hpp"
#include "trainlab/trainlab.hpp"

namespace aotmem {

enum class BoundCurve { ours, previous, chance };
BoundCurve parse_bound_curve(std::string_view s);

struct PlotSpec {
  std::string csv_path;
  std::string x_column = "H";
  std::string y_column = "final_accuracy";
  std::optional<std::string> group_by;
  std::optional<std::string> figure_id;
  std::vector<BoundCurve> bounds;
  std::optional<FitForm> fit;
  std::string title;
  std::string x_label;
  std::string y_label;
};

// Standalone SVG: grouped means as markers, optional least-squares curve,
// optional φ(Hd_h+d), φ(H(d_h−1)+1) and 1/N lines. Byte-identical output for
// identical inputs.
std::string emit_plot(const PlotSpec& spec);
std::string emit_plot(const PlotSpec& spec, const SweepTable& table);

}  // namespace aotmem
