#pragma once

#include "fasp/types.hpp"

#include <string>
#include <vector>

namespace fasp {

// One evaluated configuration inside a sparsity sweep or mode comparison.
struct sweep_point {
    std::string mode;
    double target_sparsity = 0.0;
    double achieved_sparsity = 0.0;
    double perplexity = 0.0;
    int64_t params_removed = 0;
};

// Deterministic CSV: header + one row per point, full double precision.
std::string sweep_csv(const std::vector<sweep_point>& points);

// Markdown comparison table, one row per (mode, sparsity).
std::string sweep_markdown(const std::vector<sweep_point>& points);

// Self-contained SVG line plot, perplexity against target sparsity, one
// polyline per mode. Hand-rolled: no external rendering dependencies.
std::string sweep_svg(const std::vector<sweep_point>& points);

// Sparser models are expected to score no better than denser ones; each dip
// within a mode yields one human-readable warning. Never an error: small
// models at low sparsity do occasionally improve.
std::vector<std::string> sweep_warnings(const std::vector<sweep_point>& points);

}  // namespace fasp
