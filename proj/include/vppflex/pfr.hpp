#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "vppflex/ccopf.hpp"
#include "vppflex/cpwl.hpp"

namespace vppflex::pfr {

struct PfrPoint {
  double p = 0.0;  // P_PCC
  double q = 0.0;  // Q_PCC
  double phi = 0.0;
  double gamma = 0.0;
  double r = 0.0;  // distance from the anchor along phi
  int period = 0;
};

struct Anchor {
  double p = 0.0;
  double q = 0.0;
};

// Centroid of the max/min P and max/min Q operating points at confidence
// gamma. Interior to every lower level too; nullopt when gamma is not
// achievable.
std::optional<Anchor> find_anchor(const cc::VppModel& model, int t, double gamma);

struct SweepResult {
  bool achievable = false;
  Anchor anchor;
  std::vector<PfrPoint> points;  // ordered by angle
};

// Boundary of the gamma-level PFR along n_angles rays from `anchor`.
SweepResult sweep_pfr(const cc::VppModel& model, int t, double gamma, const Anchor& anchor, int n_angles = 32,
                      int jobs = 1);
// Same, anchored at gamma's own find_anchor point.
SweepResult sweep_pfr(const cc::VppModel& model, int t, double gamma, int n_angles = 32, int jobs = 1);

std::vector<double> default_gamma_grid();

struct SurfaceOptions {
  std::vector<double> gammas = default_gamma_grid();
  int n_angles = 32;
  int pieces = 16;
  pwl::FitOptions fit;
  // Outside targets sit past the lowest level by at least this fraction of
  // the largest boundary radius.
  double outside_margin = 0.01;
  int jobs = 0;  // 0: default_jobs()
};

struct PfrSurface {
  int period = 0;
  pwl::PwlModel model;  // Min mode, clamped
  double rmse = 0.0;
  double r2 = 0.0;
  Anchor anchor;
  std::vector<double> gammas;     // levels that were achievable
  // Boundary scatter sorted by (gamma, phi). A point shared by several
  // levels appears once, under the highest.
  std::vector<PfrPoint> points;
  std::vector<PfrPoint> outside;  // zero-confidence targets (gamma = 0)
};

PfrSurface build_surface(const cc::VppModel& model, int t, const SurfaceOptions& opts = {});

// Clamped surface value, capped at 1.
double conf_at(const PfrSurface& s, double p, double q);
// Largest value the surface reaches (capped at 1).
double max_confidence(const PfrSurface& s);

struct PfrPolygon {
  int period = 0;
  double gamma = 0.0;
  Eigen::MatrixXd A;  // pieces x 2, A [P;Q] <= b
  Eigen::VectorXd b;
  bool empty = false;
  double max_gamma = 0.0;  // reported when empty
};

PfrPolygon polygon_at(const PfrSurface& s, double gamma);

}  // namespace vppflex::pfr
