#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace vppflex::pwl {

// Min: concave min-affine. Max: convex max-affine.
enum class Mode { Min, Max };

struct PwlModel {
  Mode mode = Mode::Max;
  bool clamp = false;  // ReLU at zero, Min mode only
  Eigen::MatrixXd a;   // pieces x dim
  Eigen::VectorXd b;

  int pieces() const { return static_cast<int>(b.size()); }
  int dim() const { return static_cast<int>(a.cols()); }
  // Value before the clamp.
  double raw(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  double eval(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  int active_piece(const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

struct FitOptions {
  int restarts = 10;
  std::uint64_t seed = 1;
  int max_rounds = 100;
  double ridge = 1e-8;
  // Prune-and-reseed moves tried after each restart converges.
  int refine_passes = 20;
};

struct FitStats {
  double sse = 0.0;
  double rmse = 0.0;
  double r2 = 0.0;
};

struct FitResult {
  PwlModel model;
  FitStats stats;
  int rounds = 0;  // of the winning restart
};

// Rows of X are inputs. Alternates point assignment and per-piece least
// squares from k-means seeded partitions; keeps the best restart by SSE.
// With `clamp`, zero-target points only pull on a piece while it predicts
// above zero. Each restart then repeatedly moves its least useful piece to
// the worst-fit region while that lowers SSE.
FitResult fit_cpwl(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, int m, Mode mode, bool clamp = false,
                   const FitOptions& opts = {});

FitStats fit_stats(const PwlModel& model, const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

}  // namespace vppflex::pwl
