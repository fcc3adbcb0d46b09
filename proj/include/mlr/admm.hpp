#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mlr/array.hpp"
#include "mlr/geometry.hpp"
#include "mlr/operators.hpp"
#include "mlr/scalerun.hpp"

namespace mlr {

enum class Pipeline : std::uint8_t { baseline = 0, optimized = 1 };
enum class MemoMode : std::uint8_t { off = 0, local = 1, distributed = 2 };

struct AdmmConfig {
  double alpha = 1e-3;  // TV weight in 1/2||Lu-d||^2 + alpha*TV(u)
  double rho0 = 1.0;
  int n_inner = 4;
  int n_outer = 30;
  float tau = 0.92f;
  Pipeline pipeline = Pipeline::optimized;
  MemoMode memoization = MemoMode::off;
  bool freeze_rho = false;  // disables the residual-balancing penalty update

  void validate() const;
};

/// Thrown when the inner loss grows by 10x over three consecutive inner
/// iterations; `reconstruct` converts it into an aborted report.
struct AdmmAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AdmmState {
  Volume u;
  GradField psi, psi_prev, lambda, g;
  Volume G, G_prev, p_prev;
  bool have_direction = false;  // p_prev valid (reset at each LSP entry)
  double rho = 1.0;
  double r = 0.0, s = 0.0;  // primal / dual residual norms
  int iteration = 0;
  std::vector<double> inner_losses;  // divergence detector history

  static AdmmState init(const Geometry& geom, double rho0);
};

struct IterationRow {
  int iteration = 0;
  double loss = 0.0;
  double e = 0.0;
  double accuracy = 1.0;
  std::uint64_t miss = 0, remote_hit = 0, cache_hit = 0;
  double ms_lsp = 0.0, ms_rsp = 0.0, ms_update = 0.0;
};

struct ReconReport {
  std::vector<IterationRow> rows;
  bool aborted = false;
  std::string abort_reason;

  std::string csv() const;  // header + one row per outer iteration
};

struct ReconResult {
  Volume u;
  ReconReport report;
};

/// One LSP phase: n_inner conjugate-gradient steps on the quadratic
/// 1/2||Lu-d||^2 + rho/2||grad(u)-g||^2 with g = psi - lambda/rho.
/// The baseline form works in the detector space domain; the optimized form
/// keeps data in the frequency domain against the precomputed d_hat = f2d(d)
/// and fuses the subtraction into fu2d.
void lsp_baseline(AdmmState& st, const ProjectionSet& d, const AdmmConfig& cfg,
                  OperatorEngine& eng);
void lsp_optimized(AdmmState& st, const ProjectionSet& d_hat, const AdmmConfig& cfg,
                   OperatorEngine& eng);

/// Isotropic TV shrinkage: z = grad(u) + lambda/rho, psi = shrink(z, alpha/rho).
void rsp_update(AdmmState& st, const AdmmConfig& cfg);

/// lambda += rho*(grad(u) - psi); residual balancing doubles or halves rho
/// (with the matching lambda rescale) when r and s drift apart by 10x.
void multiplier_penalty_update(AdmmState& st, const AdmmConfig& cfg);

/// E = ||r_comp - r_lb||_F / ||r_comp||_F and Accuracy = 1 - E.
std::pair<double, double> accuracy(const Volume& r_comp, const Volume& r_lb);

/// Objective 1/2||Lu-d||^2 + alpha*TV(u), evaluated without memoization.
double objective(const Volume& u, const ProjectionSet& d_hat, const AdmmConfig& cfg,
                 OperatorEngine& eng);

///// Full outer loop: LSP, RSP, multiplier and penalty phases n_outer times,
/// with per-iteration loss, memo counters and phase timings. When `reference`
/// is given, E/Accuracy compare the current iterate against it.
ReconResult reconstruct(const ProjectionSet& d, const Geometry& geom, const AdmmConfig& cfg,
                        OperatorEngine& eng, const Volume* reference = nullptr);

}  // namespace mlr
