#include "mlr/admm.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <sstream>

namespace mlr {

void AdmmConfig::validate() const {
  if (!(alpha >= 0.0)) throw std::invalid_argument("admm: alpha must be >= 0");
  if (!(rho0 > 0.0)) throw std::invalid_argument("admm: rho0 must be positive");
  if (n_inner < 1) throw std::invalid_argument("admm: n_inner must be >= 1");
  if (n_outer < 1) throw std::invalid_argument("admm: n_outer must be >= 1");
  if (!(tau > 0.0f && tau <= 1.0f)) throw std::invalid_argument("admm: tau must be in (0, 1]");
}

AdmmState AdmmState::init(const Geometry& geom, double rho0) {
  AdmmState st;
  const Shape3 vs = geom.volume_shape();
  st.u = Volume(vs, Domain::space);
  st.psi = GradField::zeros(vs);
  st.psi_prev = GradField::zeros(vs);
  st.lambda = GradField::zeros(vs);
  st.g = GradField::zeros(vs);
  st.G = Volume(vs, Domain::space);
  st.G_prev = Volume(vs, Domain::space);
  st.p_prev = Volume(vs, Domain::space);
  st.rho = rho0;
  return st;
}

namespace {

double sq(double x) { return x * x; }

// Isotropic per-voxel magnitude over the three gradient components.
double tv_norm(const GradField& g) {
  double tv = 0.0;
  const std::int64_t n = g.comp[0].size();
  for (std::int64_t i = 0; i < n; ++i)
    tv += std::sqrt(std::norm(g.comp[0].data()[i]) + std::norm(g.comp[1].data()[i]) +
                    std::norm(g.comp[2].data()[i]));
  return tv;
}

// Shared inner loop. gradient() returns G at the current u and also exposes
// the frequency-domain residual and the regularizer residual it computed, so
// the step length can be taken from the true directional derivative along p:
//   b = Re<r_hat, L p> + rho * Re<grad(u) - g, grad(p)>
// For exact operators b equals <G, p>, so this is the usual exact line
// search. When G came through the memo path the <G, p> form inherits its
// reuse error in full, and dividing that by a small ||L p||^2 + rho||grad p||^2
// (directions the forward model barely sees) produces arbitrarily large junk
// steps. The residual form scales with the same operator applications as the
// denominator, which caps the loss damage of one corrupted step at half the
// squared residual error no matter how unfavorable the direction is.
void lsp_common(AdmmState& st, const AdmmConfig& cfg,
                const std::function<Volume(const Volume&, double&, ProjectionSet&, GradField&)>&
                    gradient,
                const std::function<ProjectionSet(const Volume&)>& forward) {
  // The quadratic's g is fixed for the whole LSP phase.
  st.g = sub(st.psi, scaled(st.lambda, cplx(1.0 / st.rho, 0.0)));
  st.have_direction = false;  // the subproblem changed; restart the direction
  const std::size_t phase_start = st.inner_losses.size();

  for (int inner = 0; inner < cfg.n_inner; ++inner) {
    double loss = 0.0;
    ProjectionSet r_hat;
    GradField gd;
    Volume G = gradient(st.u, loss, r_hat, gd);

    st.inner_losses.push_back(loss);
    const std::size_t n = st.inner_losses.size();
    // Divergence check stays within the current phase: across phases g (and
    // possibly rho) change the quadratic, so comparing losses over a phase
    // boundary would flag ordinary ADMM target moves as divergence.
    if (n >= phase_start + 4 && st.inner_losses[n - 1] > 10.0 * st.inner_losses[n - 4]) {
      std::ostringstream msg;
      msg << "inner loss diverged: " << st.inner_losses[n - 4] << " -> "
          << st.inner_losses[n - 1] << " within 3 iterations";
      throw AdmmAbort(msg.str());
    }

    const double normG2 = sq(norm2(G));
    double beta = 0.0;
    if (st.have_direction) {
      const double dy = vdot(st.p_prev, sub(G, st.G_prev)).real();
      if (dy > 0.0) beta = normG2 / dy;
    }
    Volume p = scaled(G, cplx(-1.0, 0.0));
    if (beta != 0.0) axpy(cplx(beta, 0.0), st.p_prev, p);

    auto step_terms = [&](const Volume& dir, double& a, double& b) {
      const ProjectionSet q = forward(dir);
      const GradField gq = grad(dir);
      a = sq(norm2(q)) + st.rho * sq(norm2(gq));
      b = vdot(r_hat, q).real() + st.rho * gdot(gd, gq).real();
    };
    double a = 0.0, b = 0.0;
    step_terms(p, a, b);
    if (b > 0.0) {  // conjugate direction points uphill: fall back to steepest descent
      p = scaled(G, cplx(-1.0, 0.0));
      step_terms(p, a, b);
    }
    if (a > 0.0 && b < 0.0) {
      const double gamma = -b / a;
      axpy(cplx(gamma, 0.0), p, st.u);
    }
    // a == 0 means p == 0 (stationary point); b >= 0 means no descent along
    // p is possible. Either way leave u unchanged.

    st.G_prev = std::move(G);
    st.p_prev = std::move(p);
    st.have_direction = true;
  }
}

}  // namespace

void lsp_baseline(AdmmState& st, const ProjectionSet& d, const AdmmConfig& cfg,
                  OperatorEngine& eng) {
  auto gradient = [&](const Volume& u, double& loss, ProjectionSet& r_hat, GradField& gd) {
    const ProjectionSet d_pred = eng.f2d_adj(eng.fu2d(eng.fu1d(u)));
    const ProjectionSet resid = sub(d_pred, d);
    gd = sub(grad(u), st.g);
    loss = 0.5 * sq(norm2(resid)) + 0.5 * st.rho * sq(norm2(gd));
    r_hat = eng.f2d(resid);
    Volume G = eng.fu1d_adj(eng.fu2d_adj(r_hat));
    axpy(cplx(-st.rho, 0.0), div(gd), G);
    return G;
  };
  // f2d is unitary, so <resid, f2d_adj(q)> (in space) equals <f2d(resid), q>
  // (in frequency) and both pipelines share the same line-search forward.
  lsp_common(st, cfg, gradient,
             [&](const Volume& p) { return eng.fu2d(eng.fu1d(p, false), false); });
}

void lsp_optimized(AdmmState& st, const ProjectionSet& d_hat, const AdmmConfig& cfg,
                   OperatorEngine& eng) {
  auto gradient = [&](const Volume& u, double& loss, ProjectionSet& r_hat, GradField& gd) {
    r_hat = eng.fu2d_fused(eng.fu1d(u), d_hat);
    gd = sub(grad(u), st.g);
    loss = 0.5 * sq(norm2(r_hat)) + 0.5 * st.rho * sq(norm2(gd));
    Volume G = eng.fu1d_adj(eng.fu2d_adj(r_hat));
    axpy(cplx(-st.rho, 0.0), div(gd), G);
    return G;
  };
  lsp_common(st, cfg, gradient,
             [&](const Volume& p) { return eng.fu2d(eng.fu1d(p, false), false); });
}

void rsp_update(AdmmState& st, const AdmmConfig& cfg) {
  if (!(st.rho > 0.0)) throw std::invalid_argument("rsp_update: rho must be positive");
  st.psi_prev = st.psi;
  const GradField z = add(grad(st.u), scaled(st.lambda, cplx(1.0 / st.rho, 0.0)));
  const double threshold = cfg.alpha / st.rho;
  const std::int64_t n = z.comp[0].size();
  for (std::int64_t i = 0; i < n; ++i) {
    const double m = std::sqrt(std::norm(z.comp[0].data()[i]) + std::norm(z.comp[1].data()[i]) +
                               std::norm(z.comp[2].data()[i]));
    const double scale = m > 0.0 ? std::max(m - threshold, 0.0) / m : 0.0;
    for (int c = 0; c < 3; ++c) st.psi.comp[c].data()[i] = z.comp[c].data()[i] * scale;
  }
}

void multiplier_penalty_update(AdmmState& st, const AdmmConfig& cfg) {
  const GradField diff = sub(grad(st.u), st.psi);
  st.lambda = add(st.lambda, scaled(diff, cplx(st.rho, 0.0)));
  st.r = norm2(diff);
  st.s = st.rho * norm2(sub(st.psi, st.psi_prev));
  if (cfg.freeze_rho) return;
  if (st.r > 10.0 * st.s) {
    st.rho *= 2.0;
    st.lambda = scaled(st.lambda, cplx(0.5, 0.0));
  } else if (st.s > 10.0 * st.r) {
    st.rho *= 0.5;
    st.lambda = scaled(st.lambda, cplx(2.0, 0.0));
  }
}

std::pair<double, double> accuracy(const Volume& r_comp, const Volume& r_lb) {
  const double denom = norm2(r_comp);
  if (denom == 0.0) throw std::invalid_argument("accuracy: reference volume has zero norm");
  const double e = norm2(sub(r_comp, r_lb)) / denom;
  return {e, 1.0 - e};
}

double objective(const Volume& u, const ProjectionSet& d_hat, const AdmmConfig& cfg,
                 OperatorEngine& eng) {
  const ProjectionSet pred_hat = eng.fu2d(eng.fu1d(u, false), false);
  const double data = 0.5 * sq(norm2(sub(pred_hat, d_hat)));
  return data + cfg.alpha * tv_norm(grad(u));
}

std::string ReconReport::csv() const {
  std::ostringstream out;
  out << "iteration,loss,E,accuracy,miss,remote_hit,cache_hit,ms_lsp,ms_rsp,ms_update\n";
  out << std::setprecision(12);
  for (const IterationRow& row : rows)
    out << row.iteration << ',' << row.loss << ',' << row.e << ',' << row.accuracy << ','
        << row.miss << ',' << row.remote_hit << ',' << row.cache_hit << ',' << row.ms_lsp
        << ',' << row.ms_rsp << ',' << row.ms_update << '\n';
  return out.str();
}

ReconResult reconstruct(const ProjectionSet& d, const Geometry& geom, const AdmmConfig& cfg,
                        OperatorEngine& eng, const Volume* reference) {
  cfg.validate();
  if (d.shape() != geom.projection_shape())
    throw std::invalid_argument("reconstruct: data shape does not match the geometry");

  using clock = std::chrono::steady_clock;
  auto ms_since = [](clock::time_point t0, clock::time_point t1) {
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
  };

  AdmmState st = AdmmState::init(geom, cfg.rho0);
  const ProjectionSet d_hat = eng.f2d(d, false);

  ReconReport rep;
  MemoCounterSnapshot prev;
  if (eng.memo()) prev = eng.memo()->counters();

  for (int outer = 0; outer < cfg.n_outer; ++outer) {
    st.iteration = outer;
    eng.set_iteration(outer);
    IterationRow row;
    row.iteration = outer;
    try {
      const auto t0 = clock::now();
      if (cfg.pipeline == Pipeline::baseline)
        lsp_baseline(st, d, cfg, eng);
      else
        lsp_optimized(st, d_hat, cfg, eng);
      const auto t1 = clock::now();
      rsp_update(st, cfg);
      const auto t2 = clock::now();
      multiplier_penalty_update(st, cfg);
      const auto t3 = clock::now();
      row.ms_lsp = ms_since(t0, t1);
      row.ms_rsp = ms_since(t1, t2);
      row.ms_update = ms_since(t2, t3);
    } catch (const AdmmAbort& ex) {
      rep.aborted = true;
      rep.abort_reason = ex.what();
      break;
    }

    // Results computed this iteration become visible to lookups only from
    // the next iteration on; reuse within an iteration would feed a chunk's
    // approximation error straight back into the conjugate-gradient chain.
    eng.flush_inserts();

    row.loss = objective(st.u, d_hat, cfg, eng);
    if (reference) {
      const auto [e, acc] = accuracy(*reference, st.u);
      row.e = e;
      row.accuracy = acc;
    }
    if (eng.memo()) {
      const MemoCounterSnapshot now = eng.memo()->counters();
      row.miss = now.misses - prev.misses;
      row.remote_hit = now.remote_hits - prev.remote_hits;
      row.cache_hit = now.cache_hits - prev.cache_hits;
      prev = now;
    }
    rep.rows.push_back(row);
  }
  return {std::move(st.u), std::move(rep)};
}

}  // namespace mlr
