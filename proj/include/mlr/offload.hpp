#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mlr {

struct TracePhase {
  std::string name;
  double dur_ms = 0.0;
};

struct TraceAccess {
  double first_ms = 0.0;  // offsets within the owning phase
  double last_ms = 0.0;
};

struct TraceVar {
  std::string name;
  double bytes = 0.0;
  bool eligible = false;  // false models pointer-aliased variables
  std::map<int, TraceAccess> accesses;  // phase index -> access window
};

/// Profile of one outer iteration, treated as repeating. Times in ms, sizes
/// in bytes, bandwidth in bytes/ms.
struct PhaseTrace {
  std::vector<TracePhase> phases;
  std::vector<TraceVar> vars;
  double bandwidth = 3.2e6;  // one transfer channel, 3.2 GB/s equivalent

  double iter_ms() const;
  double phase_start(int k) const;
  double total_bytes() const;
  int phase_index(const std::string& name) const;  // -1 when absent
  int var_index(const std::string& name) const;

  void validate() const;
  /// Line format: `phase <name> <dur_ms>`, `var <name> <bytes> <eligible>`,
  /// `access <var> <phase> <first_ms> <last_ms>`; '#' starts a comment.
  static PhaseTrace parse(const std::string& text);
};

/// The idle window of one variable between two consecutive accessed phases
/// (wrapping into the next iteration after the last one). All times absolute
/// ms from the iteration start; consume_abs may exceed iter_ms.
struct Gap {
  int var = -1;
  int from_phase = -1;
  int to_phase = -1;
  double last_abs = 0.0;            // last access before the gap
  double consume_abs = 0.0;         // first access after the gap
  double consume_phase_start = 0.0;  // prefetch deadline (C4)

  double mpd() const { return consume_abs - last_abs; }
};

std::vector<Gap> var_gaps(const PhaseTrace& trace, int var);

/// MPD between the last access in `phase` and the first access in the next
/// accessed phase; PD = consumption time minus the prefetch start, where the
/// default candidate start is the earliest allowed by C1 (offload
/// completion). PD <= 0 excludes the variable from offloading in this gap.
std::pair<double, double> derive_pd_mpd(const PhaseTrace& trace, int var, int phase,
                                        std::optional<double> prefetch_start = std::nullopt);

/// One offload/prefetch decision: evacuate `var` during its gap number `gap`.
/// Times are transfer-request times; the single channel may start them later.
struct PlanAction {
  int var = -1;
  int gap = -1;
  double offload_start = 0.0;
  double prefetch_start = 0.0;
};

struct OffloadPlan {
  std::vector<PlanAction> actions;
};

struct Violation {
  int action = -1;
  int constraint = 0;  // 1..4; 0 marks a structurally invalid action
  std::string detail;
};

/// C1 prefetch after offload completion; C2 a zero idle window excludes the
/// variable; C3 the offload transfer must fit inside the window; C4 prefetch
/// completion past the consuming phase start is reported (it is charged as
/// exposed delay by the simulator, not rejected).
std::vector<Violation> check_constraints(const OffloadPlan& plan, const PhaseTrace& trace);

struct PlanScore {
  enum class Kind { undefined, finite, infinite };

  double m = 0.0;   // peak-memory saving fraction
  double t = 0.0;   // exposed delay / iteration time
  Kind kind = Kind::undefined;
  double mt = 0.0;  // m / t when finite

  /// Ranking value: infinite above every finite score, undefined at 0.
  double rank() const {
    if (kind == Kind::infinite) return std::numeric_limits<double>::infinity();
    return kind == Kind::finite ? mt : 0.0;
  }
};

PlanScore make_score(double m, double t);
bool score_better(const PlanScore& a, const PlanScore& b);  // rank, then m

struct SimResult {
  double baseline_peak_bytes = 0.0;
  double peak_bytes = 0.0;
  double exposed_ms = 0.0;
  PlanScore score;
};

/// Event-driven simulation on a single FIFO transfer channel. The trace is
/// replicated three times and the middle iteration is measured, so wrapping
/// prefetches see their steady-state surroundings. Memory is freed when an
/// offload transfer completes and reclaimed when the prefetch transfer
/// starts. Throws on C1-C3 violations.
SimResult simulate(const OffloadPlan& plan, const PhaseTrace& trace);

struct PlanSearchResult {
  OffloadPlan plan;
  PlanScore score;
  SimResult sim;
};

/// Exhaustive search over the discretized plan space: per eligible variable
/// and gap, {no action, offload with prefetch right after, offload with
/// prefetch arriving at the consuming phase start}. Returns the max-MT plan;
/// ties go to larger M, then to the earlier plan in enumeration order.
PlanSearchResult plan_search(const PhaseTrace& trace);

struct LruResult {
  bool feasible = true;
  std::string reason;
  double peak_bytes = 0.0;
  double exposed_ms = 0.0;
  PlanScore score;
};

/// Demand-fetch baseline under a byte budget: least-recently-touched eligible
/// variable is evicted on pressure, every fetch is fully exposed, prefetch
/// never happens. Ineligible variables stay pinned.
LruResult lru_baseline(const PhaseTrace& trace, double budget_bytes);

}  // namespace mlr
