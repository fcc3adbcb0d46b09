#include "mlr/offload.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace mlr {

double PhaseTrace::iter_ms() const {
  double t = 0.0;
  for (const TracePhase& p : phases) t += p.dur_ms;
  return t;
}

double PhaseTrace::phase_start(int k) const {
  double t = 0.0;
  for (int i = 0; i < k; ++i) t += phases[static_cast<std::size_t>(i)].dur_ms;
  return t;
}

double PhaseTrace::total_bytes() const {
  double b = 0.0;
  for (const TraceVar& v : vars) b += v.bytes;
  return b;
}

int PhaseTrace::phase_index(const std::string& name) const {
  for (std::size_t i = 0; i < phases.size(); ++i)
    if (phases[i].name == name) return static_cast<int>(i);
  return -1;
}

int PhaseTrace::var_index(const std::string& name) const {
  for (std::size_t i = 0; i < vars.size(); ++i)
    if (vars[i].name == name) return static_cast<int>(i);
  return -1;
}

void PhaseTrace::validate() const {
  if (phases.empty()) throw std::invalid_argument("trace: no phases");
  if (!(bandwidth > 0.0)) throw std::invalid_argument("trace: bandwidth must be positive");
  std::set<std::string> names;
  for (const TracePhase& p : phases) {
    if (!(p.dur_ms > 0.0))
      throw std::invalid_argument("trace: phase " + p.name + " has nonpositive duration");
    if (!names.insert(p.name).second)
      throw std::invalid_argument("trace: duplicate phase " + p.name);
  }
  names.clear();
  for (const TraceVar& v : vars) {
    if (!(v.bytes > 0.0))
      throw std::invalid_argument("trace: variable " + v.name + " has nonpositive size");
    if (!names.insert(v.name).second)
      throw std::invalid_argument("trace: duplicate variable " + v.name);
    for (const auto& [k, a] : v.accesses) {
      if (k < 0 || k >= static_cast<int>(phases.size()))
        throw std::invalid_argument("trace: access of " + v.name + " names a missing phase");
      const double dur = phases[static_cast<std::size_t>(k)].dur_ms;
      if (!(a.first_ms >= 0.0 && a.first_ms <= a.last_ms && a.last_ms <= dur))
        throw std::invalid_argument("trace: access window of " + v.name +
                                    " falls outside its phase");
    }
  }
}

PhaseTrace PhaseTrace::parse(const std::string& text) {
  PhaseTrace t;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind)) continue;  // blank
    auto fail = [&](const std::string& why) {
      throw std::invalid_argument("trace line " + std::to_string(lineno) + ": " + why);
    };
    if (kind == "phase") {
      TracePhase p;
      if (!(ls >> p.name >> p.dur_ms)) fail("expected `phase <name> <dur_ms>`");
      t.phases.push_back(std::move(p));
    } else if (kind == "var") {
      TraceVar v;
      int eligible = 0;
      if (!(ls >> v.name >> v.bytes >> eligible)) fail("expected `var <name> <bytes> <0|1>`");
      if (eligible != 0 && eligible != 1) fail("eligibility must be 0 or 1");
      v.eligible = eligible == 1;
      t.vars.push_back(std::move(v));
    } else if (kind == "access") {
      std::string var, phase;
      TraceAccess a;
      if (!(ls >> var >> phase >> a.first_ms >> a.last_ms))
        fail("expected `access <var> <phase> <first_ms> <last_ms>`");
      const int vi = t.var_index(var);
      const int pi = t.phase_index(phase);
      if (vi < 0) fail("unknown variable " + var);
      if (pi < 0) fail("unknown phase " + phase);
      if (!t.vars[static_cast<std::size_t>(vi)].accesses.emplace(pi, a).second)
        fail("duplicate access of " + var + " in " + phase);
    } else {
      fail("unknown record `" + kind + "`");
    }
    std::string rest;
    if (ls >> rest) fail("trailing tokens");
  }
  t.validate();
  return t;
}

std::vector<Gap> var_gaps(const PhaseTrace& trace, int var) {
  const TraceVar& v = trace.vars[static_cast<std::size_t>(var)];
  std::vector<Gap> gaps;
  if (v.accesses.empty()) return gaps;
  std::vector<std::pair<int, TraceAccess>> acc(v.accesses.begin(), v.accesses.end());
  const double iter = trace.iter_ms();
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const auto& [k, a] = acc[i];
    const bool wrap = i + 1 == acc.size();
    const auto& [kn, an] = acc[wrap ? 0 : i + 1];
    Gap g;
    g.var = var;
    g.from_phase = k;
    g.to_phase = kn;
    g.last_abs = trace.phase_start(k) + a.last_ms;
    g.consume_abs = trace.phase_start(kn) + an.first_ms + (wrap ? iter : 0.0);
    g.consume_phase_start = trace.phase_start(kn) + (wrap ? iter : 0.0);
    gaps.push_back(g);
  }
  return gaps;
}

std::pair<double, double> derive_pd_mpd(const PhaseTrace& trace, int var, int phase,
                                        std::optional<double> prefetch_start) {
  if (var < 0 || var >= static_cast<int>(trace.vars.size()))
    throw std::invalid_argument("derive_pd_mpd: no such variable");
  for (const Gap& g : var_gaps(trace, var)) {
    if (g.from_phase != phase) continue;
    const double transfer = trace.vars[static_cast<std::size_t>(var)].bytes / trace.bandwidth;
    const double start = prefetch_start ? *prefetch_start : g.last_abs + transfer;
    return {g.consume_abs - start, g.mpd()};
  }
  throw std::invalid_argument("derive_pd_mpd: variable not accessed in that phase");
}

namespace {

double transfer_ms(const PhaseTrace& trace, int var) {
  return trace.vars[static_cast<std::size_t>(var)].bytes / trace.bandwidth;
}

const Gap* find_gap(const std::vector<Gap>& gaps, int gap) {
  if (gap < 0 || gap >= static_cast<int>(gaps.size())) return nullptr;
  return &gaps[static_cast<std::size_t>(gap)];
}

}  // namespace

std::vector<Violation> check_constraints(const OffloadPlan& plan, const PhaseTrace& trace) {
  std::vector<Violation> out;
  for (std::size_t a = 0; a < plan.actions.size(); ++a) {
    const PlanAction& act = plan.actions[a];
    const int ai = static_cast<int>(a);
    if (act.var < 0 || act.var >= static_cast<int>(trace.vars.size())) {
      out.push_back({ai, 0, "action names a missing variable"});
      continue;
    }
    const TraceVar& v = trace.vars[static_cast<std::size_t>(act.var)];
    if (!v.eligible) {
      out.push_back({ai, 0, v.name + " is not eligible for offloading"});
      continue;
    }
    const std::vector<Gap> gaps = var_gaps(trace, act.var);
    const Gap* g = find_gap(gaps, act.gap);
    if (!g) {
      out.push_back({ai, 0, v.name + " has no such access gap"});
      continue;
    }
    const double dur = transfer_ms(trace, act.var);
    if (act.prefetch_start < act.offload_start + dur)
      out.push_back({ai, 1, v.name + ": prefetch must start after the offload completes"});
    if (!(g->mpd() > 0.0))
      out.push_back({ai, 2, v.name + ": zero idle window, prefetch distance is 0"});
    if (!(dur < g->mpd()))
      out.push_back({ai, 3, v.name + ": offload transfer does not fit the idle window"});
    if (act.prefetch_start + dur > g->consume_phase_start)
      out.push_back({ai, 4, v.name + ": prefetch completes after the consuming phase starts"});
  }
  return out;
}

PlanScore make_score(double m, double t) {
  PlanScore s;
  s.m = m;
  s.t = t;
  if (t > 0.0) {
    s.kind = PlanScore::Kind::finite;
    s.mt = m / t;
  } else if (m > 0.0) {
    s.kind = PlanScore::Kind::infinite;
    s.mt = std::numeric_limits<double>::infinity();
  } else {
    s.kind = PlanScore::Kind::undefined;
    s.mt = 0.0;
  }
  return s;
}

bool score_better(const PlanScore& a, const PlanScore& b) {
  if (a.rank() != b.rank()) return a.rank() > b.rank();
  return a.m > b.m;
}

SimResult simulate(const OffloadPlan& plan, const PhaseTrace& trace) {
  trace.validate();
  for (const Violation& v : check_constraints(plan, trace))
    if (v.constraint <= 3)
      throw std::invalid_argument("simulate: plan violates C" + std::to_string(v.constraint) +
                                  ": " + v.detail);

  const double iter = trace.iter_ms();
  const double total = trace.total_bytes();
  SimResult res;
  res.baseline_peak_bytes = total;

  struct Request {
    double req = 0.0;
    bool is_prefetch = false;
    std::size_t action = 0;
    int rep = 0;
  };
  std::vector<Request> reqs;
  constexpr int kReps = 3;
  for (int n = 0; n < kReps; ++n)
    for (std::size_t a = 0; a < plan.actions.size(); ++a) {
      reqs.push_back({n * iter + plan.actions[a].offload_start, false, a, n});
      reqs.push_back({n * iter + plan.actions[a].prefetch_start, true, a, n});
    }
  std::stable_sort(reqs.begin(), reqs.end(), [](const Request& x, const Request& y) {
    if (x.req != y.req) return x.req < y.req;
    if (x.is_prefetch != y.is_prefetch) return !x.is_prefetch;  // offloads first
    return x.action < y.action;
  });

  // Single FIFO channel; record each transfer's actual window.
  struct Edge {
    double time = 0.0;
    double delta = 0.0;
  };
  std::vector<Edge> edges;
  std::map<std::pair<std::size_t, int>, double> prefetch_end;  // (action, rep) -> end
  double channel_free = 0.0;
  for (const Request& r : reqs) {
    const PlanAction& act = plan.actions[r.action];
    const double dur = transfer_ms(trace, act.var);
    const double start = std::max(r.req, channel_free);
    const double end = start + dur;
    channel_free = end;
    const double bytes = trace.vars[static_cast<std::size_t>(act.var)].bytes;
    if (r.is_prefetch) {
      edges.push_back({start, bytes});  // buffer reallocated when the transfer starts
      prefetch_end[{r.action, r.rep}] = end;
    } else {
      edges.push_back({end, -bytes});  // freed once the data is safely out
    }
  }
  std::stable_sort(edges.begin(), edges.end(),
                   [](const Edge& a, const Edge& b) { return a.time < b.time; });

  // Peak resident bytes across the middle iteration window.
  const double w0 = iter, w1 = 2.0 * iter;
  double cur = total;
  double peak = -1.0;
  double prev_t = 0.0;
  for (const Edge& e : edges) {
    if (prev_t < w1 && e.time > w0) peak = std::max(peak, cur);
    cur += e.delta;
    prev_t = e.time;
  }
  if (prev_t < w1) peak = std::max(peak, cur);
  if (peak < 0.0) peak = total;  // no edges at all
  res.peak_bytes = peak;

  // Exposed prefetch delay charged to the middle iteration's actions.
  double exposed = 0.0;
  for (std::size_t a = 0; a < plan.actions.size(); ++a) {
    const PlanAction& act = plan.actions[a];
    const std::vector<Gap> gaps = var_gaps(trace, act.var);
    const Gap& g = *find_gap(gaps, act.gap);
    const double deadline = iter + g.consume_phase_start;
    const auto it = prefetch_end.find({a, 1});
    if (it != prefetch_end.end()) exposed += std::max(0.0, it->second - deadline);
  }
  res.exposed_ms = exposed;

  const double m = total > 0.0 ? (total - peak) / total : 0.0;
  const double t = iter > 0.0 ? exposed / iter : 0.0;
  res.score = make_score(m, t);
  return res;
}

PlanSearchResult plan_search(const PhaseTrace& trace) {
  trace.validate();

  struct Slot {
    std::vector<PlanAction> options;  // excluding "no action"
  };
  std::vector<Slot> slots;
  for (int v = 0; v < static_cast<int>(trace.vars.size()); ++v) {
    if (!trace.vars[static_cast<std::size_t>(v)].eligible) continue;
    const double dur = transfer_ms(trace, v);
    const std::vector<Gap> gaps = var_gaps(trace, v);
    for (int gi = 0; gi < static_cast<int>(gaps.size()); ++gi) {
      const Gap& g = gaps[static_cast<std::size_t>(gi)];
      if (!(g.mpd() > 0.0) || !(dur < g.mpd())) continue;  // C2 / C3
      Slot slot;
      PlanAction early;
      early.var = v;
      early.gap = gi;
      early.offload_start = g.last_abs;
      early.prefetch_start = g.last_abs + dur;  // right after the offload
      slot.options.push_back(early);
      PlanAction late = early;
      late.prefetch_start = std::max(early.prefetch_start, g.consume_phase_start - dur);
      if (late.prefetch_start != early.prefetch_start) slot.options.push_back(late);
      slots.push_back(std::move(slot));
    }
  }

  PlanSearchResult best;
  best.sim = simulate(best.plan, trace);
  best.score = best.sim.score;

  std::vector<std::size_t> choice(slots.size(), 0);  // 0 = none, i = options[i-1]
  for (;;) {
    // advance the mixed-radix counter; the all-none plan seeded `best`
    std::size_t pos = 0;
    while (pos < slots.size()) {
      if (++choice[pos] <= slots[pos].options.size()) break;
      choice[pos] = 0;
      ++pos;
    }
    if (pos == slots.size()) break;

    OffloadPlan plan;
    for (std::size_t s = 0; s < slots.size(); ++s)
      if (choice[s] > 0) plan.actions.push_back(slots[s].options[choice[s] - 1]);
    const SimResult sim = simulate(plan, trace);
    if (score_better(sim.score, best.score)) {
      best.plan = std::move(plan);
      best.score = sim.score;
      best.sim = sim;
    }
  }
  return best;
}

LruResult lru_baseline(const PhaseTrace& trace, double budget_bytes) {
  trace.validate();
  LruResult res;
  double pinned = 0.0;
  double largest_eligible = 0.0;
  for (const TraceVar& v : trace.vars) {
    if (v.eligible)
      largest_eligible = std::max(largest_eligible, v.bytes);
    else
      pinned += v.bytes;
  }
  if (budget_bytes < pinned + largest_eligible) {
    res.feasible = false;
    std::ostringstream why;
    why << "budget " << budget_bytes << " cannot hold the pinned variables (" << pinned
        << ") plus the largest eligible variable (" << largest_eligible << ")";
    res.reason = why.str();
    return res;
  }

  struct Event {
    double time = 0.0;
    int var = -1;
    int rep = 0;
  };
  std::vector<Event> events;
  const double iter = trace.iter_ms();
  constexpr int kReps = 3;
  for (int n = 0; n < kReps; ++n)
    for (int v = 0; v < static_cast<int>(trace.vars.size()); ++v)
      for (const auto& [k, a] : trace.vars[static_cast<std::size_t>(v)].accesses) {
        const double base = n * iter + trace.phase_start(k);
        events.push_back({base + a.first_ms, v, n});
        if (a.last_ms != a.first_ms) events.push_back({base + a.last_ms, v, n});
      }
  std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.time != b.time) return a.time < b.time;
    return a.var < b.var;
  });

  std::vector<double> last_touch(trace.vars.size(), -1.0);
  std::vector<bool> resident(trace.vars.size(), false);
  double used = pinned;
  for (int v = 0; v < static_cast<int>(trace.vars.size()); ++v)
    if (!trace.vars[static_cast<std::size_t>(v)].eligible) resident[static_cast<std::size_t>(v)] = true;

  double exposed = 0.0;
  double peak = used;
  for (const Event& e : events) {
    const std::size_t vi = static_cast<std::size_t>(e.var);
    const TraceVar& v = trace.vars[vi];
    if (!resident[vi]) {
      // Demand fetch: evict least-recently-touched eligible variables first.
      while (used + v.bytes > budget_bytes) {
        int victim = -1;
        for (int c = 0; c < static_cast<int>(trace.vars.size()); ++c) {
          const std::size_t ci = static_cast<std::size_t>(c);
          if (!resident[ci] || !trace.vars[ci].eligible || c == e.var) continue;
          if (victim < 0 || last_touch[ci] < last_touch[static_cast<std::size_t>(victim)])
            victim = c;
        }
        if (victim < 0) break;  // cannot happen under the feasibility check
        resident[static_cast<std::size_t>(victim)] = false;
        used -= trace.vars[static_cast<std::size_t>(victim)].bytes;
      }
      resident[vi] = true;
      used += v.bytes;
      if (e.rep == 1) exposed += v.bytes / trace.bandwidth;  // fully exposed stall
    }
    last_touch[vi] = e.time;
    if (e.rep == 1) peak = std::max(peak, used);
  }

  res.peak_bytes = peak;
  res.exposed_ms = exposed;
  const double total = trace.total_bytes();
  const double m = total > 0.0 ? (total - peak) / total : 0.0;
  const double t = iter > 0.0 ? exposed / iter : 0.0;
  res.score = make_score(m, t);
  return res;
}

}  // namespace mlr
