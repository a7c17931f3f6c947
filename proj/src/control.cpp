#include "qnet/control.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace qnet::control {

namespace {

constexpr int64_t kPeakSearchRangePs = 200'000'000;  // covers offsets up to 0.2 ms
constexpr int64_t kPeakCoarseBinPs = 2'000;

double wrap_2pi(double x) {
  const double two_pi = 2.0 * pol::kPi;
  double r = std::fmod(x, two_pi);
  if (r < 0.0) r += two_pi;
  return r;
}

// Shortest angular distance, retardances live on a circle.
double circular_distance(double a, double b) {
  const double two_pi = 2.0 * pol::kPi;
  double d = std::fmod(a - b, two_pi);
  if (d < -pol::kPi) d += two_pi;
  if (d > pol::kPi) d -= two_pi;
  return std::fabs(d);
}

const std::vector<int64_t>& photon_tags(const tags::StreamSet& set) {
  static const std::vector<int64_t> empty;
  const tags::TimeTagStream* st = tags::find_stream(set, tags::kPhotonChannel);
  return st ? st->tags : empty;
}

json basis_param(char b) { return json{{"basis", std::string(1, b)}}; }

}  // namespace

Session::Session(const agents::AgentEndpoints& ep, rpc::ProvenanceLog* log,
                 rpc::RetryPolicy policy)
    : eps_("eps", ep.eps.host, ep.eps.port, log),
      pa_a_("pa_a", ep.pa_a.host, ep.pa_a.port, log),
      pa_b_("pa_b", ep.pa_b.host, ep.pa_b.port, log),
      ttu_a_("ttu_a", ep.ttu_a.host, ep.ttu_a.port, log),
      ttu_b_("ttu_b", ep.ttu_b.host, ep.ttu_b.port, log),
      policy_(policy) {}

rpc::Client& Session::pa(int site) {
  if (site < 0 || site > 1) throw std::invalid_argument("Session::pa: bad site");
  return site == 0 ? pa_a_ : pa_b_;
}

rpc::Client& Session::ttu(int site) {
  if (site < 0 || site > 1) throw std::invalid_argument("Session::ttu: bad site");
  return site == 0 ? ttu_a_ : ttu_b_;
}

json Session::call(rpc::Client& c, const std::string& method, json params) {
  return c.call(method, std::move(params), policy_);
}

double Session::advance(double seconds) {
  const json r = call(ttu_a_, "ttu.advance", {{"seconds", seconds}});
  return r.at("virtual_time_s").get<double>();
}

uint64_t Session::acquire(int site, double duration_s) {
  const json r = call(ttu(site), "ttu.acquire", {{"duration_s", duration_s}});
  return r.at("handle").get<uint64_t>();
}

tags::StreamSet Session::fetch(int site, uint64_t handle) {
  const json r = call(ttu(site), "ttu.fetch", {{"handle", handle}});
  const std::vector<uint8_t> bytes = rpc::base64_decode(r.at("data").get<std::string>());
  return tags::deserialize(bytes, static_cast<uint8_t>(r.at("site").get<int>()));
}

std::pair<tags::StreamSet, tags::StreamSet> Session::acquire_both(double dwell_s) {
  const uint64_t ha = acquire(0, dwell_s);
  const uint64_t hb = acquire(1, dwell_s);
  advance(dwell_s);
  return {fetch(0, ha), fetch(1, hb)};
}

tags::StreamSet Session::acquire_one(int site, double dwell_s) {
  const uint64_t h = acquire(site, dwell_s);
  advance(dwell_s);
  return fetch(site, h);
}

SyncReport synchronize_sites(Session& s, double acquire_s, int lock_attempts) {
  if (lock_attempts < 1)
    throw std::invalid_argument("synchronize_sites: lock_attempts must be >= 1");
  SyncReport rep;
  int attempts[2] = {0, 0};
  for (int site = 0; site < 2; ++site) {
    bool locked = false;
    std::string last_error;
    while (attempts[site] < lock_attempts && !locked) {
      ++attempts[site];
      try {
        const json r = s.call(s.ttu(site), "ttu.set_reference_clock",
                              {{"source", "external"}});
        locked = r.value("locked", false);
        if (!locked) last_error = "agent reports unlocked";
      } catch (const rpc::AgentError& e) {
        last_error = e.what();
      }
    }
    if (!locked) {
      throw ControlError(ControlError::Kind::lock,
                         "site " + std::string(site == 0 ? "a" : "b") +
                             " reference lock failed after " +
                             std::to_string(attempts[site]) +
                             " attempts: " + last_error);
    }
  }
  rep.lock_attempts_a = attempts[0];
  rep.lock_attempts_b = attempts[1];

  auto [sa, sb] = s.acquire_both(acquire_s);
  const std::vector<int64_t> pps_a = tags::extract_pps(sa, tags::kPpsChannel);
  const std::vector<int64_t> pps_b = tags::extract_pps(sb, tags::kPpsChannel);
  if (pps_a.size() < 3 || pps_b.size() < 3) {
    throw ControlError(ControlError::Kind::sync,
                       "insufficient PPS marks for synchronization (a=" +
                           std::to_string(pps_a.size()) +
                           ", b=" + std::to_string(pps_b.size()) + ", need 3)");
  }
  rep.pps_count = std::min(pps_a.size(), pps_b.size());
  rep.offset_ps = tags::estimate_offset(pps_a, pps_b);

  const tags::TimeTagStream* ref_a = tags::find_stream(sa, tags::kRefChannel);
  const tags::TimeTagStream* ref_b = tags::find_stream(sb, tags::kRefChannel);
  if (!ref_a || !ref_b || ref_a->tags.empty() || ref_b->tags.empty()) {
    throw ControlError(ControlError::Kind::sync, "reference channel empty");
  }
  const tags::Histogram h =
      tags::correlation_histogram(ref_a->tags, ref_b->tags, 2, 4000);
  rep.rms_jitter_ps = tags::rms_jitter(h);
  return rep;
}

DarkReport check_dark_counts(Session& s, DarkCountBounds bounds, double dwell_s) {
  if (dwell_s <= 0.0)
    throw std::invalid_argument("check_dark_counts: dwell must be positive");
  const json prev = s.call(s.eps(), "eps.get_status");
  const auto restore = [&] {
    s.call(s.eps(), "eps.set_mode",
           {{"mode", prev.at("mode").get<std::string>()},
            {"basis", prev.at("alignment_basis").get<std::string>()}});
    s.call(s.eps(), "eps.set_attenuation",
           {{"db", prev.at("attenuation_db").get<double>()}});
  };
  s.call(s.eps(), "eps.set_attenuation", {{"db", 60.0}});
  s.call(s.eps(), "eps.set_mode", {{"mode", "off"}});

  DarkReport rep;
  try {
    auto [sa, sb] = s.acquire_both(dwell_s);
    rep.signal_cps = static_cast<double>(photon_tags(sa).size()) / dwell_s;
    rep.idler_cps = static_cast<double>(photon_tags(sb).size()) / dwell_s;
  } catch (...) {
    try {
      restore();
    } catch (...) {
    }
    throw;
  }
  restore();

  rep.pass = true;
  if (rep.signal_cps < bounds.min_cps || rep.signal_cps > bounds.max_cps) {
    rep.pass = false;
    rep.offender = "signal";
    rep.offending_cps = rep.signal_cps;
  } else if (rep.idler_cps < bounds.min_cps || rep.idler_cps > bounds.max_cps) {
    rep.pass = false;
    rep.offender = "idler";
    rep.offending_cps = rep.idler_cps;
  }
  return rep;
}

std::vector<double> default_attenuation_grid() {
  std::vector<double> g;
  for (int k = 0; k < 32; ++k) g.push_back(0.5 * k);
  return g;
}

size_t select_operating_point(const std::vector<double>& car,
                              double target_fraction) {
  double car_max = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (double v : car) {
    if (std::isnan(v)) continue;
    any = true;
    car_max = std::max(car_max, v);
  }
  if (!any) {
    throw ControlError(ControlError::Kind::calibration,
                       "operating-point selection: every entry excluded");
  }
  const double target = target_fraction * car_max;
  size_t best = car.size();
  double best_dist = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < car.size(); ++i) {
    if (std::isnan(car[i])) continue;
    const double d = std::fabs(car[i] - target);
    if (d < best_dist) {
      best_dist = d;
      best = i;
    }
  }
  return best;
}

namespace {

// Pump-attenuation response of the CAR: unity floor plus a bump that peaks
// where the linear pair term and the quadratic accidental term cross over.
double car_bump(double alpha_db, double peak_db) {
  const double u = std::log(10.0) * (alpha_db - peak_db) / 20.0;
  const double c = std::cosh(u);
  return 1.0 / (c * c);
}

// Least-squares amplitude for a given peak position; sum of squares out.
double car_sse(const std::vector<double>& alphas, const std::vector<double>& cars,
               double peak_db, double* amplitude) {
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < alphas.size(); ++i) {
    const double u = car_bump(alphas[i], peak_db);
    num += (cars[i] - 1.0) * u;
    den += u * u;
  }
  const double m = den > 0.0 ? std::max(0.0, num / den) : 0.0;
  double sse = 0.0;
  for (size_t i = 0; i < alphas.size(); ++i) {
    const double r = cars[i] - 1.0 - m * car_bump(alphas[i], peak_db);
    sse += r * r;
  }
  *amplitude = m;
  return sse;
}

void fit_car_response(const std::vector<double>& alphas,
                      const std::vector<double>& cars, double* amplitude,
                      double* peak_db) {
  const double lo = *std::min_element(alphas.begin(), alphas.end());
  const double hi = *std::max_element(alphas.begin(), alphas.end());
  double best_p = lo, best_m = 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (double p = lo; p <= hi + 1e-9; p += 0.05) {
    double m = 0.0;
    const double sse = car_sse(alphas, cars, p, &m);
    if (sse < best) {
      best = sse;
      best_p = p;
      best_m = m;
    }
  }
  // golden-section refinement around the coarse winner
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = best_p - 0.05, b = best_p + 0.05;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double mc, md;
  double fc = car_sse(alphas, cars, c, &mc);
  double fd = car_sse(alphas, cars, d, &md);
  for (int it = 0; it < 60; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      md = mc;
      c = b - gr * (b - a);
      fc = car_sse(alphas, cars, c, &mc);
    } else {
      a = c;
      c = d;
      fc = fd;
      mc = md;
      d = a + gr * (b - a);
      fd = car_sse(alphas, cars, d, &md);
    }
  }
  if (fc < best) {
    best_p = c;
    best_m = mc;
    best = fc;
  }
  if (fd < best) {
    best_p = d;
    best_m = md;
  }
  *amplitude = best_m;
  *peak_db = best_p;
}

}  // namespace

CalibrationScan calibrate_eps(Session& s, int64_t window_ps,
                              const std::vector<double>& grid,
                              double target_fraction, double dwell_s) {
  if (grid.empty()) throw std::invalid_argument("calibrate_eps: empty grid");
  if (window_ps <= 0) throw std::invalid_argument("calibrate_eps: bad window");
  if (dwell_s <= 0.0) throw std::invalid_argument("calibrate_eps: bad dwell");
  if (!(target_fraction > 0.0 && target_fraction <= 1.0))
    throw std::invalid_argument("calibrate_eps: target fraction outside (0, 1]");

  s.call(s.eps(), "eps.set_mode", {{"mode", "entangled"}});
  s.call(s.pa(0), "pa.set_basis", basis_param('H'));
  s.call(s.pa(1), "pa.set_basis", basis_param('H'));

  CalibrationScan scan;
  scan.attenuation_db = grid;
  scan.target_fraction = target_fraction;

  bool have_peak = false;
  for (double alpha : grid) {
    s.call(s.eps(), "eps.set_attenuation", {{"db", alpha}});
    auto [sa, sb] = s.acquire_both(dwell_s);
    const std::vector<int64_t>& pa = photon_tags(sa);
    const std::vector<int64_t>& pb = photon_tags(sb);
    if (!have_peak) {
      // one delay search at the brightest point, reused across the sweep
      if (pa.empty() || pb.empty()) {
        throw ControlError(ControlError::Kind::calibration,
                           "no photon events at the first calibration point");
      }
      scan.peak_delay_ps =
          tags::find_peak_delay(pa, pb, kPeakCoarseBinPs, kPeakSearchRangePs);
      have_peak = true;
    }
    const double coinc =
        static_cast<double>(tags::count_coincidences(pa, pb, window_ps,
                                                     scan.peak_delay_ps)) /
        dwell_s;
    // background: windows well off the pair peak, alternating sides
    double acc_sum = 0.0;
    int acc_used = 0;
    for (int k = 0; k < 16; ++k) {
      const int64_t spacing = (2 + k / 2) * 4 * window_ps;
      const int64_t delay =
          scan.peak_delay_ps + ((k % 2 == 0) ? spacing : -spacing);
      if (std::llabs(delay) <= window_ps) continue;  // keep the guard happy
      acc_sum += static_cast<double>(
          tags::estimate_accidentals(pa, pb, window_ps, delay));
      ++acc_used;
    }
    const double acc =
        acc_used > 0 ? acc_sum / static_cast<double>(acc_used) / dwell_s : 0.0;
    // counted rate in the signal window already contains the accidental
    // floor, so the ratio is counted / background directly
    scan.coincidences_cps.push_back(coinc);
    scan.accidentals_cps.push_back(acc);
    scan.car.push_back(acc > 0.0 ? coinc / acc
                                 : std::numeric_limits<double>::quiet_NaN());
  }

  std::vector<double> valid_alpha, valid_car;
  for (size_t i = 0; i < grid.size(); ++i) {
    if (std::isnan(scan.car[i])) continue;
    valid_alpha.push_back(grid[i]);
    valid_car.push_back(scan.car[i]);
  }
  if (valid_car.empty()) {
    throw ControlError(ControlError::Kind::calibration,
                       "calibration failed: every grid point excluded "
                       "(zero accidentals)");
  }

  double amplitude = 0.0, peak_db = 0.0;
  fit_car_response(valid_alpha, valid_car, &amplitude, &peak_db);
  scan.car_max = 1.0 + amplitude;
  scan.peak_db = peak_db;
  scan.car_fit.resize(grid.size());
  for (size_t i = 0; i < grid.size(); ++i) {
    scan.car_fit[i] = std::isnan(scan.car[i])
                          ? std::numeric_limits<double>::quiet_NaN()
                          : 1.0 + amplitude * car_bump(grid[i], peak_db);
  }

  scan.chosen_index = select_operating_point(scan.car_fit, target_fraction);
  scan.alpha_star_db = grid[scan.chosen_index];

  // sanity band around the selection, fractional slack g = 0.1
  double table_max = -std::numeric_limits<double>::infinity();
  for (double v : scan.car_fit)
    if (!std::isnan(v)) table_max = std::max(table_max, v);
  const double chosen = scan.car_fit[scan.chosen_index];
  if (chosen < target_fraction * table_max * 0.9 - 1e-9 ||
      chosen > table_max + 1e-9) {
    throw ControlError(ControlError::Kind::calibration,
                       "calibration failed: selected point falls outside the "
                       "target band");
  }

  s.call(s.eps(), "eps.set_attenuation", {{"db", scan.alpha_star_db}});
  return scan;
}

MinimizeResult minimize_waveplate(Session& s, int site, int plate,
                                  const ScanParams& params, char prep_basis,
                                  double dwell_s) {
  if (dwell_s <= 0.0)
    throw std::invalid_argument("minimize_waveplate: dwell must be positive");
  if (params.step_rad <= 0.0 || params.half_window_rad < params.step_rad)
    throw std::invalid_argument("minimize_waveplate: bad scan window");

  s.call(s.eps(), "eps.set_mode",
         {{"mode", "alignment"}, {"basis", std::string(1, prep_basis)}});

  const int steps = static_cast<int>(
      std::floor(2.0 * params.half_window_rad / params.step_rad + 1e-9));
  MinimizeResult res;
  res.grid.reserve(steps + 1);
  res.rate_cps.reserve(steps + 1);
  uint64_t best_counts = std::numeric_limits<uint64_t>::max();
  double best_dist = std::numeric_limits<double>::infinity();
  size_t best_index = 0;
  try {
    for (int k = 0; k <= steps; ++k) {
      const double theta =
          params.center_rad - params.half_window_rad + k * params.step_rad;
      s.call(s.pa(site), "pa.set_waveplate",
             {{"index", plate}, {"retardance", theta}});
      const tags::StreamSet st = s.acquire_one(site, dwell_s);
      const uint64_t counts = photon_tags(st).size();
      res.grid.push_back(theta);
      res.rate_cps.push_back(static_cast<double>(counts) / dwell_s);
      const double dist = std::fabs(theta - params.center_rad);
      if (counts < best_counts ||
          (counts == best_counts && dist < best_dist - 1e-12)) {
        best_counts = counts;
        best_dist = dist;
        best_index = res.grid.size() - 1;
      }
    }
  } catch (...) {
    // leave the actuator where the caller had it
    try {
      s.call(s.pa(site), "pa.set_waveplate",
             {{"index", plate}, {"retardance", params.center_rad}});
    } catch (...) {
    }
    throw;
  }
  res.theta_star = res.grid[best_index];
  res.min_cps = res.rate_cps[best_index];
  s.call(s.pa(site), "pa.set_waveplate",
         {{"index", plate}, {"retardance", res.theta_star}});
  return res;
}

namespace {

SiteCompensation compensate_site(Session& s, int site,
                                 const CompensationParams& p) {
  SiteCompensation sc;
  sc.site = site;
  const json base_json = s.call(s.pa(site), "pa.get_baseline");
  std::array<double, 4> base0{};
  for (int i = 0; i < 4; ++i)
    base0[i] = base_json.at("retardances").at(i).get<double>();

  // Scan centers seeded from the stored baseline; the quarter-wave fold on
  // WP2 is undone so the circular-stage null starts inside the window.
  double c0 = base0[0];
  double c1 = base0[1];
  double c2 = base0[2] - pol::kPi / 2.0;

  double prev_d = -1.0, prev_h = -1.0;
  for (int round = 0; round < p.max_rounds; ++round) {
    sc.rounds = round + 1;
    // circular stage: D prepared, quarter wave on the back plate, WP2 nulls
    // the transmitted port
    s.call(s.pa(site), "pa.set_waveplate",
           {{"index", 3}, {"retardance", pol::kPi / 2.0}});
    const MinimizeResult rd = minimize_waveplate(
        s, site, 2, {c2, p.step_rad, p.half_window_rad}, 'D', p.dwell_s);
    c2 = rd.theta_star;

    // linear stage: H prepared, half wave selects the orthogonal port
    s.call(s.pa(site), "pa.set_waveplate",
           {{"index", 3}, {"retardance", pol::kPi}});
    const MinimizeResult r1 = minimize_waveplate(
        s, site, 1, {c1, p.step_rad, p.half_window_rad}, 'H', p.dwell_s);
    c1 = r1.theta_star;
    const MinimizeResult r0 = minimize_waveplate(
        s, site, 0, {c0, p.step_rad, p.half_window_rad}, 'H', p.dwell_s);
    c0 = r0.theta_star;

    sc.d_min_cps.push_back(rd.min_cps);
    sc.h_min_cps.push_back(r0.min_cps);
    const double d_counts = rd.min_cps * p.dwell_s;
    const double h_counts = r0.min_cps * p.dwell_s;
    if (round > 0) {
      const double eps_d = p.epsilon_sigma * std::sqrt(std::max(prev_d, 1.0));
      const double eps_h = p.epsilon_sigma * std::sqrt(std::max(prev_h, 1.0));
      sc.converged = std::fabs(d_counts - prev_d) < eps_d &&
                     std::fabs(h_counts - prev_h) < eps_h;
    }
    prev_d = d_counts;
    prev_h = h_counts;
    if (sc.converged) break;
  }

  sc.baseline = {wrap_2pi(c0), wrap_2pi(c1), wrap_2pi(c2 + pol::kPi / 2.0), 0.0};
  s.call(s.pa(site), "pa.set_baseline",
         {{"retardances", json::array({sc.baseline[0], sc.baseline[1],
                                       sc.baseline[2], sc.baseline[3]})}});
  for (int i = 0; i < 4; ++i) {
    if (circular_distance(sc.baseline[i], base0[i]) > p.step_rad + 1e-9)
      sc.changed = true;
  }

  // residual leak through the canonical path: prepare H, analyze V
  s.call(s.eps(), "eps.set_mode", {{"mode", "alignment"}, {"basis", "H"}});
  s.call(s.pa(site), "pa.set_basis", basis_param('V'));
  sc.orthogonal_cps =
      static_cast<double>(photon_tags(s.acquire_one(site, p.dwell_s)).size()) /
      p.dwell_s;
  s.call(s.pa(site), "pa.set_basis", basis_param('H'));
  return sc;
}

}  // namespace

CompensationReport compensate_polarization_drift(Session& s,
                                                 const CompensationParams& p) {
  if (p.max_rounds < 1)
    throw std::invalid_argument("compensate: max_rounds must be >= 1");
  const json prev = s.call(s.eps(), "eps.get_status");
  CompensationReport rep;
  rep.site_a = compensate_site(s, 0, p);
  rep.site_b = compensate_site(s, 1, p);
  s.call(s.eps(), "eps.set_mode",
         {{"mode", prev.at("mode").get<std::string>()},
          {"basis", prev.at("alignment_basis").get<std::string>()}});
  return rep;
}

}  // namespace qnet::control
