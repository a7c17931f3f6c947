#include "qnet/services.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

namespace qnet::services {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double wrap_2pi(double x) {
  const double two_pi = 2.0 * pol::kPi;
  double r = std::fmod(x, two_pi);
  if (r < 0.0) r += two_pi;
  return r;
}

const std::vector<int64_t>& photon_tags(const tags::StreamSet& set) {
  static const std::vector<int64_t> empty;
  const tags::TimeTagStream* st = tags::find_stream(set, tags::kPhotonChannel);
  return st ? st->tags : empty;
}

uint64_t coincidences_at(control::Session& s, double dwell_s, int64_t window_ps,
                         int64_t delay_ps) {
  auto streams = s.acquire_both(dwell_s);
  return tags::count_coincidences(photon_tags(streams.first),
                                  photon_tags(streams.second), window_ps,
                                  delay_ps);
}

bool known_basis(char b) {
  return b == 'H' || b == 'V' || b == 'D' || b == 'A' || b == 'R' || b == 'L';
}

}  // namespace

FringeFit fit_fringe(const std::vector<double>& theta,
                     const std::vector<double>& counts) {
  if (theta.size() != counts.size())
    throw std::invalid_argument("fit_fringe: angle/count size mismatch");
  const size_t n = theta.size();
  if (n < 8) throw std::invalid_argument("fit_fringe: need at least 8 samples");

  const double mean =
      std::accumulate(counts.begin(), counts.end(), 0.0) / static_cast<double>(n);

  // Frequency seed: strongest discrete tone among the low harmonics. P and Q
  // are the quadrature projections, so atan2 recovers the phase directly.
  int best_m = 1;
  double best_power = -1.0, best_p = 0.0, best_q = 0.0;
  for (int m = 1; m <= 4; ++m) {
    double pp = 0.0, qq = 0.0;
    for (size_t i = 0; i < n; ++i) {
      pp += (counts[i] - mean) * std::sin(m * theta[i]);
      qq += (counts[i] - mean) * std::cos(m * theta[i]);
    }
    const double power = pp * pp + qq * qq;
    if (power > best_power) {
      best_power = power;
      best_m = m;
      best_p = pp;
      best_q = qq;
    }
  }

  FringeFit fit;
  const double a0 = 2.0 * std::sqrt(best_power) / static_cast<double>(n);
  if (a0 <= 1e-9 * std::max(1.0, std::fabs(mean))) {
    // flat data: nothing to refine, visibility zero (or undefined at no flux)
    fit.offset = mean;
    fit.converged = true;
    fit.visibility = mean > 0.0 ? 0.0 : kNaN;
    double sse = 0.0;
    for (double y : counts) sse += (y - mean) * (y - mean);
    fit.rms_residual = std::sqrt(sse / static_cast<double>(n));
    return fit;
  }

  Eigen::Vector4d x(a0, static_cast<double>(best_m), std::atan2(best_q, best_p),
                    mean);
  const auto cost_of = [&](const Eigen::Vector4d& v) {
    double c = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const double r = v(0) * std::sin(v(1) * theta[i] + v(2)) + v(3) - counts[i];
      c += r * r;
    }
    return c;
  };

  // Damped Gauss-Newton on y = A sin(B theta + C) + D.
  double lambda = 1e-3;
  double cost = cost_of(x);
  bool converged = false;
  for (int it = 0; it < 200 && !converged; ++it) {
    Eigen::Matrix4d jtj = Eigen::Matrix4d::Zero();
    Eigen::Vector4d jtr = Eigen::Vector4d::Zero();
    for (size_t i = 0; i < n; ++i) {
      const double arg = x(1) * theta[i] + x(2);
      const double sn = std::sin(arg), cs = std::cos(arg);
      const double r = x(0) * sn + x(3) - counts[i];
      const Eigen::Vector4d j(sn, x(0) * theta[i] * cs, x(0) * cs, 1.0);
      jtj += j * j.transpose();
      jtr += j * r;
    }
    bool stepped = false;
    for (int tries = 0; tries < 12 && !stepped; ++tries) {
      Eigen::Matrix4d m = jtj;
      for (int k = 0; k < 4; ++k) m(k, k) += lambda * std::max(jtj(k, k), 1e-12);
      const Eigen::Vector4d delta = m.ldlt().solve(-jtr);
      const Eigen::Vector4d cand = x + delta;
      const double cc = cost_of(cand);
      if (std::isfinite(cc) && cc <= cost) {
        const double drop = cost - cc;
        x = cand;
        converged = drop <= 1e-12 * (cost + 1e-12) ||
                    delta.norm() <= 1e-10 * (x.norm() + 1.0);
        cost = cc;
        lambda = std::max(lambda / 3.0, 1e-12);
        stepped = true;
      } else {
        lambda *= 5.0;
      }
    }
    if (!stepped) {
      // no damping level improves the fit: already at a numerical minimum
      converged = true;
    }
  }

  double A = x(0), B = x(1), C = x(2), D = x(3);
  if (B < 0.0) {
    B = -B;
    C = -C;
    A = -A;
  }
  if (A < 0.0) {
    A = -A;
    C += pol::kPi;
  }
  fit.amplitude = A;
  fit.frequency = B;
  fit.phase = wrap_2pi(C);
  fit.offset = D;
  fit.converged = converged;
  fit.rms_residual = std::sqrt(cost / static_cast<double>(n));
  fit.visibility = (converged && D > 0.0) ? A / D : kNaN;
  return fit;
}

TpiRun run_tpi(control::Session& s, const TpiParams& p) {
  if (p.bases.empty()) throw std::invalid_argument("tpi: no bases requested");
  for (char b : p.bases)
    if (!known_basis(b))
      throw std::invalid_argument(std::string("tpi: unknown basis '") + b + "'");
  if (p.sweep_plate < 0 || p.sweep_plate > 3)
    throw std::invalid_argument("tpi: sweep plate index out of range");
  TpiRun run;
  for (char b : p.bases) {
    FringeDataset ds;
    ds.basis = b;
    ds.dwell_s = p.dwell_s;
    run.fringes.push_back(std::move(ds));
  }
  resume_tpi(s, p, run);
  return run;
}

void resume_tpi(control::Session& s, const TpiParams& p, TpiRun& run) {
  if (p.points < 8)
    throw std::invalid_argument("tpi: need at least 8 points per fringe");
  if (p.dwell_s <= 0.0) throw std::invalid_argument("tpi: dwell must be positive");
  if (p.window_ps <= 0) throw std::invalid_argument("tpi: bad coincidence window");
  if (run.fringes.size() != p.bases.size())
    throw std::invalid_argument("tpi: run does not match the parameter set");

  run.complete = true;
  run.error.clear();
  try {
    s.call(s.eps(), "eps.set_mode", {{"mode", "entangled"}});
  } catch (const rpc::AgentError& e) {
    run.complete = false;
    run.error = e.what();
    return;
  }

  const double step = 2.0 * pol::kPi / static_cast<double>(p.points);
  for (FringeDataset& ds : run.fringes) {
    if (ds.counts.size() >= static_cast<size_t>(p.points)) {
      ds.complete = true;
      continue;
    }
    try {
      const json basis = {{"basis", std::string(1, ds.basis)}};
      s.call(s.pa(0), "pa.set_basis", basis);
      s.call(s.pa(1), "pa.set_basis", basis);
      for (int k = static_cast<int>(ds.counts.size()); k < p.points; ++k) {
        const double angle = k * step;
        s.call(s.pa(1), "pa.set_waveplate",
               {{"index", p.sweep_plate}, {"retardance", angle}});
        const uint64_t c =
            coincidences_at(s, p.dwell_s, p.window_ps, p.peak_delay_ps);
        ds.theta.push_back(angle);
        ds.counts.push_back(c);
      }
      ds.complete = true;
    } catch (const rpc::AgentError& e) {
      // keep the partial sweep; the caller may resume once the agent is back
      ds.complete = false;
      run.complete = false;
      run.error = e.what();
      return;
    }
  }
}

std::map<char, FringeFit> fit_tpi(const TpiRun& run) {
  std::map<char, FringeFit> out;
  for (const FringeDataset& ds : run.fringes) {
    FringeFit fit;
    if (ds.complete && ds.counts.size() >= 8) {
      std::vector<double> y(ds.counts.begin(), ds.counts.end());
      fit = fit_fringe(ds.theta, y);
    } else {
      fit.visibility = kNaN;
    }
    out[ds.basis] = fit;
  }
  return out;
}

namespace {

Eigen::Vector3d bloch_vector(char basis) {
  switch (basis) {
    case 'H': return {0.0, 0.0, 1.0};
    case 'V': return {0.0, 0.0, -1.0};
    case 'D': return {1.0, 0.0, 0.0};
    case 'A': return {-1.0, 0.0, 0.0};
    case 'R': return {0.0, 1.0, 0.0};
    case 'L': return {0.0, -1.0, 0.0};
    default:
      throw std::invalid_argument(std::string("tomography: unknown basis '") +
                                  basis + "'");
  }
}

// Pair flux estimated from basis-family groups: the four counts of one
// complete {+,-} x {+,-} family block sum to the flux regardless of the
// state. Returns {flux, complete groups found}; duplicated settings only
// contribute their first occurrence.
std::pair<double, int> family_flux(
    const std::vector<std::pair<char, char>>& settings,
    const std::vector<double>& counts) {
  std::map<std::pair<char, char>, double> first;
  for (size_t i = 0; i < settings.size(); ++i) first.emplace(settings[i], counts[i]);
  static const char* fam[3] = {"HV", "DA", "RL"};
  double sum = 0.0;
  int groups = 0;
  for (int fa = 0; fa < 3; ++fa) {
    for (int fb = 0; fb < 3; ++fb) {
      double g = 0.0;
      bool ok = true;
      for (int i = 0; i < 2 && ok; ++i) {
        for (int j = 0; j < 2 && ok; ++j) {
          const auto it = first.find({fam[fa][i], fam[fb][j]});
          if (it == first.end())
            ok = false;
          else
            g += it->second;
        }
      }
      if (ok) {
        sum += g;
        ++groups;
      }
    }
  }
  return {groups > 0 ? sum / groups : 0.0, groups};
}

std::array<pol::Mat2, 4> pauli_basis() {
  pol::Mat2 s0, s1, s2, s3;
  s0 << 1, 0, 0, 1;
  s1 << 0, 1, 1, 0;
  s2 << 0, std::complex<double>(0, -1), std::complex<double>(0, 1), 0;
  s3 << 1, 0, 0, -1;
  return {s0, s1, s2, s3};
}

}  // namespace

pol::Mat4 reconstruct_density_matrix(
    const std::vector<std::pair<char, char>>& settings,
    const std::vector<double>& counts) {
  if (settings.size() != counts.size())
    throw std::invalid_argument("tomography: setting/count size mismatch");
  const auto [flux, groups] = family_flux(settings, counts);
  if (groups == 0)
    throw std::invalid_argument(
        "tomography: no complete basis-family group to set the flux scale");
  if (!(flux > 0.0)) return pol::Mat4::Identity() / 4.0;

  const size_t n = settings.size();
  Eigen::MatrixXd m(n, 15);
  Eigen::VectorXd rhs(n);
  for (size_t r = 0; r < n; ++r) {
    const Eigen::Vector3d a = bloch_vector(settings[r].first);
    const Eigen::Vector3d b = bloch_vector(settings[r].second);
    int c = 0;
    for (int i = 0; i < 3; ++i) m(r, c++) = a(i);
    for (int j = 0; j < 3; ++j) m(r, c++) = b(j);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m(r, c++) = a(i) * b(j);
    rhs(r) = 4.0 * counts[r] / flux - 1.0;
  }
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
  if (qr.rank() < 15)
    throw std::invalid_argument(
        "tomography: settings do not determine the state (rank " +
        std::to_string(qr.rank()) + " of 15)");
  const Eigen::VectorXd t = qr.solve(rhs);

  const std::array<pol::Mat2, 4> sigma = pauli_basis();
  const auto corr = [&](int i, int j) -> double {
    if (i == 0 && j == 0) return 1.0;
    if (j == 0) return t(i - 1);
    if (i == 0) return t(2 + j);
    return t(6 + (i - 1) * 3 + (j - 1));
  };
  pol::Mat4 rho = pol::Mat4::Zero();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      rho += corr(i, j) * pol::kron(sigma[i], sigma[j]);
  rho /= 4.0;
  rho = 0.5 * (rho + rho.adjoint()).eval();

  // Linear inversion can leave small negative eigenvalues at finite counts.
  // Clamp them to zero and take the deficit proportionally out of the
  // positive part, then renormalize the trace.
  Eigen::SelfAdjointEigenSolver<pol::Mat4> es(rho);
  const Eigen::Vector4d lam = es.eigenvalues();
  double pos = 0.0, neg = 0.0;
  for (int i = 0; i < 4; ++i) {
    if (lam(i) > 0.0)
      pos += lam(i);
    else
      neg -= lam(i);
  }
  if (!(pos > 0.0)) return pol::Mat4::Identity() / 4.0;
  pol::Mat4 out = pol::Mat4::Zero();
  double trace = 0.0;
  for (int i = 0; i < 4; ++i) {
    if (lam(i) <= 0.0) continue;
    const double clamped = lam(i) - neg * (lam(i) / pos);
    if (clamped <= 0.0) continue;
    out += clamped *
           (es.eigenvectors().col(i) * es.eigenvectors().col(i).adjoint());
    trace += clamped;
  }
  if (!(trace > 0.0)) return pol::Mat4::Identity() / 4.0;
  return out / trace;
}

Tomography run_qst(control::Session& s, const QstParams& p) {
  if (p.dwell_s <= 0.0) throw std::invalid_argument("qst: dwell must be positive");
  if (p.window_ps <= 0) throw std::invalid_argument("qst: bad coincidence window");
  static constexpr char kBases[] = "HVDARL";

  Tomography t;
  t.dwell_s = p.dwell_s;
  s.call(s.eps(), "eps.set_mode", {{"mode", "entangled"}});
  for (int ia = 0; ia < 6; ++ia) {
    for (int ib = 0; ib < 6; ++ib) {
      s.call(s.pa(0), "pa.set_basis", {{"basis", std::string(1, kBases[ia])}});
      s.call(s.pa(1), "pa.set_basis", {{"basis", std::string(1, kBases[ib])}});
      t.reconfigurations += 4;  // two plates travel on each analyzer
      const uint64_t c =
          coincidences_at(s, p.dwell_s, p.window_ps, p.peak_delay_ps);
      t.settings.push_back({kBases[ia], kBases[ib], c});
    }
  }

  std::vector<std::pair<char, char>> pairs;
  std::vector<double> counts;
  pairs.reserve(t.settings.size());
  counts.reserve(t.settings.size());
  for (const TomographySetting& st : t.settings) {
    pairs.emplace_back(st.basis_a, st.basis_b);
    counts.push_back(static_cast<double>(st.counts));
  }
  t.rho = reconstruct_density_matrix(pairs, counts);
  t.fidelity_phi_plus = pol::fidelity(t.rho, pol::bell_state("phi+"));
  t.concurrence = pol::concurrence(t.rho);
  t.pairs_per_setting = family_flux(pairs, counts).first;
  return t;
}

namespace {

bool below_threshold(const IterationRecord& rec, const std::string& mode,
                     double threshold) {
  if (mode == "average") {
    return std::isnan(rec.average_visibility) ||
           rec.average_visibility < threshold;
  }
  if (rec.visibility.empty()) return true;
  for (const auto& [basis, v] : rec.visibility) {
    (void)basis;
    if (std::isnan(v) || v < threshold) return true;
  }
  return false;
}

}  // namespace

ServiceRun entanglement_service(control::Session& s, const ServiceConfig& cfg) {
  if (cfg.run_time_s <= 0.0 || cfg.delta_t_s <= 0.0)
    throw std::invalid_argument("service: run_time and delta_t must be positive");
  if (cfg.time_compression < 1.0)
    throw std::invalid_argument("service: time_compression must be >= 1");
  if (cfg.threshold_mode != "per_basis" && cfg.threshold_mode != "average")
    throw std::invalid_argument("service: unknown threshold mode '" +
                                cfg.threshold_mode + "'");
  if (cfg.bases.empty()) throw std::invalid_argument("service: no bases tracked");
  if (cfg.fringe_points < 8)
    throw std::invalid_argument("service: need at least 8 fringe points");
  if (cfg.tpi_dwell_s <= 0.0 || cfg.calibration_dwell_s <= 0.0)
    throw std::invalid_argument("service: dwells must be positive");
  if (cfg.window_ps <= 0) throw std::invalid_argument("service: bad window");

  ServiceRun run;
  run.threshold_mode = cfg.threshold_mode;
  // the schedule is fixed by the nominal spans; compression only shortens
  // the simulated waits between checks
  run.planned_iterations =
      static_cast<int>(std::floor(cfg.run_time_s / cfg.delta_t_s + 1e-9));

  run.sync = control::synchronize_sites(s);
  run.dark = control::check_dark_counts(s, cfg.dark_bounds);
  if (!run.dark.pass) {
    run.aborted = true;
    run.abort_reason = "dark-count gate: " + run.dark.offender +
                       " detector at " + std::to_string(run.dark.offending_cps) +
                       " cps, outside [" + std::to_string(cfg.dark_bounds.min_cps) +
                       ", " + std::to_string(cfg.dark_bounds.max_cps) + "]";
    return run;
  }
  run.compensation = control::compensate_polarization_drift(s, cfg.compensation);
  run.calibration =
      control::calibrate_eps(s, cfg.window_ps, cfg.calibration_grid,
                             cfg.calibration_fraction, cfg.calibration_dwell_s);
  run.accidental_cps = run.calibration.accidentals_cps[run.calibration.chosen_index];

  double threshold = cfg.visibility_threshold;  // <= 0 arms the auto rule
  run.threshold = threshold;

  TpiParams tp;
  tp.bases = cfg.bases;
  tp.points = cfg.fringe_points;
  tp.dwell_s = cfg.tpi_dwell_s;
  tp.window_ps = cfg.window_ps;
  tp.peak_delay_ps = run.calibration.peak_delay_ps;

  const double wait_s = cfg.delta_t_s / cfg.time_compression;
  for (int it = 0; it < run.planned_iterations; ++it) {
    if (cfg.on_iteration_start) cfg.on_iteration_start(it);
    TpiRun fringes = run_tpi(s, tp);
    if (!fringes.complete) resume_tpi(s, tp, fringes);  // one retry, then report

    IterationRecord rec;
    rec.index = it;
    rec.vtime_s =
        s.call(s.ttu(0), "ttu.get_time").at("virtual_time_s").get<double>();
    rec.complete = fringes.complete;
    const std::map<char, FringeFit> fits = fit_tpi(fringes);
    double sum = 0.0;
    for (const auto& [basis, fit] : fits) {
      rec.visibility[basis] = fit.visibility;
      sum += fit.visibility;  // NaN propagates into the average on purpose
    }
    rec.average_visibility =
        fits.empty() ? kNaN : sum / static_cast<double>(fits.size());

    if (it == 0 && cfg.visibility_threshold <= 0.0 &&
        std::isfinite(rec.average_visibility)) {
      // first healthy reading defines normal; alarm at 90 percent of it
      threshold = 0.9 * rec.average_visibility;
      run.threshold = threshold;
    }
    rec.threshold = threshold;

    const bool trip =
        it > 0 && below_threshold(rec, cfg.threshold_mode, threshold);
    if (trip) {
      // recompensation takes the slot of the scheduled wait
      run.compensation =
          control::compensate_polarization_drift(s, cfg.compensation);
      rec.recalibrated = true;
    } else {
      s.advance(wait_s);
    }
    run.iterations.push_back(rec);
  }
  return run;
}

json sync_to_json(const control::SyncReport& r) {
  return {{"offset_ps", r.offset_ps},
          {"rms_jitter_ps", r.rms_jitter_ps},
          {"pps_count", r.pps_count},
          {"lock_attempts_a", r.lock_attempts_a},
          {"lock_attempts_b", r.lock_attempts_b}};
}

json dark_to_json(const control::DarkReport& r) {
  return {{"signal_cps", r.signal_cps},
          {"idler_cps", r.idler_cps},
          {"pass", r.pass},
          {"offender", r.offender},
          {"offending_cps", r.offending_cps}};
}

json calibration_to_json(const control::CalibrationScan& c) {
  return {{"attenuation_db", c.attenuation_db},
          {"coincidences_cps", c.coincidences_cps},
          {"accidentals_cps", c.accidentals_cps},
          {"car", c.car},
          {"car_fit", c.car_fit},
          {"car_max", c.car_max},
          {"peak_db", c.peak_db},
          {"target_fraction", c.target_fraction},
          {"chosen_index", c.chosen_index},
          {"alpha_star_db", c.alpha_star_db},
          {"peak_delay_ps", c.peak_delay_ps}};
}

namespace {

json site_compensation_to_json(const control::SiteCompensation& sc) {
  return {{"site", sc.site},
          {"rounds", sc.rounds},
          {"converged", sc.converged},
          {"changed", sc.changed},
          {"d_min_cps", sc.d_min_cps},
          {"h_min_cps", sc.h_min_cps},
          {"baseline", sc.baseline},
          {"orthogonal_cps", sc.orthogonal_cps}};
}

}  // namespace

json compensation_to_json(const control::CompensationReport& r) {
  return {{"site_a", site_compensation_to_json(r.site_a)},
          {"site_b", site_compensation_to_json(r.site_b)}};
}

json fit_to_json(const FringeFit& f) {
  return {{"amplitude", f.amplitude},   {"frequency", f.frequency},
          {"phase", f.phase},           {"offset", f.offset},
          {"visibility", f.visibility}, {"rms_residual", f.rms_residual},
          {"converged", f.converged}};
}

json fringe_to_json(const FringeDataset& d) {
  return {{"basis", std::string(1, d.basis)},
          {"theta", d.theta},
          {"counts", d.counts},
          {"dwell_s", d.dwell_s},
          {"complete", d.complete}};
}

json rho_to_json(const pol::Mat4& rho) {
  json rows = json::array();
  for (int i = 0; i < 4; ++i) {
    json row = json::array();
    for (int j = 0; j < 4; ++j)
      row.push_back(json::array({rho(i, j).real(), rho(i, j).imag()}));
    rows.push_back(std::move(row));
  }
  return rows;
}

pol::Mat4 rho_from_json(const json& j) {
  pol::Mat4 rho;
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 4; ++k)
      rho(i, k) = std::complex<double>(j.at(i).at(k).at(0).get<double>(),
                                       j.at(i).at(k).at(1).get<double>());
  return rho;
}

json tomography_to_json(const Tomography& t) {
  json settings = json::array();
  for (const TomographySetting& st : t.settings) {
    settings.push_back({{"basis_a", std::string(1, st.basis_a)},
                        {"basis_b", std::string(1, st.basis_b)},
                        {"counts", st.counts}});
  }
  return {{"settings", std::move(settings)},
          {"rho", rho_to_json(t.rho)},
          {"fidelity_phi_plus", t.fidelity_phi_plus},
          {"concurrence", t.concurrence},
          {"pairs_per_setting", t.pairs_per_setting},
          {"reconfigurations", t.reconfigurations},
          {"dwell_s", t.dwell_s}};
}

json iteration_to_json(const IterationRecord& r) {
  json vis = json::object();
  for (const auto& [basis, v] : r.visibility) vis[std::string(1, basis)] = v;
  return {{"index", r.index},
          {"vtime_s", r.vtime_s},
          {"visibility", std::move(vis)},
          {"average_visibility", r.average_visibility},
          {"threshold", r.threshold},
          {"recalibrated", r.recalibrated},
          {"complete", r.complete}};
}

json service_run_to_json(const ServiceRun& r) {
  json its = json::array();
  for (const IterationRecord& rec : r.iterations) its.push_back(iteration_to_json(rec));
  return {{"aborted", r.aborted},
          {"abort_reason", r.abort_reason},
          {"sync", sync_to_json(r.sync)},
          {"dark", dark_to_json(r.dark)},
          {"compensation", compensation_to_json(r.compensation)},
          {"calibration", calibration_to_json(r.calibration)},
          {"accidental_cps", r.accidental_cps},
          {"threshold_mode", r.threshold_mode},
          {"threshold", r.threshold},
          {"planned_iterations", r.planned_iterations},
          {"iterations", std::move(its)}};
}

void write_fringe_csv(const std::string& path,
                      const std::vector<FringeDataset>& fringes) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_fringe_csv: cannot open " + path);
  out << std::setprecision(17);
  out << "basis,theta_rad,counts\n";
  for (const FringeDataset& ds : fringes)
    for (size_t i = 0; i < ds.counts.size(); ++i)
      out << ds.basis << ',' << ds.theta[i] << ',' << ds.counts[i] << '\n';
}

}  // namespace qnet::services
