#include "qnet/sim_engine.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "qnet/polarization.hpp"

namespace qnet::sim {
namespace {

using qnet::pol::Mat2;
using qnet::pol::Mat4;

constexpr int64_t kBlockPs = 100'000'000'000;  // 100 ms generation blocks
constexpr double kMaxAcquireS = 600.0;

// Random-stream tags. Combined with the window start and block index they
// give every draw site a unique seed that does not depend on thread count
// or on which site registered the window first.
enum StreamTag : uint64_t {
  kTagPairs = 1,
  kTagAOnly = 2,
  kTagBOnly = 3,
  kTagAlign = 4,   // +site
  kTagDark = 10,   // +site
  kTagClock = 30,  // +site
};

int64_t to_ps(double seconds) { return llround(seconds * 1e12); }

double wrap_2pi(double v) {
  v = std::fmod(v, 2.0 * qnet::pol::kPi);
  if (v < 0.0) v += 2.0 * qnet::pol::kPi;
  return v;
}

// Uniform Poisson arrivals over [start, start + len) ps at rate_hz.
void poisson_times(std::mt19937_64& rng, double rate_hz, int64_t start,
                   int64_t len, std::vector<int64_t>& out) {
  if (rate_hz <= 0.0 || len <= 0) return;
  std::poisson_distribution<int64_t> pn(rate_hz * static_cast<double>(len) *
                                        1e-12);
  std::uniform_real_distribution<double> ut(0.0, 1.0);
  const int64_t n = pn(rng);
  for (int64_t i = 0; i < n; ++i) {
    out.push_back(start +
                  static_cast<int64_t>(ut(rng) * static_cast<double>(len)));
  }
}

}  // namespace

SimEngine::SimEngine(Scenario scn) : scn_(std::move(scn)) {
  plates_[0] = plates_[1] = {0.0, 0.0, 0.0, 0.0};
  baseline_[0] = baseline_[1] = {0.0, 0.0, 0.0, 0.0};
  locked_[0] = scn_.site_a.clock.locked_to_reference;
  locked_[1] = scn_.site_b.clock.locked_to_reference;
  lock_time_ps_[0] = lock_time_ps_[1] = 0;
}

int64_t SimEngine::vtime_ps() const {
  std::lock_guard<std::mutex> lk(mu_);
  return vtime_ps_;
}

double SimEngine::vtime_s() const { return vtime_ps() * 1e-12; }

void SimEngine::advance(double seconds) {
  if (!(seconds >= 0.0) || seconds > 1e7)
    throw std::invalid_argument("advance: bad duration");
  std::lock_guard<std::mutex> lk(mu_);
  vtime_ps_ += to_ps(seconds);
}

void SimEngine::set_attenuation(double db) {
  if (!(db >= 0.0) || db > 60.0)
    throw std::invalid_argument("set_attenuation: out of range");
  std::lock_guard<std::mutex> lk(mu_);
  scn_.eps.attenuation_db = db;
}

double SimEngine::attenuation() const {
  std::lock_guard<std::mutex> lk(mu_);
  return scn_.eps.attenuation_db;
}

void SimEngine::set_mode(EpsMode mode, char alignment_basis) {
  qnet::pol::basis_state(alignment_basis);  // validates the label
  std::lock_guard<std::mutex> lk(mu_);
  scn_.eps.mode = mode;
  scn_.eps.alignment_basis = alignment_basis;
}

EpsStatus SimEngine::eps_status() const {
  std::lock_guard<std::mutex> lk(mu_);
  EpsStatus st;
  st.attenuation_db = scn_.eps.attenuation_db;
  st.mode = scn_.eps.mode;
  st.alignment_basis = scn_.eps.alignment_basis;
  st.channel_pair = scn_.eps.channel_pair;
  st.pair_rate_hz = pair_rate(scn_.eps);
  return st;
}

void SimEngine::set_waveplate(int site, int plate, double retardance) {
  if (site < 0 || site > 1) throw std::invalid_argument("bad site");
  if (plate < 0 || plate > 3) throw std::invalid_argument("bad plate index");
  if (!std::isfinite(retardance))
    throw std::invalid_argument("bad retardance");
  std::lock_guard<std::mutex> lk(mu_);
  plates_[site][plate] = wrap_2pi(retardance);
}

std::array<double, 4> SimEngine::waveplates(int site) const {
  if (site < 0 || site > 1) throw std::invalid_argument("bad site");
  std::lock_guard<std::mutex> lk(mu_);
  return plates_[site];
}

void SimEngine::set_baseline(int site,
                             const std::array<double, 4>& retardances) {
  if (site < 0 || site > 1) throw std::invalid_argument("bad site");
  std::lock_guard<std::mutex> lk(mu_);
  for (int i = 0; i < 4; ++i) baseline_[site][i] = wrap_2pi(retardances[i]);
}

std::array<double, 4> SimEngine::baseline(int site) const {
  if (site < 0 || site > 1) throw std::invalid_argument("bad site");
  std::lock_guard<std::mutex> lk(mu_);
  return baseline_[site];
}

void SimEngine::set_basis(int site, char basis) {
  if (site < 0 || site > 1) throw std::invalid_argument("bad site");
  // Offsets on top of the compensated baseline: WP2 advances the analyzed
  // azimuth, WP3 sets the polar angle. The transmitted state of the bare
  // stack is (cos(z/2), i e^{-ix} sin(z/2)) in H/V.
  double x = 0.0, z = 0.0;
  switch (basis) {
    case 'H': x = 0.0, z = 0.0; break;
    case 'V': x = 0.0, z = qnet::pol::kPi; break;
    case 'D': x = 0.5 * qnet::pol::kPi, z = 0.5 * qnet::pol::kPi; break;
    case 'A': x = 1.5 * qnet::pol::kPi, z = 0.5 * qnet::pol::kPi; break;
    case 'R': x = 0.0, z = 0.5 * qnet::pol::kPi; break;
    case 'L': x = qnet::pol::kPi, z = 0.5 * qnet::pol::kPi; break;
    default:
      throw std::invalid_argument("set_basis: unknown basis label");
  }
  std::lock_guard<std::mutex> lk(mu_);
  const auto& b = baseline_[site];
  plates_[site] = {b[0], b[1], wrap_2pi(b[2] + x), z};
}

void SimEngine::lock_clock(int site, bool locked) {
  if (site < 0 || site > 1) throw std::invalid_argument("bad site");
  std::lock_guard<std::mutex> lk(mu_);
  if (locked && !locked_[site]) lock_time_ps_[site] = vtime_ps_;
  locked_[site] = locked;
}

bool SimEngine::clock_locked(int site) const {
  if (site < 0 || site > 1) throw std::invalid_argument("bad site");
  std::lock_guard<std::mutex> lk(mu_);
  return locked_[site];
}

const SiteModel& SimEngine::site_model(int site) const {
  return site == 0 ? scn_.site_a : scn_.site_b;
}

SimEngine::ClockSnapshot SimEngine::clock_snapshot(int site) const {
  const ClockModel& c = site_model(site).clock;
  ClockSnapshot s;
  s.offset_ps = llround(c.offset_ps);
  s.drift_ppm = c.drift_ppm;
  s.jitter_sigma_ps = c.jitter_sigma_ps;
  s.locked = locked_[site];
  // While locked the clock ticks at the reference rate; the drift phase it
  // had accumulated by the lock instant stays in.
  s.frozen_drift_ps =
      llround(c.drift_ppm * 1e-6 * static_cast<double>(lock_time_ps_[site]));
  return s;
}

qnet::pol::Mat2 SimEngine::link_unitary_unlocked(int site, double at_s) const {
  const FiberChannel& fiber = site_model(site).fiber;
  Mat2 u = drift_unitary(fiber, at_s);
  for (const DriftEvent& ev : scn_.drift_events) {
    if (ev.site == site && ev.time_s <= at_s) u = drift_event_unitary(ev) * u;
  }
  return u;
}

void SimEngine::inject_drift_event(int site, double angle_rad,
                                   uint64_t axis_seed) {
  if (site < 0 || site > 1) throw std::invalid_argument("bad site");
  std::lock_guard<std::mutex> lk(mu_);
  scn_.drift_events.push_back(
      {static_cast<double>(vtime_ps_) / 1e12, site, angle_rad, axis_seed});
}

qnet::pol::Mat2 SimEngine::link_unitary(int site) const {
  if (site < 0 || site > 1) throw std::invalid_argument("bad site");
  std::lock_guard<std::mutex> lk(mu_);
  return link_unitary_unlocked(site, vtime_ps_ * 1e-12);
}

const SimEngine::JointRealization& SimEngine::joint_window(int64_t t0,
                                                           int64_t dur) {
  auto it = joint_cache_.find(t0);
  if (it != joint_cache_.end()) {
    // Same start but different span counts as a different acquisition and
    // gets its own realization; the earlier one has already been
    // materialized into its stream set, so replacing the cache entry is safe.
    if (it->second.dur_ps == dur) return it->second;
    joint_cache_.erase(it);
  }

  JointRealization jr;
  jr.t0_ps = t0;
  jr.dur_ps = dur;

  // Snapshot of link + analyzer settings at registration time. The fiber
  // walk is slow (minutes), so it is held fixed across the window.
  const Mat2 ua = link_unitary_unlocked(0, t0 * 1e-12);
  const Mat2 ub = link_unitary_unlocked(1, t0 * 1e-12);
  const Mat4 rho = qnet::pol::apply_local(ua, ub, scn_.emitted_state());
  const Mat2 an_a = qnet::pol::analyzer_unitary(plates_[0]);
  const Mat2 an_b = qnet::pol::analyzer_unitary(plates_[1]);
  const double p_joint = qnet::pol::coincidence_probability(rho, an_a, an_b);
  const Mat2 proj_a = qnet::pol::analyzer_projector(an_a);
  const Mat2 proj_b = qnet::pol::analyzer_projector(an_b);
  const double p_a = std::real(
      (qnet::pol::kron(proj_a, Mat2::Identity()) * rho).trace());
  const double p_b = std::real(
      (qnet::pol::kron(Mat2::Identity(), proj_b) * rho).trace());

  const double lambda = pair_rate(scn_.eps);
  const double eta_a = scn_.site_a.arm_efficiency();
  const double eta_b = scn_.site_b.arm_efficiency();
  const double r_both = lambda * eta_a * eta_b * p_joint;
  const double r_a_only = std::max(0.0, lambda * eta_a * p_a - r_both);
  const double r_b_only = std::max(0.0, lambda * eta_b * p_b - r_both);
  const int64_t delay_a = llround(scn_.site_a.fiber.propagation_delay_ps);
  const int64_t delay_b = llround(scn_.site_b.fiber.propagation_delay_ps);
  const double jit_a = scn_.site_a.detector.jitter_sigma_ps;
  const double jit_b = scn_.site_b.detector.jitter_sigma_ps;

  const int64_t nblocks = (dur + kBlockPs - 1) / kBlockPs;
  std::vector<std::array<std::vector<int64_t>, 2>> parts(nblocks);
#pragma omp parallel for schedule(dynamic)
  for (int64_t k = 0; k < nblocks; ++k) {
    const int64_t bs = t0 + k * kBlockPs;
    const int64_t len = std::min(kBlockPs, t0 + dur - bs);
    auto& out_a = parts[static_cast<size_t>(k)][0];
    auto& out_b = parts[static_cast<size_t>(k)][1];
    {
      std::mt19937_64 rng(mix_seed(scn_.seed, static_cast<uint64_t>(t0),
                                   static_cast<uint64_t>(k), kTagPairs));
      std::poisson_distribution<int64_t> pn(r_both * len * 1e-12);
      std::uniform_real_distribution<double> ut(0.0, 1.0);
      std::normal_distribution<double> na(0.0, jit_a), nb(0.0, jit_b);
      const int64_t n = pn(rng);
      for (int64_t i = 0; i < n; ++i) {
        const int64_t t =
            bs + static_cast<int64_t>(ut(rng) * static_cast<double>(len));
        out_a.push_back(t + delay_a + llround(na(rng)));
        out_b.push_back(t + delay_b + llround(nb(rng)));
      }
    }
    {
      std::mt19937_64 rng(mix_seed(scn_.seed, static_cast<uint64_t>(t0),
                                   static_cast<uint64_t>(k), kTagAOnly));
      std::vector<int64_t> emit;
      poisson_times(rng, r_a_only, bs, len, emit);
      std::normal_distribution<double> na(0.0, jit_a);
      for (int64_t t : emit) out_a.push_back(t + delay_a + llround(na(rng)));
    }
    {
      std::mt19937_64 rng(mix_seed(scn_.seed, static_cast<uint64_t>(t0),
                                   static_cast<uint64_t>(k), kTagBOnly));
      std::vector<int64_t> emit;
      poisson_times(rng, r_b_only, bs, len, emit);
      std::normal_distribution<double> nb(0.0, jit_b);
      for (int64_t t : emit) out_b.push_back(t + delay_b + llround(nb(rng)));
    }
  }
  for (auto& p : parts) {
    for (int s = 0; s < 2; ++s)
      jr.arrivals[s].insert(jr.arrivals[s].end(), p[s].begin(), p[s].end());
  }

  while (joint_cache_.size() >= 2) joint_cache_.erase(joint_cache_.begin());
  return joint_cache_.emplace(t0, std::move(jr)).first->second;
}

std::vector<int64_t> SimEngine::photon_arrivals(int site, int64_t t0,
                                                int64_t dur) const {
  std::vector<int64_t> out;
  if (scn_.eps.mode != EpsMode::alignment) return out;

  const SiteModel& sm = site_model(site);
  const Mat2 u = link_unitary_unlocked(site, t0 * 1e-12);
  const Mat2 an = qnet::pol::analyzer_unitary(plates_[site]);
  const qnet::pol::Vec2 psi =
      u * qnet::pol::basis_state(scn_.eps.alignment_basis);
  const double p = std::real(
      (psi.adjoint() * qnet::pol::analyzer_projector(an) * psi)(0, 0));
  const double rate = scn_.eps.alignment_rate_hz * sm.arm_efficiency() * p;
  const int64_t delay = llround(sm.fiber.propagation_delay_ps);
  const double jit = sm.detector.jitter_sigma_ps;

  const int64_t nblocks = (dur + kBlockPs - 1) / kBlockPs;
  std::vector<std::vector<int64_t>> parts(nblocks);
#pragma omp parallel for schedule(dynamic)
  for (int64_t k = 0; k < nblocks; ++k) {
    const int64_t bs = t0 + k * kBlockPs;
    const int64_t len = std::min(kBlockPs, t0 + dur - bs);
    std::mt19937_64 rng(
        mix_seed(scn_.seed, static_cast<uint64_t>(t0),
                 static_cast<uint64_t>(k), kTagAlign + site));
    std::vector<int64_t> emit;
    poisson_times(rng, rate, bs, len, emit);
    std::normal_distribution<double> nj(0.0, jit);
    auto& o = parts[static_cast<size_t>(k)];
    for (int64_t t : emit) o.push_back(t + delay + llround(nj(rng)));
  }
  for (auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

qnet::tags::StreamSet SimEngine::build_streams(
    int site, int64_t t0, int64_t dur, std::vector<int64_t> photons) const {
  const SiteModel& sm = site_model(site);

  // Dark counts land on the photon channel regardless of source mode.
  const int64_t nblocks = (dur + kBlockPs - 1) / kBlockPs;
  for (int64_t k = 0; k < nblocks; ++k) {
    const int64_t bs = t0 + k * kBlockPs;
    const int64_t len = std::min(kBlockPs, t0 + dur - bs);
    std::mt19937_64 rng(
        mix_seed(scn_.seed, static_cast<uint64_t>(t0),
                 static_cast<uint64_t>(k), kTagDark + site));
    poisson_times(rng, sm.detector.dark_rate_cps, bs, len, photons);
  }

  // PPS and decimated reference edges on their shared true-time grids.
  std::vector<int64_t> pps, ref;
  const int64_t pps_ps = to_ps(scn_.pps_interval_s);
  for (int64_t k = (t0 + pps_ps - 1) / pps_ps; k * pps_ps < t0 + dur; ++k)
    pps.push_back(k * pps_ps);
  const int64_t ref_ps = llround(1e12 / scn_.ref_tag_rate_hz);
  for (int64_t k = (t0 + ref_ps - 1) / ref_ps; k * ref_ps < t0 + dur; ++k)
    ref.push_back(k * ref_ps);

  // Record every tag through the site clock: offset, drift (frozen at the
  // lock instant when locked), and per-tag timing jitter.
  const ClockSnapshot ck = clock_snapshot(site);
  std::mt19937_64 jrng(mix_seed(scn_.seed, static_cast<uint64_t>(t0),
                                kTagClock + site));
  std::normal_distribution<double> nj(0.0, ck.jitter_sigma_ps);
  auto record = [&](std::vector<int64_t>& v) {
    for (int64_t& t : v) {
      const int64_t drift =
          ck.locked ? ck.frozen_drift_ps
                    : llround(ck.drift_ppm * 1e-6 * static_cast<double>(t));
      t += ck.offset_ps + drift +
           (ck.jitter_sigma_ps > 0.0 ? llround(nj(jrng)) : 0);
    }
    std::sort(v.begin(), v.end());
  };
  record(photons);
  record(pps);
  record(ref);

  qnet::tags::StreamSet set;
  const uint8_t s8 = static_cast<uint8_t>(site);
  set.push_back({kPhotonChannel, s8, std::move(photons)});
  set.push_back({kPpsChannel, s8, std::move(pps)});
  set.push_back({kRefChannel, s8, std::move(ref)});
  return set;
}

uint64_t SimEngine::acquire(int site, double duration_s) {
  if (site < 0 || site > 1) throw std::invalid_argument("bad site");
  if (!(duration_s > 0.0) || duration_s > kMaxAcquireS)
    throw std::invalid_argument("acquire: bad duration");
  std::lock_guard<std::mutex> lk(mu_);
  const int64_t t0 = vtime_ps_;
  const int64_t dur = to_ps(duration_s);

  std::vector<int64_t> photons;
  if (scn_.eps.mode == EpsMode::entangled) {
    photons = joint_window(t0, dur).arrivals[site];
  } else {
    photons = photon_arrivals(site, t0, dur);
  }

  Acquisition acq;
  acq.site = site;
  acq.t0_ps = t0;
  acq.dur_ps = dur;
  acq.streams = build_streams(site, t0, dur, std::move(photons));
  const uint64_t h = next_handle_++;
  acqs_.emplace(h, std::move(acq));

  // Keep only the two most recent acquisitions per site.
  int count = 0;
  for (auto it = acqs_.rbegin(); it != acqs_.rend(); ++it)
    if (it->second.site == site) ++count;
  for (auto it = acqs_.begin(); count > 2 && it != acqs_.end();) {
    if (it->second.site == site) {
      it = acqs_.erase(it);
      --count;
    } else {
      ++it;
    }
  }
  return h;
}

qnet::tags::StreamSet SimEngine::fetch(int site, uint64_t handle) const {
  std::lock_guard<std::mutex> lk(mu_);
  auto it = acqs_.find(handle);
  if (it == acqs_.end())
    throw std::runtime_error("fetch: unknown or expired handle");
  if (it->second.site != site)
    throw std::runtime_error("fetch: handle belongs to the other site");
  if (vtime_ps_ < it->second.t0_ps + it->second.dur_ps)
    throw std::runtime_error("fetch: acquisition still in progress");
  return it->second.streams;
}

std::pair<qnet::tags::StreamSet, qnet::tags::StreamSet> simulate_acquisition(
    const Scenario& scn, double duration_s, uint64_t seed) {
  Scenario local = scn;
  local.seed = seed;
  SimEngine eng(local);
  const uint64_t ha = eng.acquire(0, duration_s);
  const uint64_t hb = eng.acquire(1, duration_s);
  eng.advance(duration_s);
  return {eng.fetch(0, ha), eng.fetch(1, hb)};
}

}  // namespace qnet::sim
