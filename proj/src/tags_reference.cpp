#include <algorithm>
#include <stdexcept>

#include "qnet/timetags.hpp"

// Plain serial implementations, written directly from the definitions. No
// sharing with the parallel kernels beyond the public types.

namespace qnet::tags::reference {

uint64_t count_coincidences(const std::vector<int64_t>& signal, const std::vector<int64_t>& idler,
                            int64_t window_ps, int64_t delay_ps) {
  if (window_ps <= 0) throw std::invalid_argument("window must be positive");
  std::vector<bool> consumed(idler.size(), false);
  uint64_t n = 0;
  for (int64_t s : signal) {
    const int64_t c = s + delay_ps;
    // first idler with 2*(i - c) >= -window
    auto it = std::lower_bound(idler.begin(), idler.end(), c - window_ps);
    for (; it != idler.end(); ++it) {
      const int64_t d2 = 2 * (*it - c);
      if (d2 > window_ps) break;
      if (d2 < -window_ps) continue;
      const size_t idx = static_cast<size_t>(it - idler.begin());
      if (!consumed[idx]) {
        consumed[idx] = true;
        ++n;
        break;
      }
    }
  }
  return n;
}

int64_t estimate_offset(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("empty tag stream");
  std::vector<int64_t> diffs;
  diffs.reserve(a.size());
  for (int64_t t : a) {
    int64_t best = b.front();
    for (int64_t u : b) {
      const int64_t du = u >= t ? u - t : t - u;
      const int64_t db = best >= t ? best - t : t - best;
      if (du < db || (du == db && u < best)) best = u;
    }
    diffs.push_back(best - t);
  }
  std::sort(diffs.begin(), diffs.end());
  return diffs[(diffs.size() - 1) / 2];
}

Histogram correlation_histogram(const std::vector<int64_t>& a, const std::vector<int64_t>& b,
                                int64_t bin_width_ps, int64_t span_ps) {
  Histogram h;
  h.bin_width = bin_width_ps;
  if (a.empty() || b.empty()) return h;

  // dominant offset: mode over coarse bins of nearest-neighbour differences,
  // then lower median within the winning neighbourhood
  const int64_t coarse = std::max<int64_t>(bin_width_ps, span_ps / 64);
  std::vector<int64_t> diffs;
  diffs.reserve(a.size());
  for (int64_t t : a) {
    int64_t best = b.front();
    for (int64_t u : b) {
      const int64_t du = u >= t ? u - t : t - u;
      const int64_t db = best >= t ? best - t : t - best;
      if (du < db || (du == db && u < best)) best = u;
    }
    diffs.push_back(best - t);
  }
  auto bin_of = [coarse](int64_t d) {
    return d >= 0 ? d / coarse : -((-d + coarse - 1) / coarse);
  };
  int64_t best_bin = bin_of(diffs.front());
  uint64_t best_count = 0;
  {
    std::vector<int64_t> keys;
    for (int64_t d : diffs) keys.push_back(bin_of(d));
    for (int64_t k : keys) {
      const uint64_t c =
          static_cast<uint64_t>(std::count(keys.begin(), keys.end(), k));
      if (c > best_count) {
        best_count = c;
        best_bin = k;
      }
    }
  }
  std::vector<int64_t> in_bin;
  for (int64_t d : diffs) {
    if (d >= (best_bin - 1) * coarse && d < (best_bin + 2) * coarse) in_bin.push_back(d);
  }
  std::sort(in_bin.begin(), in_bin.end());
  const int64_t dom = in_bin.empty() ? 0 : in_bin[(in_bin.size() - 1) / 2];

  const int64_t half_bins = std::max<int64_t>(span_ps / (2 * bin_width_ps), 0);
  const int64_t n_bins = 2 * half_bins + 1;
  h.dominant = dom;
  for (int64_t k = 0; k < n_bins; ++k) h.centers.push_back(dom + (k - half_bins) * bin_width_ps);
  h.counts.assign(static_cast<size_t>(n_bins), 0);
  for (int64_t t : a) {
    for (int64_t u : b) {
      const int64_t d2 = 2 * (u - t);
      const int64_t lo = 2 * (dom - half_bins * bin_width_ps) - bin_width_ps;
      const int64_t hi = 2 * (dom + half_bins * bin_width_ps) + bin_width_ps;
      if (d2 >= lo && d2 < hi) {
        ++h.counts[static_cast<size_t>((d2 - lo) / (2 * bin_width_ps))];
      }
    }
  }
  for (uint64_t c : h.counts) h.total += c;
  h.has_pairs = h.total > 0;
  return h;
}

}  // namespace qnet::tags::reference
