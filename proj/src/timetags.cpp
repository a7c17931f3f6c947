#include "qnet/timetags.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace qnet::tags {

namespace {

constexpr char kMagic[8] = {'Q', 'N', 'E', 'T', 'T', 'A', 'G', 'S'};
constexpr uint8_t kVersion = 1;

void require_sorted(const std::vector<int64_t>& v, const char* what) {
  if (!std::is_sorted(v.begin(), v.end())) {
    throw std::invalid_argument(std::string(what) + ": tags must be sorted ascending");
  }
}

// Nearest b tag to x; ties between the two neighbours take the lower one.
int64_t nearest(const std::vector<int64_t>& b, int64_t x) {
  auto it = std::lower_bound(b.begin(), b.end(), x);
  if (it == b.begin()) return *it;
  if (it == b.end()) return b.back();
  const int64_t hi = *it, lo = *(it - 1);
  return (x - lo) <= (hi - x) ? lo : hi;
}

int64_t lower_median(std::vector<int64_t> v) {
  const size_t k = (v.size() - 1) / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<ptrdiff_t>(k), v.end());
  return v[k];
}

uint64_t greedy_count_range(const std::vector<int64_t>& s, size_t s_lo, size_t s_hi,
                            const std::vector<int64_t>& i, size_t i_lo, size_t i_hi,
                            int64_t window, int64_t delay) {
  // Window bound is inclusive on both sides: 2*|i - s - delay| <= window.
  uint64_t n = 0;
  size_t j = i_lo;
  const int64_t half2 = window;  // compare 2*|d| <= window via doubled values
  for (size_t k = s_lo; k < s_hi; ++k) {
    const int64_t c = s[k] + delay;
    while (j < i_hi && 2 * (c - i[j]) > half2) ++j;
    if (j < i_hi && 2 * (i[j] - c) <= half2) {
      ++n;
      ++j;
    }
  }
  return n;
}

}  // namespace

const TimeTagStream* find_stream(const StreamSet& set, uint16_t channel) {
  for (const auto& s : set) {
    if (s.channel == channel) return &s;
  }
  return nullptr;
}

std::vector<int64_t> extract_pps(const StreamSet& set, uint16_t pps_channel) {
  const TimeTagStream* s = find_stream(set, pps_channel);
  if (s == nullptr) return {};
  return s->tags;
}

int64_t estimate_offset(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
  if (a.empty() || b.empty()) {
    throw std::invalid_argument("estimate_offset: empty tag stream");
  }
  require_sorted(a, "estimate_offset(a)");
  require_sorted(b, "estimate_offset(b)");
  std::vector<int64_t> diffs(a.size());
#pragma omp parallel for schedule(static)
  for (size_t k = 0; k < a.size(); ++k) {
    diffs[k] = nearest(b, a[k]) - a[k];
  }
  return lower_median(std::move(diffs));
}

RemapTable make_disjoint_remap(const StreamSet& a, const StreamSet& b) {
  std::set<uint16_t> used;
  uint16_t max_id = 0;
  for (const auto& s : a) {
    used.insert(s.channel);
    max_id = std::max(max_id, s.channel);
  }
  for (const auto& s : b) max_id = std::max(max_id, s.channel);
  RemapTable t;
  uint16_t next = static_cast<uint16_t>(max_id + 1);
  for (const auto& s : b) {
    if (used.count(s.channel) != 0) {
      t[s.channel] = next++;
    }
  }
  return t;
}

MergeResult merge_streams(const StreamSet& a, const StreamSet& b, int64_t offset,
                          const RemapTable* remap) {
  MergeResult out;
  std::set<uint16_t> used;
  for (const auto& s : a) {
    if (!used.insert(s.channel).second) {
      throw std::invalid_argument("merge_streams: duplicate channel " +
                                  std::to_string(s.channel) + " on the a side");
    }
    out.streams.push_back(s);
  }
  for (const auto& s : b) {
    uint16_t ch = s.channel;
    if (remap != nullptr) {
      auto it = remap->find(ch);
      if (it != remap->end()) ch = it->second;
    }
    if (!used.insert(ch).second) {
      throw std::invalid_argument("merge_streams: channel collision on id " + std::to_string(ch) +
                                  (remap == nullptr ? " (no remap table given)" : " after remap"));
    }
    out.channel_map[s.channel] = ch;
    TimeTagStream shifted;
    shifted.channel = ch;
    shifted.site = s.site;
    shifted.tags.resize(s.tags.size());
#pragma omp parallel for schedule(static)
    for (size_t k = 0; k < s.tags.size(); ++k) {
      shifted.tags[k] = s.tags[k] - offset;
    }
    out.streams.push_back(std::move(shifted));
  }
  return out;
}

uint64_t count_coincidences(const std::vector<int64_t>& signal, const std::vector<int64_t>& idler,
                            int64_t window_ps, int64_t delay_ps) {
  if (window_ps <= 0) throw std::invalid_argument("count_coincidences: window must be positive");
  require_sorted(signal, "count_coincidences(signal)");
  require_sorted(idler, "count_coincidences(idler)");
  if (signal.empty() || idler.empty()) return 0;

  // Greedy pairing decomposes over "islands": walk the union of shifted signal
  // tags and idler tags in time order and split wherever the gap between
  // consecutive events exceeds window/2 (pairs and consumption chains cannot
  // cross such a gap). Islands are independent, so they can run in parallel
  // with a deterministic total.
  struct Island {
    size_t s_lo, s_hi, i_lo, i_hi;
  };
  std::vector<Island> islands;
  {
    size_t si = 0, ii = 0;
    const size_t ns = signal.size(), ni = idler.size();
    size_t s_start = 0, i_start = 0;
    int64_t prev = 0;
    bool have_prev = false;
    while (si < ns || ii < ni) {
      int64_t t;
      bool take_signal;
      if (ii >= ni) {
        take_signal = true;
      } else if (si >= ns) {
        take_signal = false;
      } else {
        take_signal = signal[si] + delay_ps <= idler[ii];
      }
      t = take_signal ? signal[si] + delay_ps : idler[ii];
      if (have_prev && 2 * (t - prev) > window_ps) {
        islands.push_back({s_start, si, i_start, ii});
        s_start = si;
        i_start = ii;
      }
      prev = t;
      have_prev = true;
      if (take_signal) {
        ++si;
      } else {
        ++ii;
      }
    }
    islands.push_back({s_start, signal.size(), i_start, idler.size()});
  }

  uint64_t total = 0;
#pragma omp parallel for schedule(dynamic, 64) reduction(+ : total)
  for (size_t k = 0; k < islands.size(); ++k) {
    const Island& is = islands[k];
    total += greedy_count_range(signal, is.s_lo, is.s_hi, idler, is.i_lo, is.i_hi, window_ps,
                                delay_ps);
  }
  return total;
}

namespace {
const std::vector<int64_t>& stream_or_throw(const StreamSet& set, uint16_t ch, const char* role) {
  const TimeTagStream* s = find_stream(set, ch);
  if (s == nullptr) {
    throw std::invalid_argument(std::string("unknown ") + role + " channel " + std::to_string(ch));
  }
  return s->tags;
}
}  // namespace

uint64_t count_coincidences(const StreamSet& merged, uint16_t signal_ch, uint16_t idler_ch,
                            int64_t window_ps, int64_t delay_ps) {
  return count_coincidences(stream_or_throw(merged, signal_ch, "signal"),
                            stream_or_throw(merged, idler_ch, "idler"), window_ps, delay_ps);
}

uint64_t estimate_accidentals(const std::vector<int64_t>& signal,
                              const std::vector<int64_t>& idler, int64_t window_ps,
                              int64_t delay_offset_ps) {
  if (std::abs(delay_offset_ps) <= window_ps) {
    throw std::invalid_argument(
        "estimate_accidentals: delay_offset must lie outside the coincidence window");
  }
  return count_coincidences(signal, idler, window_ps, delay_offset_ps);
}

uint64_t estimate_accidentals(const StreamSet& merged, uint16_t signal_ch, uint16_t idler_ch,
                              int64_t window_ps, int64_t delay_offset_ps) {
  return estimate_accidentals(stream_or_throw(merged, signal_ch, "signal"),
                              stream_or_throw(merged, idler_ch, "idler"), window_ps,
                              delay_offset_ps);
}

int64_t Histogram::peak_offset() const {
  if (centers.empty()) throw std::logic_error("peak_offset on empty histogram");
  size_t best = 0;
  for (size_t k = 1; k < counts.size(); ++k) {
    if (counts[k] > counts[best]) best = k;
  }
  return centers[best];
}

namespace {

// Dominant (t_b - t_a) offset from nearest-neighbour differences: mode of a
// coarse binning, refined to the lower median of the diffs inside the winning
// bin and its direct neighbours.
int64_t dominant_offset(const std::vector<int64_t>& a, const std::vector<int64_t>& b,
                        int64_t coarse_bin) {
  std::vector<int64_t> diffs(a.size());
#pragma omp parallel for schedule(static)
  for (size_t k = 0; k < a.size(); ++k) {
    diffs[k] = nearest(b, a[k]) - a[k];
  }
  std::map<int64_t, uint64_t> bins;
  for (int64_t d : diffs) {
    // floor division keeps negative diffs in the right bin
    int64_t q = d >= 0 ? d / coarse_bin : -((-d + coarse_bin - 1) / coarse_bin);
    ++bins[q];
  }
  int64_t best_bin = 0;
  uint64_t best_count = 0;
  for (const auto& [q, c] : bins) {
    if (c > best_count) {
      best_count = c;
      best_bin = q;
    }
  }
  std::vector<int64_t> in_bin;
  for (int64_t d : diffs) {
    const int64_t lo = (best_bin - 1) * coarse_bin, hi = (best_bin + 2) * coarse_bin;
    if (d >= lo && d < hi) in_bin.push_back(d);
  }
  if (in_bin.empty()) return 0;
  return lower_median(std::move(in_bin));
}

Histogram histogram_at(const std::vector<int64_t>& a, const std::vector<int64_t>& b,
                       int64_t bin_width, int64_t span, int64_t dominant, bool parallel) {
  Histogram h;
  h.bin_width = bin_width;
  h.dominant = dominant;
  const int64_t half_bins = std::max<int64_t>(span / (2 * bin_width), 0);
  const int64_t n_bins = 2 * half_bins + 1;
  h.centers.resize(static_cast<size_t>(n_bins));
  for (int64_t k = 0; k < n_bins; ++k) {
    h.centers[static_cast<size_t>(k)] = dominant + (k - half_bins) * bin_width;
  }
  h.counts.assign(static_cast<size_t>(n_bins), 0);
  const int64_t lo_edge = 2 * (dominant - half_bins * bin_width) - bin_width;  // doubled units
  const int64_t hi_edge = 2 * (dominant + half_bins * bin_width) + bin_width;

  auto body = [&](std::vector<uint64_t>& counts, size_t k) {
    // all b with 2*(b - a_k) in [lo_edge, hi_edge)
    const int64_t t = a[k];
    // start strictly below the lowest admissible tag; the d2 < lo_edge
    // check below skips the (at most two) extra leading candidates
    auto it = std::lower_bound(b.begin(), b.end(), t + lo_edge / 2 - 2);
    for (; it != b.end(); ++it) {
      const int64_t d2 = 2 * (*it - t);
      if (d2 < lo_edge) continue;
      if (d2 >= hi_edge) break;
      const int64_t idx = (d2 - lo_edge) / (2 * bin_width);
      ++counts[static_cast<size_t>(idx)];
    }
  };

  if (parallel) {
#pragma omp parallel
    {
      std::vector<uint64_t> local(h.counts.size(), 0);
#pragma omp for schedule(static) nowait
      for (size_t k = 0; k < a.size(); ++k) body(local, k);
#pragma omp critical
      {
        for (size_t k = 0; k < local.size(); ++k) h.counts[k] += local[k];
      }
    }
  } else {
    for (size_t k = 0; k < a.size(); ++k) body(h.counts, k);
  }

  for (uint64_t c : h.counts) h.total += c;
  h.has_pairs = h.total > 0;
  return h;
}

}  // namespace

Histogram correlation_histogram(const std::vector<int64_t>& a, const std::vector<int64_t>& b,
                                int64_t bin_width_ps, int64_t span_ps) {
  if (bin_width_ps <= 0 || span_ps <= 0) {
    throw std::invalid_argument("correlation_histogram: bin width and span must be positive");
  }
  if (a.empty() || b.empty()) {
    Histogram h;
    h.bin_width = bin_width_ps;
    return h;  // has_pairs = false
  }
  require_sorted(a, "correlation_histogram(a)");
  require_sorted(b, "correlation_histogram(b)");
  const int64_t coarse = std::max<int64_t>(bin_width_ps, span_ps / 64);
  const int64_t dom = dominant_offset(a, b, coarse);
  return histogram_at(a, b, bin_width_ps, span_ps, dom, true);
}

Histogram correlation_histogram(const StreamSet& merged, uint16_t ch_a, uint16_t ch_b,
                                int64_t bin_width_ps, int64_t span_ps) {
  return correlation_histogram(stream_or_throw(merged, ch_a, "a"),
                               stream_or_throw(merged, ch_b, "b"), bin_width_ps, span_ps);
}

double rms_jitter(const Histogram& h) {
  if (!h.has_pairs || h.total == 0) {
    throw std::invalid_argument("rms_jitter: empty histogram");
  }
  double mean = 0.0;
  for (size_t k = 0; k < h.counts.size(); ++k) {
    mean += static_cast<double>(h.counts[k]) * static_cast<double>(h.centers[k]);
  }
  mean /= static_cast<double>(h.total);
  double var = 0.0;
  for (size_t k = 0; k < h.counts.size(); ++k) {
    const double d = static_cast<double>(h.centers[k]) - mean;
    var += static_cast<double>(h.counts[k]) * d * d;
  }
  return std::sqrt(var / static_cast<double>(h.total));
}

int64_t find_peak_delay(const std::vector<int64_t>& a, const std::vector<int64_t>& b,
                        int64_t coarse_bin_ps, int64_t max_range_ps, size_t a_cap) {
  if (a.empty() || b.empty()) {
    throw std::invalid_argument("find_peak_delay: empty tag stream");
  }
  require_sorted(a, "find_peak_delay(a)");
  require_sorted(b, "find_peak_delay(b)");

  const size_t stride = std::max<size_t>(1, a.size() / std::max<size_t>(1, a_cap));
  const int64_t n_bins = 2 * (max_range_ps / coarse_bin_ps) + 1;
  std::vector<uint64_t> counts(static_cast<size_t>(n_bins), 0);

#pragma omp parallel
  {
    std::vector<uint64_t> local(counts.size(), 0);
#pragma omp for schedule(static) nowait
    for (size_t k = 0; k < a.size(); k += stride) {
      const int64_t t = a[k];
      auto it = std::lower_bound(b.begin(), b.end(), t - max_range_ps);
      for (; it != b.end() && *it <= t + max_range_ps; ++it) {
        const int64_t idx = (*it - t + max_range_ps) / coarse_bin_ps;
        if (idx >= 0 && idx < n_bins) ++local[static_cast<size_t>(idx)];
      }
    }
#pragma omp critical
    {
      for (size_t k = 0; k < local.size(); ++k) counts[k] += local[k];
    }
  }

  size_t best = 0;
  for (size_t k = 1; k < counts.size(); ++k) {
    if (counts[k] > counts[best]) best = k;
  }
  const int64_t coarse_center =
      (static_cast<int64_t>(best) - max_range_ps / coarse_bin_ps) * coarse_bin_ps;

  // Refine around the winning coarse bin with full statistics.
  const int64_t fine_bin = std::max<int64_t>(1, coarse_bin_ps / 8);
  const Histogram fine =
      histogram_at(a, b, fine_bin, 3 * coarse_bin_ps, coarse_center, true);
  return fine.has_pairs ? fine.peak_offset() : coarse_center;
}

std::vector<uint8_t> serialize(const StreamSet& set) {
  std::vector<std::pair<int64_t, uint16_t>> recs;
  size_t n = 0;
  for (const auto& s : set) n += s.tags.size();
  recs.reserve(n);
  for (const auto& s : set) {
    for (int64_t t : s.tags) recs.emplace_back(t, s.channel);
  }
  std::sort(recs.begin(), recs.end());

  std::vector<uint8_t> out;
  out.reserve(9 + 10 * recs.size());
  out.insert(out.end(), kMagic, kMagic + 8);
  out.push_back(kVersion);
  for (const auto& [t, ch] : recs) {
    uint8_t rec[10];
    rec[0] = static_cast<uint8_t>(ch & 0xff);
    rec[1] = static_cast<uint8_t>(ch >> 8);
    uint64_t u = static_cast<uint64_t>(t);
    for (int k = 0; k < 8; ++k) rec[2 + k] = static_cast<uint8_t>((u >> (8 * k)) & 0xff);
    out.insert(out.end(), rec, rec + 10);
  }
  return out;
}

StreamSet deserialize(const uint8_t* data, size_t size, uint8_t site) {
  if (size < 9 || std::memcmp(data, kMagic, 8) != 0) {
    throw std::runtime_error("time-tag data: bad magic at offset 0");
  }
  if (data[8] != kVersion) {
    throw std::runtime_error("time-tag data: unsupported version " + std::to_string(data[8]) +
                             " at offset 8");
  }
  if ((size - 9) % 10 != 0) {
    throw std::runtime_error("time-tag data: truncated record at offset " +
                             std::to_string(size - (size - 9) % 10));
  }
  std::map<uint16_t, std::vector<int64_t>> by_channel;
  for (size_t off = 9; off + 10 <= size; off += 10) {
    const uint16_t ch = static_cast<uint16_t>(data[off] | (data[off + 1] << 8));
    uint64_t u = 0;
    for (int k = 0; k < 8; ++k) u |= static_cast<uint64_t>(data[off + 2 + k]) << (8 * k);
    by_channel[ch].push_back(static_cast<int64_t>(u));
  }
  StreamSet set;
  for (auto& [ch, tags] : by_channel) {
    std::sort(tags.begin(), tags.end());
    set.push_back({ch, site, std::move(tags)});
  }
  return set;
}

StreamSet deserialize(const std::vector<uint8_t>& data, uint8_t site) {
  return deserialize(data.data(), data.size(), site);
}

void write_binary(const std::string& path, const StreamSet& set) {
  const std::vector<uint8_t> bytes = serialize(set);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

StreamSet read_binary(const std::string& path, uint8_t site) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot open " + path);
  const std::streamsize size = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> bytes(static_cast<size_t>(size));
  f.read(reinterpret_cast<char*>(bytes.data()), size);
  return deserialize(bytes, site);
}

void write_csv(const std::string& path, const StreamSet& set) {
  std::vector<std::pair<int64_t, uint16_t>> recs;
  for (const auto& s : set) {
    for (int64_t t : s.tags) recs.emplace_back(t, s.channel);
  }
  std::sort(recs.begin(), recs.end());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "channel,timestamp_ps\n";
  for (const auto& [t, ch] : recs) f << ch << ',' << t << '\n';
}

StreamSet read_csv(const std::string& path, uint8_t site) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(f, line) || line != "channel,timestamp_ps") {
    throw std::runtime_error(path + ": missing csv header");
  }
  std::map<uint16_t, std::vector<int64_t>> by_channel;
  size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const size_t comma = line.find(',');
    if (comma == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed record");
    }
    try {
      const unsigned long ch = std::stoul(line.substr(0, comma));
      const long long t = std::stoll(line.substr(comma + 1));
      if (ch > 0xffff) throw std::out_of_range("channel");
      by_channel[static_cast<uint16_t>(ch)].push_back(t);
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": malformed record");
    }
  }
  StreamSet set;
  for (auto& [ch, tags] : by_channel) {
    std::sort(tags.begin(), tags.end());
    set.push_back({ch, site, std::move(tags)});
  }
  return set;
}

}  // namespace qnet::tags
