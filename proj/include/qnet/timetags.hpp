#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

// Time-tag stream processing. All tag arithmetic is exact int64 picoseconds;
// tags within a stream are sorted ascending.

namespace qnet::tags {

inline constexpr int64_t kDefaultWindowPs = 500;

// Channel numbering every TTU uses for its own streams. Both sites emit the
// same ids; merging across sites relies on a remap table.
inline constexpr uint16_t kPhotonChannel = 1;
inline constexpr uint16_t kPpsChannel = 5;
inline constexpr uint16_t kRefChannel = 6;

struct TimeTagStream {
  uint16_t channel = 0;
  uint8_t site = 0;  // contextual; not persisted by the file formats
  std::vector<int64_t> tags;
};

using StreamSet = std::vector<TimeTagStream>;

// Remap applied to the b side of a merge, old channel id -> new channel id.
using RemapTable = std::map<uint16_t, uint16_t>;

struct MergeResult {
  StreamSet streams;
  RemapTable channel_map;  // effective b-side mapping, identity entries included
};

const TimeTagStream* find_stream(const StreamSet& set, uint16_t channel);

// Tags of the PPS channel; empty result when the channel is absent or empty.
std::vector<int64_t> extract_pps(const StreamSet& set, uint16_t pps_channel);

// Median (lower middle for even counts) of nearest-neighbour differences
// b_nearest - a over all tags of a. Throws if either input is empty.
int64_t estimate_offset(const std::vector<int64_t>& a, const std::vector<int64_t>& b);

// Shifts every b tag by -offset and unions the two sets. Channel collisions
// between the sides are an error unless a remap table resolves them.
MergeResult merge_streams(const StreamSet& a, const StreamSet& b, int64_t offset,
                          const RemapTable* remap = nullptr);

// Remap table sending colliding b channels to fresh ids above both sets.
RemapTable make_disjoint_remap(const StreamSet& a, const StreamSet& b);

// Signal tags with at least one idler tag in [s + delay - window/2, s + delay + window/2],
// each idler consumed at most once, earliest first (greedy one-to-one pairing).
// The window bound is inclusive: a pair qualifies when 2*|i - s - delay| <= window.
uint64_t count_coincidences(const std::vector<int64_t>& signal, const std::vector<int64_t>& idler,
                            int64_t window_ps, int64_t delay_ps);
uint64_t count_coincidences(const StreamSet& merged, uint16_t signal_ch, uint16_t idler_ch,
                            int64_t window_ps, int64_t delay_ps);

// Coincidences in a deliberately wrong (delayed) window; requires
// |delay_offset| > window.
uint64_t estimate_accidentals(const std::vector<int64_t>& signal,
                              const std::vector<int64_t>& idler, int64_t window_ps,
                              int64_t delay_offset_ps);
uint64_t estimate_accidentals(const StreamSet& merged, uint16_t signal_ch, uint16_t idler_ch,
                              int64_t window_ps, int64_t delay_offset_ps);

struct Histogram {
  int64_t bin_width = 0;
  int64_t dominant = 0;  // offset the histogram is centered on
  std::vector<int64_t> centers;
  std::vector<uint64_t> counts;
  uint64_t total = 0;
  bool has_pairs = false;

  int64_t peak_offset() const;  // center of the highest bin
};

// Histogram of (t_b - t_a) for all pairs within +-span/2 of the dominant
// offset, which is estimated from nearest-neighbour differences. Bin count is
// odd so the center bin sits exactly on the dominant offset.
Histogram correlation_histogram(const std::vector<int64_t>& a, const std::vector<int64_t>& b,
                                int64_t bin_width_ps, int64_t span_ps);
Histogram correlation_histogram(const StreamSet& merged, uint16_t ch_a, uint16_t ch_b,
                                int64_t bin_width_ps, int64_t span_ps);

// Count-weighted RMS of bin centers about the weighted mean. Throws on an
// empty histogram.
double rms_jitter(const Histogram& h);

// Wide-range coincidence-peak search: coarse difference histogram over
// [-max_range, +max_range] using at most a_cap subsampled a tags, refined to
// coarse_bin/8 around the winning bin. Used to locate propagation-delay peaks
// far outside the nearest-neighbour regime.
int64_t find_peak_delay(const std::vector<int64_t>& a, const std::vector<int64_t>& b,
                        int64_t coarse_bin_ps, int64_t max_range_ps, size_t a_cap = 20000);

// Binary format: 8-byte magic "QNETTAGS", one version byte (1), then records
// of {uint16 channel, int64 timestamp_ps}, both little-endian, sorted by
// (timestamp, channel). CSV format: header "channel,timestamp_ps" and one
// record per line, same order, lossless.
std::vector<uint8_t> serialize(const StreamSet& set);
StreamSet deserialize(const uint8_t* data, size_t size, uint8_t site = 0);
StreamSet deserialize(const std::vector<uint8_t>& data, uint8_t site = 0);
void write_binary(const std::string& path, const StreamSet& set);
StreamSet read_binary(const std::string& path, uint8_t site = 0);
void write_csv(const std::string& path, const StreamSet& set);
StreamSet read_csv(const std::string& path, uint8_t site = 0);

}  // namespace qnet::tags

// Serial reference implementations. Kept deliberately independent of the
// parallel kernels above: they are the oracles the tests compare against and
// the baseline the benchmark times.
namespace qnet::tags::reference {

uint64_t count_coincidences(const std::vector<int64_t>& signal, const std::vector<int64_t>& idler,
                            int64_t window_ps, int64_t delay_ps);
int64_t estimate_offset(const std::vector<int64_t>& a, const std::vector<int64_t>& b);
Histogram correlation_histogram(const std::vector<int64_t>& a, const std::vector<int64_t>& b,
                                int64_t bin_width_ps, int64_t span_ps);

}  // namespace qnet::tags::reference
