#include <doctest.h>

#include <filesystem>
#include <random>
#include <unistd.h>

#include "qnet/timetags.hpp"

using namespace qnet::tags;

namespace {

std::vector<int64_t> poisson_stream(double rate_hz, double duration_s, std::mt19937_64& rng) {
  std::exponential_distribution<double> gap(rate_hz);
  std::vector<int64_t> out;
  double t = 0.0;
  while (true) {
    t += gap(rng);
    if (t >= duration_s) break;
    out.push_back(static_cast<int64_t>(t * 1e12));
  }
  return out;
}

std::filesystem::path temp_path(const char* stem) {
  return std::filesystem::temp_directory_path() / (std::string(stem) + std::to_string(::getpid()));
}

}  // namespace

TEST_SUITE_BEGIN("timetags");

TEST_CASE("estimate_offset recovers a constant shift exactly") {
  std::vector<int64_t> a{1000, 2000, 3000};
  std::vector<int64_t> b{1137, 2137, 3137};
  CHECK(estimate_offset(a, b) == 137);
  CHECK(estimate_offset(b, a) == -137);

  // property: any constant shift of a stream is recovered exactly
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto base = poisson_stream(5e4, 0.01, rng);
    if (base.empty()) continue;
    const int64_t shift = (trial - 5) * 12345;
    std::vector<int64_t> shifted;
    for (int64_t t : base) shifted.push_back(t + shift);
    CHECK(estimate_offset(base, shifted) == shift);
  }
  CHECK_THROWS_AS((void)estimate_offset({}, {1}), std::invalid_argument);
  CHECK_THROWS_AS((void)estimate_offset({1}, {}), std::invalid_argument);
}

TEST_CASE("estimate_offset matches the serial reference") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int64_t> jit(-40, 40);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = poisson_stream(2e5, 0.002, rng);
    if (a.empty()) continue;
    std::vector<int64_t> b;
    for (int64_t t : a) b.push_back(t + 5000 + jit(rng));
    std::sort(b.begin(), b.end());
    CHECK(estimate_offset(a, b) == reference::estimate_offset(a, b));
  }
}

TEST_CASE("extract_pps") {
  StreamSet set;
  set.push_back({4, 0, {10, 20, 30}});
  set.push_back({5, 0, {1'000'000'000'000, 2'000'000'000'000}});
  CHECK(extract_pps(set, 5) == std::vector<int64_t>{1'000'000'000'000, 2'000'000'000'000});
  CHECK(extract_pps(set, 9).empty());  // absent channel: explicit empty result
  set.push_back({6, 0, {}});
  CHECK(extract_pps(set, 6).empty());
}

TEST_CASE("merge_streams aligns, remaps and records the mapping") {
  StreamSet a, b;
  a.push_back({1, 0, {100, 300}});
  b.push_back({2, 1, {250, 450}});

  SUBCASE("disjoint channels interleave without a table") {
    const MergeResult m = merge_streams(a, b, 50);
    REQUIRE(m.streams.size() == 2);
    CHECK(m.channel_map.at(2) == 2);
    CHECK(find_stream(m.streams, 2)->tags == std::vector<int64_t>{200, 400});
    CHECK(find_stream(m.streams, 1)->tags == std::vector<int64_t>{100, 300});
  }

  SUBCASE("a previously applied shift is undone by merging with that offset") {
    std::mt19937_64 rng(7);
    auto base = poisson_stream(1e5, 0.005, rng);
    StreamSet sa, sb;
    sa.push_back({1, 0, base});
    std::vector<int64_t> shifted;
    for (int64_t t : base) shifted.push_back(t + 98765);
    sb.push_back({2, 1, shifted});
    const MergeResult m = merge_streams(sa, sb, 98765);
    CHECK(find_stream(m.streams, 2)->tags == base);
  }

  SUBCASE("collision without a table throws; with a table it remaps") {
    StreamSet c;
    c.push_back({1, 1, {500}});
    CHECK_THROWS_AS((void)merge_streams(a, c, 0), std::invalid_argument);
    const RemapTable t = make_disjoint_remap(a, c);
    const MergeResult m = merge_streams(a, c, 0, &t);
    CHECK(m.channel_map.at(1) == 2);  // next free id above both sets
    CHECK(find_stream(m.streams, 2)->tags == std::vector<int64_t>{500});
  }

  SUBCASE("counting is invariant under which side is shifted") {
    std::mt19937_64 rng(11);
    StreamSet sa, sb;
    sa.push_back({1, 0, poisson_stream(2e5, 0.01, rng)});
    sb.push_back({2, 1, poisson_stream(2e5, 0.01, rng)});
    const MergeResult m1 = merge_streams(sa, sb, 777);
    const MergeResult m2 = merge_streams(sb, sa, -777);
    const uint64_t c1 = count_coincidences(m1.streams, 1, 2, 2000, 0);
    const uint64_t c2 = count_coincidences(m2.streams, 2, 1, 2000, 0);
    CHECK(c1 == c2);
  }
}

TEST_CASE("count_coincidences: frozen cases") {
  // 0 pairs with 100, 1000 with 1100; 2000 finds nothing (inclusive +-150 ps)
  CHECK(count_coincidences({0, 1000, 2000}, {100, 1100, 5000}, 300, 0) == 2);
  // greedy consumption: the single idler is taken by the earliest signal
  CHECK(count_coincidences({0, 100}, {60}, 300, 0) == 1);
  // inclusive boundary: |d| == window/2 qualifies
  CHECK(count_coincidences({0}, {150}, 300, 0) == 1);
  CHECK(count_coincidences({0}, {151}, 300, 0) == 0);
  // odd window: 2*|d| <= window, so 175 is out for window 349, in for 351
  CHECK(count_coincidences({0}, {175}, 349, 0) == 0);
  CHECK(count_coincidences({0}, {175}, 351, 0) == 1);
  // delay recenters the window
  CHECK(count_coincidences({0}, {10'000}, 300, 10'050) == 1);
  CHECK(count_coincidences({}, {1, 2}, 300, 0) == 0);
  CHECK_THROWS_AS((void)count_coincidences({0}, {1}, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS((void)count_coincidences({3, 1}, {1}, 10, 0), std::invalid_argument);
}

TEST_CASE("count_coincidences equals the brute-force reference on random instances") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> rate(1e4, 5e5);
  std::uniform_int_distribution<int64_t> win(2, 5000);
  std::uniform_int_distribution<int64_t> del(-2000, 2000);
  for (int trial = 0; trial < 60; ++trial) {
    const auto s = poisson_stream(rate(rng), 0.004, rng);
    const auto i = poisson_stream(rate(rng), 0.004, rng);
    const int64_t w = win(rng), d = del(rng);
    CHECK(count_coincidences(s, i, w, d) == reference::count_coincidences(s, i, w, d));
  }
  // dense clusters stress the island decomposition
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<int64_t> cluster(0, 400);
    std::vector<int64_t> s, i;
    for (int k = 0; k < 300; ++k) s.push_back(cluster(rng));
    for (int k = 0; k < 300; ++k) i.push_back(cluster(rng));
    std::sort(s.begin(), s.end());
    std::sort(i.begin(), i.end());
    const int64_t w = win(rng);
    CHECK(count_coincidences(s, i, w, 0) == reference::count_coincidences(s, i, w, 0));
  }
}

TEST_CASE("coincidence counts grow monotonically with the window") {
  std::mt19937_64 rng(17);
  const auto s = poisson_stream(2e5, 0.01, rng);
  const auto i = poisson_stream(2e5, 0.01, rng);
  uint64_t prev = 0;
  for (int64_t w : {10, 50, 100, 500, 1000, 5000, 20000}) {
    const uint64_t c = count_coincidences(s, i, w, 0);
    CHECK(c >= prev);
    prev = c;
  }
}

TEST_CASE("estimate_accidentals: Poisson floor matches S1*S2*tau*T") {
  std::mt19937_64 rng(19);
  const double s1 = 3e5, s2 = 2.5e5, dur = 0.4;
  const int64_t window = 2000;
  const auto a = poisson_stream(s1, dur, rng);
  const auto b = poisson_stream(s2, dur, rng);
  const double expect = s1 * s2 * (static_cast<double>(window) * 1e-12) * dur;
  double acc = 0.0;
  const int n_off = 16;
  for (int k = 1; k <= n_off; ++k) {
    acc += static_cast<double>(estimate_accidentals(a, b, window, k * 40'000));
  }
  acc /= n_off;
  CHECK(acc == doctest::Approx(expect).epsilon(0.15));  // ~60 expected counts/window
  CHECK_THROWS_AS((void)estimate_accidentals(a, b, 2000, 1500), std::invalid_argument);
}

TEST_CASE("correlation_histogram: frozen and reference comparisons") {
  SUBCASE("identical periodic streams concentrate in the center bin at 0") {
    std::vector<int64_t> a;
    for (int64_t k = 0; k < 1000; ++k) a.push_back(100'000 * k);
    const Histogram h = correlation_histogram(a, a, 10, 1000);
    CHECK(h.has_pairs);
    CHECK(h.dominant == 0);
    CHECK(h.peak_offset() == 0);
    CHECK(h.counts[h.counts.size() / 2] == h.total);
  }

  SUBCASE("a +50 ps shift moves the peak to 50") {
    std::vector<int64_t> a, b;
    for (int64_t k = 0; k < 1000; ++k) {
      a.push_back(100'000 * k);
      b.push_back(100'000 * k + 50);
    }
    const Histogram h = correlation_histogram(a, b, 10, 1000);
    CHECK(h.peak_offset() == 50);
  }

  SUBCASE("the window recenters on the dominant offset wherever it lies") {
    const Histogram h = correlation_histogram({0}, {100'000'000}, 10, 1000);
    CHECK(h.has_pairs);
    CHECK(h.peak_offset() == 100'000'000);
  }

  SUBCASE("an empty input yields an empty histogram and rms_jitter rejects it") {
    const Histogram h = correlation_histogram({}, {100}, 10, 1000);
    CHECK_FALSE(h.has_pairs);
    CHECK_THROWS_AS((void)rms_jitter(h), std::invalid_argument);
  }

  SUBCASE("matches the serial reference on jittered streams") {
    std::mt19937_64 rng(23);
    std::normal_distribution<double> jit(0.0, 30.0);
    std::vector<int64_t> a, b;
    for (int64_t k = 0; k < 800; ++k) {
      a.push_back(1'000'000 * k);
      b.push_back(1'000'000 * k + 120 + static_cast<int64_t>(std::lround(jit(rng))));
    }
    std::sort(b.begin(), b.end());
    const Histogram h1 = correlation_histogram(a, b, 5, 600);
    const Histogram h2 = reference::correlation_histogram(a, b, 5, 600);
    CHECK(h1.dominant == h2.dominant);
    CHECK(h1.centers == h2.centers);
    CHECK(h1.counts == h2.counts);
  }
}

TEST_CASE("rms_jitter: two equal bins at +-x have rms x; one bin has rms 0") {
  Histogram h;
  h.bin_width = 10;
  h.centers = {-30, -20, -10, 0, 10, 20, 30};
  h.counts = {0, 500, 0, 0, 0, 500, 0};
  h.total = 1000;
  h.has_pairs = true;
  CHECK(rms_jitter(h) == doctest::Approx(20.0).epsilon(1e-12));
  h.counts = {0, 0, 0, 1000, 0, 0, 0};
  CHECK(rms_jitter(h) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("rms_jitter recovers the generating sigma of a correlated pair stream") {
  std::mt19937_64 rng(29);
  std::normal_distribution<double> jit(0.0, 12.19);
  std::vector<int64_t> a, b;
  for (int64_t k = 0; k < 50'000; ++k) {
    const int64_t t = 100'000 * k;  // 10 MHz-like grid
    a.push_back(t);
    b.push_back(t + 700 + static_cast<int64_t>(std::lround(jit(rng))));
  }
  std::sort(b.begin(), b.end());
  const Histogram h = correlation_histogram(a, b, 1, 400);
  CHECK(rms_jitter(h) == doctest::Approx(12.19).epsilon(0.05));
}

TEST_CASE("find_peak_delay locates a distant coincidence peak") {
  std::mt19937_64 rng(31);
  const auto bg_a = poisson_stream(2e5, 0.05, rng);
  const auto bg_b = poisson_stream(2e5, 0.05, rng);
  std::normal_distribution<double> jit(0.0, 80.0);
  std::vector<int64_t> a = bg_a, b = bg_b;
  const int64_t true_delay = 10'234'567;  // ~10 us, far beyond mean spacing
  const auto pairs = poisson_stream(2e4, 0.05, rng);
  for (int64_t t : pairs) {
    a.push_back(t);
    b.push_back(t + true_delay + static_cast<int64_t>(std::lround(jit(rng))));
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const int64_t found = find_peak_delay(a, b, 1000, 50'000'000);
  CHECK(std::abs(found - true_delay) < 300);
}

TEST_CASE("binary and csv round trips preserve channels and tags") {
  std::mt19937_64 rng(37);
  StreamSet set;
  set.push_back({1, 2, poisson_stream(5e4, 0.01, rng)});
  set.push_back({5, 2, {1'000'000'000'000, 2'000'000'000'000}});
  set.push_back({6, 2, poisson_stream(1e4, 0.01, rng)});

  const auto bin_path = temp_path("qnet_tags_bin_");
  const auto csv_path = temp_path("qnet_tags_csv_");
  write_binary(bin_path.string(), set);
  write_csv(csv_path.string(), set);
  const StreamSet rb = read_binary(bin_path.string(), 2);
  const StreamSet rc = read_csv(csv_path.string(), 2);

  auto same = [&](const StreamSet& got) {
    REQUIRE(got.size() == set.size());
    for (const auto& s : set) {
      const TimeTagStream* g = find_stream(got, s.channel);
      REQUIRE(g != nullptr);
      CHECK(g->tags == s.tags);
    }
  };
  same(rb);
  same(rc);

  // serialized bytes are identical across runs (deterministic ordering)
  CHECK(serialize(set) == serialize(rb));

  SUBCASE("corrupt inputs are rejected with an offset") {
    auto bytes = serialize(set);
    bytes[0] = 'X';
    CHECK_THROWS_WITH_AS((void)deserialize(bytes), doctest::Contains("offset 0"),
                         std::runtime_error);
    bytes[0] = 'Q';
    bytes.pop_back();
    CHECK_THROWS_WITH_AS((void)deserialize(bytes), doctest::Contains("truncated"),
                         std::runtime_error);
  }

  std::filesystem::remove(bin_path);
  std::filesystem::remove(csv_path);
}

TEST_SUITE_END();
