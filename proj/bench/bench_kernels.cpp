// Times the OpenMP tag kernels against their serial reference
// implementations on realistic workloads and checks that both sides agree
// exactly. Thread count follows OMP_NUM_THREADS.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "qnet/timetags.hpp"

using namespace qnet;

namespace {

double best_of_ms(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

void print_row(const char* name, size_t n, double serial_ms, double parallel_ms,
               bool agree) {
  std::printf("%-26s %9zu %12.2f %12.2f %8.2fx  %s\n", name, n, serial_ms,
              parallel_ms, serial_ms / parallel_ms, agree ? "yes" : "NO");
  std::fflush(stdout);
}

}  // namespace

int main() {
  std::printf("threads: %d\n", omp_get_max_threads());
  std::printf("%-26s %9s %12s %12s %9s  %s\n", "kernel", "n", "serial_ms",
              "parallel_ms", "speedup", "agree");

  std::mt19937_64 rng(99);
  bool all_agree = true;

  {  // greedy pairing on a dense correlated stream
    const size_t n = 2'000'000;
    const int64_t delay = 5'000'000;
    const int64_t window = 10'000;
    std::vector<int64_t> signal(n);
    int64_t t = 0;
    for (auto& v : signal) v = (t += 1 + int64_t(rng() % 800));
    std::vector<int64_t> idler;
    idler.reserve(n);
    std::normal_distribution<double> jitter(0.0, 80.0);
    for (int64_t s : signal) {
      if (rng() % 5 < 2) idler.push_back(s + delay + std::llround(jitter(rng)));
      if (rng() % 5 == 0) idler.push_back(int64_t(rng() % uint64_t(t)) + delay);
    }
    std::sort(idler.begin(), idler.end());

    uint64_t serial = 0, parallel = 0;
    const double s_ms = best_of_ms(3, [&] {
      serial = tags::reference::count_coincidences(signal, idler, window, delay);
    });
    const double p_ms = best_of_ms(3, [&] {
      parallel = tags::count_coincidences(signal, idler, window, delay);
    });
    const bool agree = serial == parallel;
    all_agree = all_agree && agree;
    print_row("count_coincidences", n, s_ms, p_ms, agree);
  }

  {  // median nearest-neighbour offset; the oracle scans all of b per tag,
     // so the workload stays at oracle-friendly size
    const size_t n = 30'000;
    std::vector<int64_t> a(n), b(n);
    int64_t t = 0;
    std::normal_distribution<double> jitter(0.0, 200.0);
    for (size_t k = 0; k < n; ++k) {
      a[k] = (t += 1 + int64_t(rng() % 2000));
      b[k] = a[k] + 137'000 + std::llround(jitter(rng));
    }
    std::sort(b.begin(), b.end());

    int64_t serial = 0, parallel = 0;
    const double s_ms =
        best_of_ms(2, [&] { serial = tags::reference::estimate_offset(a, b); });
    const double p_ms =
        best_of_ms(2, [&] { parallel = tags::estimate_offset(a, b); });
    const bool agree = serial == parallel;
    all_agree = all_agree && agree;
    print_row("estimate_offset", n, s_ms, p_ms, agree);
  }

  {  // pair-difference histogram; quadratic oracle, same size cap
    const size_t n = 15'000;
    std::vector<int64_t> a(n), b(n);
    int64_t t = 0;
    std::normal_distribution<double> jitter(0.0, 50.0);
    for (size_t k = 0; k < n; ++k) {
      a[k] = (t += 1 + int64_t(rng() % 1500));
      b[k] = a[k] + std::llround(jitter(rng));
    }
    std::sort(b.begin(), b.end());

    tags::Histogram serial, parallel;
    const double s_ms = best_of_ms(2, [&] {
      serial = tags::reference::correlation_histogram(a, b, 10, 4000);
    });
    const double p_ms = best_of_ms(2, [&] {
      parallel = tags::correlation_histogram(a, b, 10, 4000);
    });
    const bool agree = serial.counts == parallel.counts &&
                       serial.centers == parallel.centers &&
                       serial.total == parallel.total;
    all_agree = all_agree && agree;
    print_row("correlation_histogram", n, s_ms, p_ms, agree);
  }

  if (!all_agree) {
    std::printf("kernel disagreement detected\n");
    return 1;
  }
  return 0;
}
