#pragma once

#include <cstddef>
#include <vector>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace kwcp {
namespace par {

inline int max_threads()
{
#if defined(_OPENMP)
    return ::omp_get_max_threads();
#else
    return 1;
#endif
}

inline void set_threads(int n)
{
#if defined(_OPENMP)
    if (n > 0) ::omp_set_num_threads(n);
#else
    (void)n;
#endif
}

inline bool in_parallel()
{
#if defined(_OPENMP)
    return ::omp_in_parallel();
#else
    return false;
#endif
}

enum class Schedule { Static, Dynamic };

/// Runs f(i) for i in [begin, end). Falls back to a plain loop inside an
/// enclosing parallel region, so nested use never oversubscribes.
template <Schedule schedule = Schedule::Static, class F>
void parallel_for(std::ptrdiff_t begin, std::ptrdiff_t end, F&& f)
{
    if (end <= begin) return;
#if defined(_OPENMP)
    if (!in_parallel() && max_threads() > 1 && end - begin > 1) {
        if constexpr (schedule == Schedule::Static) {
#pragma omp parallel for schedule(static)
            for (std::ptrdiff_t i = begin; i < end; ++i) f(i);
        } else {
#pragma omp parallel for schedule(dynamic, 1)
            for (std::ptrdiff_t i = begin; i < end; ++i) f(i);
        }
        return;
    }
#endif
    for (std::ptrdiff_t i = begin; i < end; ++i) f(i);
}

/// Fixed block size of the deterministic reductions below. The partition
/// depends only on n, never on the thread count.
inline constexpr std::ptrdiff_t kReduceBlock = 2048;

/// Sum of term(i) over [0, n), reduced blockwise: each block is summed
/// left-to-right, then block totals are added in block order. The result
/// is bit-identical for any number of threads.
template <class F>
double deterministic_sum(std::ptrdiff_t n, F&& term)
{
    if (n <= 0) return 0.0;
    const std::ptrdiff_t blocks = (n + kReduceBlock - 1) / kReduceBlock;
    std::vector<double> partial(static_cast<std::size_t>(blocks), 0.0);
    parallel_for(0, blocks, [&](std::ptrdiff_t b) {
        const std::ptrdiff_t lo = b * kReduceBlock;
        const std::ptrdiff_t hi = lo + kReduceBlock < n ? lo + kReduceBlock : n;
        double acc = 0.0;
        for (std::ptrdiff_t i = lo; i < hi; ++i) acc += term(i);
        partial[static_cast<std::size_t>(b)] = acc;
    });
    double total = 0.0;
    for (double v : partial) total += v;
    return total;
}

} // namespace par
} // namespace kwcp
