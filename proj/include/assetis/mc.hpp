#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "assetis/types.hpp"

namespace assetis {

enum class Method { IS, MC, DLM };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::IS: return "is";
        case Method::MC: return "mc";
        default: return "dlm";
    }
}

// Tail-probability estimate with variance accounting.
struct Estimate {
    double p_hat = 0.0;
    double se = 0.0;
    double var_delta = 0.0;  // sample variance of the per-simulation weights
    std::uint64_t K = 0;
    std::uint64_t hit_count = 0;
    Method method = Method::IS;
    bool zero_hits = false;
};

struct EfficiencyReport {
    double K_is = 0.0;       // simulations for 10% relative SE under IS
    double K_mc = 0.0;       // 100 / p_hat
    double efficiency = 0.0; // K_mc / K_is
};

inline EfficiencyReport efficiency(const Estimate& e) {
    if (!(e.p_hat > 0.0) || !(e.var_delta > 0.0))
        throw ConfigError("efficiency is undefined for a zero-probability or zero-variance estimate");
    EfficiencyReport r;
    r.K_is = e.var_delta / (0.1 * e.p_hat * 0.1 * e.p_hat);
    r.K_mc = 100.0 / e.p_hat;
    r.efficiency = r.K_mc / r.K_is;
    return r;
}

// Welford accumulator in extended precision; merges are associative so
// parallel partial sums combine deterministically.
struct Accumulator {
    std::uint64_t n = 0;
    long double mean = 0.0L;
    long double m2 = 0.0L;
    std::uint64_t hits = 0;

    void add(double x) {
        ++n;
        long double d = static_cast<long double>(x) - mean;
        mean += d / static_cast<long double>(n);
        m2 += d * (static_cast<long double>(x) - mean);
        if (x != 0.0) ++hits;
    }

    void merge(const Accumulator& o) {
        if (o.n == 0) return;
        if (n == 0) {
            *this = o;
            return;
        }
        long double d = o.mean - mean;
        std::uint64_t tot = n + o.n;
        mean += d * static_cast<long double>(o.n) / static_cast<long double>(tot);
        m2 += o.m2 + d * d * static_cast<long double>(n) * static_cast<long double>(o.n) /
                         static_cast<long double>(tot);
        n = tot;
        hits += o.hits;
    }

    Estimate finish(Method method) const {
        if (n < 2) throw ConfigError("simulation count K must be at least 2");
        Estimate e;
        e.K = n;
        e.method = method;
        e.hit_count = hits;
        e.p_hat = static_cast<double>(mean);
        e.var_delta = static_cast<double>(m2 / static_cast<long double>(n - 1));
        if (hits == 0) {
            e.p_hat = 0.0;
            e.var_delta = 0.0;
            e.se = 0.0;
            e.zero_hits = true;
        } else if (method == Method::MC) {
            // binomial SE for indicator deltas
            e.se = std::sqrt(e.p_hat * (1.0 - e.p_hat) / static_cast<double>(n));
        } else {
            e.se = std::sqrt(e.var_delta / static_cast<double>(n));
        }
        return e;
    }
};

// Pairwise (binary-tree) merge in fixed block order, independent of how the
// blocks were produced.
inline Accumulator merge_pairwise(std::vector<Accumulator> acc) {
    if (acc.empty()) return {};
    while (acc.size() > 1) {
        std::size_t half = (acc.size() + 1) / 2;
        for (std::size_t i = 0; i + half < acc.size(); ++i) acc[i].merge(acc[i + half]);
        acc.resize(half);
    }
    return acc[0];
}

template <class Range>
Estimate accumulate(const Range& deltas, Method method = Method::IS) {
    Accumulator a;
    for (double d : deltas) a.add(d);
    return a.finish(method);
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Independent reproducible stream derived from (master_seed, stream_id).
inline std::mt19937_64 rng_stream(std::uint64_t master_seed, std::uint64_t stream_id) {
    std::uint64_t s = master_seed ^ (stream_id * 0xd1342543de82ef95ULL + 0x632be59bd9b4e019ULL);
    std::uint64_t a = splitmix64(s);
    std::uint64_t b = splitmix64(s);
    std::uint64_t c = splitmix64(s);
    std::uint64_t d = splitmix64(s);
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                      static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32),
                      static_cast<std::uint32_t>(d), static_cast<std::uint32_t>(d >> 32)};
    return std::mt19937_64(seq);
}

inline constexpr std::uint64_t kBlockSize = 4096;

// Runs K simulations split into fixed blocks, each driven by its own RNG
// stream, and merges block accumulators pairwise. Results are bit-identical
// for a given seed regardless of the worker count. `body` is called as
// body(rng, accs) once per simulation and must push one delta into each of
// the `n_outputs` accumulators.
template <class Body>
std::vector<Accumulator> run_blocks(std::uint64_t K, std::uint64_t seed, int threads,
                                    std::size_t n_outputs, Body body) {
    if (K < 2) throw ConfigError("simulation count K must be at least 2");
    const std::uint64_t n_blocks = (K + kBlockSize - 1) / kBlockSize;
    std::vector<std::vector<Accumulator>> block_acc(n_blocks,
                                                    std::vector<Accumulator>(n_outputs));
    auto run_block = [&](std::uint64_t blk) {
        std::mt19937_64 rng = rng_stream(seed, blk);
        const std::uint64_t lo = blk * kBlockSize;
        const std::uint64_t hi = std::min(K, lo + kBlockSize);
        for (std::uint64_t k = lo; k < hi; ++k) body(rng, block_acc[blk]);
    };
    if (threads <= 1 || n_blocks == 1) {
        for (std::uint64_t blk = 0; blk < n_blocks; ++blk) run_block(blk);
    } else {
        std::atomic<std::uint64_t> next{0};
        auto worker = [&] {
            for (;;) {
                std::uint64_t blk = next.fetch_add(1);
                if (blk >= n_blocks) break;
                run_block(blk);
            }
        };
        std::vector<std::thread> pool;
        int nt = std::min<std::uint64_t>(threads, n_blocks);
        pool.reserve(static_cast<std::size_t>(nt));
        for (int t = 0; t < nt; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    // transpose and merge per output
    std::vector<Accumulator> out(n_outputs);
    std::vector<Accumulator> col(n_blocks);
    for (std::size_t j = 0; j < n_outputs; ++j) {
        for (std::uint64_t blk = 0; blk < n_blocks; ++blk) col[blk] = block_acc[blk][j];
        out[j] = merge_pairwise(col);
    }
    return out;
}

}  // namespace assetis
