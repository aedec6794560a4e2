#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "stocon/process.hpp"

#include "oracles.hpp"

using namespace stocon;
using Catch::Approx;

TEST_CASE("uniform moments in closed form", "[process]") {
    ProcessModel m = IidScalarUniform{1.0, 2.0};
    auto mo = moments(m);
    REQUIRE(mo.has_value());
    REQUIRE(mo->mean == Approx(1.5));
    REQUIRE(mo->variance() == Approx(1.0 / 12.0).margin(1e-15));
    REQUIRE(mo->second_moment == Approx(7.0 / 3.0).margin(1e-15));
}

TEST_CASE("uniform empirical statistics match the closed form", "[process]") {
    ProcessModel m = IidScalarUniform{1.0, 2.0};
    ProcessPath p = sample_path(m, 0, 200000, 2024);
    double s1 = 0.0, s2 = 0.0;
    double lo = 10.0, hi = -10.0;
    for (double v : p.values) {
        s1 += v;
        s2 += v * v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double n = double(p.length());
    REQUIRE(s1 / n == Approx(1.5).margin(3e-3));
    REQUIRE(s2 / n - (s1 / n) * (s1 / n) == Approx(1.0 / 12.0).margin(3e-3));
    REQUIRE(lo >= 1.0);
    REQUIRE(hi < 2.0);
}

TEST_CASE("two-point sampler with declared moments", "[process]") {
    IidSampler s;
    s.sample = [](SplitStream& rng) { return rng.next_unit() < 0.5 ? 0.0 : 2.0; };
    s.moments = Moments{1.0, 2.0};
    ProcessModel m = s;

    auto mo = moments(m);
    REQUIRE(mo.has_value());
    REQUIRE(mo->mean == Approx(1.0));
    REQUIRE(mo->second_moment == Approx(2.0));
    REQUIRE(mo->variance() == Approx(1.0));

    ProcessPath p = sample_path(m, 0, 100000, 7);
    double s1 = 0.0, s2 = 0.0;
    for (double v : p.values) {
        REQUIRE((v == 0.0 || v == 2.0));
        s1 += v;
        s2 += v * v;
    }
    REQUIRE(s1 / 100000.0 == Approx(1.0).margin(0.02));
    REQUIRE(s2 / 100000.0 == Approx(2.0).margin(0.04));
}

TEST_CASE("moments unavailable without a declaration", "[process]") {
    IidSampler s;
    s.sample = [](SplitStream& rng) { return rng.next_unit(); };
    REQUIRE_FALSE(moments(ProcessModel(s)).has_value());
    REQUIRE_FALSE(moments(ProcessModel(IndependentFamily{
                      [](int, SplitStream& rng) { return rng.next_unit(); }}))
                      .has_value());
}

TEST_CASE("paths are reproducible and streams are distinct", "[process]") {
    ProcessModel m = IidScalarUniform{0.0, 1.0};
    ProcessPath a = sample_path(m, 3, 64, 99, 0);
    ProcessPath b = sample_path(m, 3, 64, 99, 0);
    ProcessPath c = sample_path(m, 3, 64, 99, 1);
    ProcessPath d = sample_path(m, 3, 64, 100, 0);
    REQUIRE(a.values == b.values);
    REQUIRE(a.values != c.values);
    REQUIRE(a.values != d.values);
    REQUIRE(a.k0 == 3);
}

TEST_CASE("forked streams decorrelate from the parent", "[process]") {
    SplitStream parent(5, 0);
    SplitStream childa = parent.fork(0);
    SplitStream childb = parent.fork(1);
    // Crude independence check: matching low bits about half the time.
    int agree = 0;
    for (int i = 0; i < 4096; ++i)
        if ((childa.next_u64() & 1ull) == (childb.next_u64() & 1ull)) ++agree;
    REQUIRE(agree > 1800);
    REQUIRE(agree < 2300);
}

TEST_CASE("degenerate uniform is rejected", "[process]") {
    REQUIRE_THROWS_AS(sample_path(ProcessModel(IidScalarUniform{1.0, 1.0}), 0, 4, 1),
                      ShapeError);
    REQUIRE_THROWS_AS(sample_path(ProcessModel(IidScalarUniform{0.0, 1.0}), 0, 0, 1),
                      ShapeError);
}

TEST_CASE("independent family sees the step index", "[process]") {
    IndependentFamily f;
    f.sample = [](int k, SplitStream& rng) { return double(k) + 0.001 * rng.next_unit(); };
    ProcessPath p = sample_path(ProcessModel(f), 10, 5, 1);
    for (std::size_t i = 0; i < 5; ++i)
        REQUIRE(std::floor(p.values[i]) == Approx(10.0 + double(i)));
}

TEST_CASE("identity chain holds its mode", "[process]") {
    FiniteMarkov fm = make_finite_markov(Mat::identity(3));
    ProcessPath p = sample_path(ProcessModel(fm), 0, 50, 123, 0, 2);
    REQUIRE(p.modal);
    for (std::size_t i = 0; i < p.length(); ++i) REQUIRE(p.mode(i) == 2);
}

TEST_CASE("markov one-step frequencies match the transition column", "[process]") {
    Mat t{{0.1, 0.5, 0.3}, {0.8, 0.5, 0.1}, {0.1, 0.0, 0.6}};
    FiniteMarkov fm = make_finite_markov(t);
    std::map<int, int> counts;
    const int n = 1000000;
    for (int r = 0; r < n; ++r) {
        ProcessPath p = sample_path(ProcessModel(fm), 0, 1, 2718, std::uint64_t(r), 3);
        counts[p.mode(0)]++;
    }
    REQUIRE(double(counts[1]) / n == Approx(0.3).margin(2e-3));
    REQUIRE(double(counts[2]) / n == Approx(0.1).margin(2e-3));
    REQUIRE(double(counts[3]) / n == Approx(0.6).margin(2e-3));
}

TEST_CASE("markov initial mode is validated", "[process]") {
    FiniteMarkov fm = make_finite_markov(Mat::identity(2));
    REQUIRE_THROWS_AS(sample_path(ProcessModel(fm), 0, 4, 1), ModeOutOfRange);
    REQUIRE_THROWS_AS(sample_path(ProcessModel(fm), 0, 4, 1, 0, 3), ModeOutOfRange);
    REQUIRE_THROWS_AS(sample_path(ProcessModel(fm), 0, 4, 1, 0, 0), ModeOutOfRange);
}

TEST_CASE("non-column-stochastic matrices are rejected", "[process]") {
    Mat bad{{0.5, 0.2}, {0.4, 0.8}};  // first column sums to 0.9
    REQUIRE_THROWS_AS(make_finite_markov(bad), InvalidMatrix);
    Mat neg{{1.1, 0.0}, {-0.1, 1.0}};
    REQUIRE_THROWS_AS(make_finite_markov(neg), InvalidMatrix);
}

TEST_CASE("time-varying schedules are validated per step", "[process]") {
    FiniteMarkov fm = make_finite_markov(Mat::identity(2), [](int k) {
        if (k >= 3) return Mat{{0.5, 0.2}, {0.4, 0.8}};  // breaks at k = 3
        return Mat{{0.5, 0.5}, {0.5, 0.5}};
    });
    REQUIRE_NOTHROW(sample_path(ProcessModel(fm), 0, 3, 1, 0, 1));
    REQUIRE_THROWS_AS(sample_path(ProcessModel(fm), 0, 6, 1, 0, 1), InvalidMatrix);
}

TEST_CASE("finite-mode conditional expectation is an exact sum", "[process]") {
    Mat t{{0.1, 0.5, 0.3}, {0.8, 0.5, 0.1}, {0.1, 0.0, 0.6}};
    ProcessModel m = make_finite_markov(t);
    auto g = [](const NoiseSample& s) {
        return SymMatrix::identity(2, double(noise_mode(s)));
    };
    // Conditioned on mode 3 the answer is (0.3*1 + 0.1*2 + 0.6*3) I.
    SymMatrix e = conditional_expectation_mc(m, 5, 3, g, 1, 42);
    REQUIRE(e(0, 0) == Approx(0.3 + 0.2 + 1.8).margin(1e-15));
    REQUIRE(e(1, 1) == Approx(2.3).margin(1e-15));
    REQUIRE(e(0, 1) == Approx(0.0).margin(1e-15));

    // Exactness: independent of the sample budget and seed.
    SymMatrix e2 = conditional_expectation_mc(m, 5, 3, g, 5000, 7);
    REQUIRE(e2(0, 0) == e(0, 0));

    REQUIRE_THROWS_AS(conditional_expectation_mc(m, 5, std::nullopt, g, 1, 1),
                      ModeOutOfRange);
}

TEST_CASE("continuous conditional expectation converges", "[process]") {
    ProcessModel m = IidScalarUniform{1.0, 2.0};
    auto g = [](const NoiseSample& s) {
        return SymMatrix::identity(1, noise_value(s));
    };
    SymMatrix e = conditional_expectation_mc(m, 0, std::nullopt, g, 200000, 11);
    REQUIRE(e(0, 0) == Approx(1.5).margin(3e-3));
}

TEST_CASE("non-finite g draws are flagged", "[process]") {
    ProcessModel m = IidScalarUniform{0.0, 1.0};
    auto g = [](const NoiseSample&) {
        return SymMatrix{{std::nan(""), 0.0}, {0.0, 1.0}};
    };
    REQUIRE_THROWS_AS(conditional_expectation_mc(m, 0, std::nullopt, g, 10, 1),
                      NonFiniteSample);

    IidSampler bad;
    bad.sample = [](SplitStream&) { return std::nan(""); };
    REQUIRE_THROWS_AS(sample_path(ProcessModel(bad), 0, 1, 1), NonFiniteSample);
}

TEST_CASE("path accessors enforce the value kind", "[process]") {
    ProcessPath cont = sample_path(ProcessModel(IidScalarUniform{0.0, 1.0}), 0, 3, 1);
    REQUIRE_THROWS_AS(cont.mode(0), ModeMismatch);
    REQUIRE_NOTHROW(cont.value(0));

    FiniteMarkov fm = make_finite_markov(Mat::identity(2));
    ProcessPath modal = sample_path(ProcessModel(fm), 0, 3, 1, 0, 1);
    REQUIRE_THROWS_AS(modal.value(0), ModeMismatch);
    REQUIRE(modal.mode(0) == 1);
}
