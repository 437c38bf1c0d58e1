#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include <metroems/rng.hpp>

using namespace metroems;

TEST_CASE("identical keys give identical streams") {
    RngStream a(42, rng_domain::optimization_scenarios, 7);
    RngStream b(42, rng_domain::optimization_scenarios, 7);
    for (int i = 0; i < 64; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("streams are keyed on all three components") {
    const auto first = [](std::uint64_t s, std::uint64_t d, std::uint64_t i) {
        return RngStream(s, d, i).next_u64();
    };
    const std::uint64_t base = first(42, rng_domain::kmeans, 3);
    CHECK(first(43, rng_domain::kmeans, 3) != base);
    CHECK(first(42, rng_domain::assessment_scenarios, 3) != base);
    CHECK(first(42, rng_domain::kmeans, 4) != base);
}

TEST_CASE("nearby keys decorrelate") {
    // consecutive scenario indices should not produce aligned sequences
    RngStream a(42, rng_domain::optimization_scenarios, 100);
    RngStream b(42, rng_domain::optimization_scenarios, 101);
    int agree = 0;
    for (int i = 0; i < 64; ++i)
        if ((a.next_u64() & 1u) == (b.next_u64() & 1u)) agree++;
    CHECK(agree > 16);
    CHECK(agree < 48);
}

TEST_CASE("uniform stays in the half-open unit interval with the right moments") {
    RngStream r(7, 1, 1);
    const int n = 200000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = r.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
        sum2 += u * u;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(mean == Catch::Approx(0.5).margin(0.005));
    CHECK(var == Catch::Approx(1.0 / 12.0).margin(0.002));
}

TEST_CASE("ranged uniform respects its bounds") {
    RngStream r(9, 2, 5);
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform(-3.0, 2.0);
        REQUIRE(u >= -3.0);
        REQUIRE(u < 2.0);
    }
}

TEST_CASE("bernoulli frequency approaches p") {
    RngStream r(5, 4, 4);
    int hits = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) hits += r.bernoulli(0.3) ? 1 : 0;
    CHECK(static_cast<double>(hits) / n == Catch::Approx(0.3).margin(0.01));
    for (int i = 0; i < 100; ++i) CHECK_FALSE(r.bernoulli(0.0));
    for (int i = 0; i < 100; ++i) CHECK(r.bernoulli(1.0));
}

TEST_CASE("normal has standard moments and symmetric tails") {
    RngStream r(11, 3, 0);
    const int n = 200000;
    double sum = 0.0, sum2 = 0.0;
    int beyond3 = 0;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        sum += z;
        sum2 += z * z;
        if (std::abs(z) > 3.0) beyond3++;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(mean == Catch::Approx(0.0).margin(0.01));
    CHECK(var == Catch::Approx(1.0).margin(0.02));
    // P(|Z|>3) = 0.27%; allow a factor-of-two band
    CHECK(beyond3 > n * 0.0013);
    CHECK(beyond3 < n * 0.0055);
}

TEST_CASE("inverse normal CDF hits textbook quantiles") {
    CHECK(RngStream::inverse_normal_cdf(0.5) == Catch::Approx(0.0).margin(1e-8));
    CHECK(RngStream::inverse_normal_cdf(0.975) == Catch::Approx(1.959964).margin(1e-5));
    CHECK(RngStream::inverse_normal_cdf(0.025) == Catch::Approx(-1.959964).margin(1e-5));
    CHECK(RngStream::inverse_normal_cdf(0.841344746) == Catch::Approx(1.0).margin(1e-6));
    CHECK(RngStream::inverse_normal_cdf(0.0013498980) == Catch::Approx(-3.0).margin(1e-5));
}

TEST_CASE("affine normal and lognormal transforms") {
    RngStream a(13, 6, 2), b(13, 6, 2);
    for (int i = 0; i < 100; ++i) {
        const double z = a.normal();
        CHECK(b.normal(2.0, 0.5) == Catch::Approx(2.0 + 0.5 * z).margin(1e-12));
    }
    RngStream c(13, 6, 2), d(13, 6, 2);
    for (int i = 0; i < 100; ++i)
        CHECK(d.lognormal(1.0, 0.3) == Catch::Approx(std::exp(1.0 + 0.3 * c.normal())).epsilon(1e-12));
}

TEST_CASE("pick covers the range and rejects empty") {
    RngStream r(3, 8, 8);
    std::set<std::size_t> seen;
    for (int i = 0; i < 5000; ++i) {
        const std::size_t k = r.pick(7);
        REQUIRE(k < 7);
        seen.insert(k);
    }
    CHECK(seen.size() == 7);
    CHECK_THROWS_AS(r.pick(0), std::invalid_argument);
}

TEST_CASE("domain constants are distinct") {
    const std::set<std::uint64_t> doms{
        rng_domain::optimization_scenarios, rng_domain::assessment_scenarios,
        rng_domain::kmeans, rng_domain::consistency_draws, rng_domain::synthetic_ar};
    CHECK(doms.size() == 5);
}
