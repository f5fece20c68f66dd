#include <doctest.h>

#include <cmath>

#include "dglm/rng.hpp"
#include "dglm/schedule.hpp"

using namespace dglm;

TEST_CASE("variance preservation across the time range") {
    Schedule s;
    for (double t : {0.0, 1e-4, 0.1, 0.3, 0.5, 0.7, 0.9, 0.9999, 1.0}) {
        auto [a, sig] = s.alpha_sigma(t);
        CHECK(a * a + sig * sig == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("cosine log-SNR is monotone decreasing and centered") {
    Schedule s;
    CHECK(s.lambda_of(0.5) == doctest::Approx(0.0).epsilon(1e-12));
    double prev = s.lambda_of(0.01);
    for (double t = 0.02; t < 1.0; t += 0.01) {
        double cur = s.lambda_of(t);
        CHECK(cur <= prev);
        prev = cur;
    }
    CHECK(s.lambda_of(0.0) == 15.0);   // clamped
    CHECK(s.lambda_of(1.0) == -15.0);  // clamped
}

TEST_CASE("scaled cosine shifts log-SNR by -2 ln(shift)") {
    Schedule base;
    Schedule shifted;
    shifted.kind = ScheduleKind::scaled_cosine;
    shifted.shift = 3.0;
    for (double t : {0.2, 0.4, 0.5, 0.6, 0.8}) {
        double expect = base.lambda_of(t) - 2.0 * std::log(3.0);
        CHECK(shifted.lambda_of(t) == doctest::Approx(expect).epsilon(1e-12));
    }
    // reciprocal shift moves the other way
    Schedule down = shifted;
    down.shift = 1.0 / 3.0;
    CHECK(down.lambda_of(0.5) == doctest::Approx(2.0 * std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("t_of_lambda inverts lambda_of on the interior") {
    for (auto kind : {ScheduleKind::cosine, ScheduleKind::scaled_cosine}) {
        Schedule s;
        s.kind = kind;
        s.shift = 2.0;
        for (double t = 0.05; t < 1.0; t += 0.05) {
            double lam = s.lambda_of(t);
            if (lam <= -15.0 || lam >= 15.0) continue;
            CHECK(s.t_of_lambda(lam) == doctest::Approx(t).epsilon(1e-9));
        }
    }
}

TEST_CASE("schedule validation") {
    Schedule s;
    s.shift = 0.0;
    CHECK_THROWS(s.validate());
    s.shift = 1.0;
    s.lambda_min = 2.0;
    s.lambda_max = 1.0;
    CHECK_THROWS(s.validate());
    CHECK_THROWS(Schedule::kind_from_string("sigmoid"));
    CHECK_THROWS(Schedule().lambda_of(-0.1));
    CHECK_THROWS(Schedule().lambda_of(1.1));
}

TEST_CASE("adaptive sampler starts uniform and stays normalized") {
    AdaptiveSamplerState st(-15.0, 15.0, 64);
    auto p = st.bin_probs();
    REQUIRE(p.size() == 64);
    double total = 0.0;
    for (double x : p) {
        CHECK(x == doctest::Approx(1.0 / 64).epsilon(1e-12));
        total += x;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("adaptive sampler importance weights are unbiased against uniform") {
    AdaptiveSamplerState st(-15.0, 15.0, 64);
    // skew the distribution heavily
    for (int i = 0; i < 200; ++i) st.update(-12.0, 25.0);
    auto p = st.bin_probs();
    // sum over bins of p_b * weight_b = 1 exactly
    double mass = 0.0;
    for (int b = 0; b < 64; ++b) mass += p[b] * (1.0 / (64.0 * p[b]));
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));

    // empirical: importance-weighted mean of f(lambda)=lambda matches uniform
    Rng rng(42);
    double acc = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        auto d = st.sample(rng);
        CHECK(d.lambda >= -15.0);
        CHECK(d.lambda <= 15.0);
        acc += d.importance_weight * d.lambda;
    }
    CHECK(acc / n == doctest::Approx(0.0).epsilon(0.2));
}

TEST_CASE("adaptive sampler EMA shifts mass toward lossy bins") {
    AdaptiveSamplerState st(-15.0, 15.0, 64, 0.9);
    int hot = st.bin_of(5.0);
    for (int i = 0; i < 100; ++i) st.update(5.0, 10.0);
    auto p = st.bin_probs();
    for (int b = 0; b < 64; ++b)
        if (b != hot) CHECK(p[hot] > p[b]);
    CHECK(st.bin_of(-15.0) == 0);
    CHECK(st.bin_of(15.0) == 63);
    CHECK_THROWS(st.update(0.0, -1.0));
}

TEST_CASE("adaptive sampler floor keeps dead bins reachable") {
    AdaptiveSamplerState st(-2.0, 2.0, 4, 0.5);
    for (int i = 0; i < 200; ++i) st.update(-1.9, 0.0);  // drive one bin to ~0
    auto p = st.bin_probs();
    for (double x : p) CHECK(x > 0.0);
}
