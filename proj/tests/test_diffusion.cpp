#include <doctest.h>

#include <cmath>

#include "dglm/diffusion.hpp"
#include "dglm/rng.hpp"

using namespace dglm;

TEST_CASE("parameterization round-trips close to machine precision") {
    Rng rng(7);
    Schedule sched;
    for (int trial = 0; trial < 200; ++trial) {
        double t = 0.05 + 0.9 * rng.uniform();
        Eigen::VectorXd x = rng.normal_vec(8);
        Eigen::VectorXd eps = rng.normal_vec(8);
        LatentState z = forward_diffuse(x, t, eps, sched);

        Prediction v{PredKind::v, z.alpha() * eps - z.sigma() * x};
        // chain through every kind and back
        Prediction p = convert(v, z, PredKind::eps);
        p = convert(p, z, PredKind::x0);
        p = convert(p, z, PredKind::score);
        p = convert(p, z, PredKind::v);
        CHECK((p.value - v.value).cwiseAbs().maxCoeff() < 1e-10);

        // each conversion matches its closed form
        CHECK((convert(v, z, PredKind::x0).value - x).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((convert(v, z, PredKind::eps).value - eps).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((convert(v, z, PredKind::score).value + eps / z.sigma()).cwiseAbs().maxCoeff() <
              1e-9);
    }
}

TEST_CASE("Tweedie consistency: x from score equals x from v") {
    Rng rng(11);
    Schedule sched;
    for (int trial = 0; trial < 100; ++trial) {
        double t = 0.1 + 0.8 * rng.uniform();
        Eigen::VectorXd x = rng.normal_vec(5);
        Eigen::VectorXd eps = rng.normal_vec(5);
        LatentState z = forward_diffuse(x, t, eps, sched);
        Prediction score{PredKind::score, -eps / z.sigma()};
        // Tweedie: x_hat = (z + sigma^2 * score) / alpha
        Eigen::VectorXd tweedie =
            (z.z + z.sigma() * z.sigma() * score.value) / z.alpha();
        CHECK((convert(score, z, PredKind::x0).value - tweedie).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((tweedie - x).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("score conversion undefined at sigma = 0") {
    LatentState z;
    z.z = Eigen::VectorXd::Zero(3);
    z.lambda = 800.0;  // alpha = 1, sigma = 0 numerically
    Prediction v{PredKind::v, Eigen::VectorXd::Zero(3)};
    CHECK_THROWS(convert(v, z, PredKind::score));
}

TEST_CASE("loss weighting: normalized hybrid of Cauchy and normal") {
    WeightingFn w;
    CHECK(w(0.0) == doctest::Approx(1.0));
    // negative side is Cauchy with scale 2.4
    CHECK(w(-2.4) == doctest::Approx(0.5).epsilon(1e-12));
    // positive side is a normal kernel with std 2.4
    CHECK(w(2.4) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    // heavy left tail dominates the gaussian tail
    CHECK(w(-10.0) > w(10.0));
    // continuity at zero
    CHECK(w(-1e-9) == doctest::Approx(w(1e-9)).epsilon(1e-6));

    WeightingFn g;
    g.kind = WeightKind::lognormal;
    CHECK(g(0.0) == doctest::Approx(1.0));
    CHECK(g(2.4) == doctest::Approx(g(-2.4)).epsilon(1e-12));
}

TEST_CASE("dsm v-loss vanishes at the true target and scales with weighting") {
    Rng rng(3);
    Schedule sched;
    Eigen::VectorXd x = rng.normal_vec(6);
    Eigen::VectorXd eps = rng.normal_vec(6);
    LatentState z = forward_diffuse(x, 0.3, eps, sched);
    WeightingFn w;
    Prediction v_true{PredKind::v, z.alpha() * eps - z.sigma() * x};
    CHECK(dsm_v_loss(v_true, x, eps, z, w) == doctest::Approx(0.0));
    Prediction off{PredKind::v, v_true.value + Eigen::VectorXd::Ones(6)};
    CHECK(dsm_v_loss(off, x, eps, z, w) == doctest::Approx(w(z.lambda) * 6.0).epsilon(1e-12));
    Prediction wrong_kind{PredKind::eps, v_true.value};
    CHECK_THROWS(dsm_v_loss(wrong_kind, x, eps, z, w));
}

TEST_CASE("posterior step interpolates between the variance bounds") {
    Schedule sched;
    Rng rng(19);
    Eigen::VectorXd x = rng.normal_vec(4);
    LatentState z = forward_diffuse(x, 0.6, rng.normal_vec(4), sched);
    Prediction xh{PredKind::x0, x};

    auto lo = posterior_step_params(z, xh, 0.4, 0.0, sched);
    auto hi = posterior_step_params(z, xh, 0.4, 1.0, sched);
    auto mid = posterior_step_params(z, xh, 0.4, 0.2, sched);
    CHECK(lo.step_sigma < mid.step_sigma);
    CHECK(mid.step_sigma < hi.step_sigma);
    // log interpolation, checked directly
    double expect = std::exp(0.2 * std::log(hi.step_sigma * hi.step_sigma) +
                             0.8 * std::log(lo.step_sigma * lo.step_sigma));
    CHECK(mid.step_sigma * mid.step_sigma == doctest::Approx(expect).epsilon(1e-10));
    // mean identical across v_interp
    CHECK((lo.mean - hi.mean).cwiseAbs().maxCoeff() < 1e-12);

    CHECK_THROWS(posterior_step_params(z, xh, 0.7, 0.2, sched));  // t_next >= t
    Prediction bad{PredKind::v, x};
    CHECK_THROWS(posterior_step_params(z, bad, 0.4, 0.2, sched));
}

TEST_CASE("posterior mean is exact for a known Gaussian posterior") {
    // With x_hat equal to the true x, stepping to t_next then re-noising
    // shrinks toward alpha_s * x; verify the textbook coefficients.
    Schedule sched;
    Rng rng(23);
    Eigen::VectorXd x = rng.normal_vec(3);
    Eigen::VectorXd eps = rng.normal_vec(3);
    LatentState z = forward_diffuse(x, 0.8, eps, sched);
    double t_next = 0.5;
    auto [as, ss] = sched.alpha_sigma(t_next);
    double at = z.alpha(), st = z.sigma();
    double ats = at / as;
    double s2ts = st * st - ats * ats * ss * ss;
    Eigen::VectorXd expect =
        (ats * ss * ss / (st * st)) * z.z + (as * s2ts / (st * st)) * x;
    auto step = posterior_step_params(z, {PredKind::x0, x}, t_next, 0.2, sched);
    CHECK((step.mean - expect).cwiseAbs().maxCoeff() < 1e-12);
}
