#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "volterra/mc_forward.hpp"
#include "volterra/pde_backend.hpp"
#include "volterra/volterra_system.hpp"

using namespace volterra;

namespace {

GenFn zgen() {
    return [](double, double, const double*, const double*, const double*, const double*, const double*, double* o) { o[0] = 0.0; };
}

ProblemSpec scalar_pde(double sig) {
    ProblemSpec s;
    s.n = s.m = s.d = 1;
    s.x0 = {0.0};
    s.sigma_max = std::abs(sig);
    s.sigma = [sig](double, const double*, double* o) { o[0] = sig; };
    s.f = zgen();
    s.ds_f = zgen();
    s.dy_f = zgen();
    s.dz_f = {JacFn(zgen())};
    s.xi = [](double, const double*, double* o) { o[0] = 0.0; };
    s.ds_xi = [](double, const double*, double* o) { o[0] = 0.0; };
    return s;
}

HjbSpec controlfree(std::function<double(double, double, double)> fbar,
                    std::function<double(double, double)> xi, double sig = 1.0) {
    HjbSpec h;
    h.bar_f = [fbar](double s, double t, double x, double) { return fbar(s, t, x); };
    h.ds_bar_f = [](double, double, double, double) { return 0.0; };
    h.sigma = [sig](double, double) { return sig; };
    h.xi = std::move(xi);
    h.ds_xi = [](double, double) { return 0.0; };
    h.control = ControlSet::of({0.0});
    h.sigma_max = std::abs(sig);
    return h;
}

} // namespace

TEST_CASE("hamiltonian argmax") {
    HjbSpec h = controlfree([](double, double, double) { return 0.0; }, [](double, double) { return 0.0; });
    SECTION("sign maximizer for gbar = a v") {
        h.control = ControlSet::of({-1.0, 1.0});
        h.bar_f = [](double, double, double, double) { return 0.0; };
        h.b = [](double, double, double a) { return a; };
        const ArgmaxResult r = hamiltonian_argmax(h, 0.0, 0.0, 0.0, 2.0);
        CHECK(r.a_star == 1.0);
        CHECK(r.value == Catch::Approx(2.0));
    }
    SECTION("ties break to the smallest control index") {
        h.control = ControlSet::of({-1.0, 1.0});
        h.b = [](double, double, double a) { return a; };
        const ArgmaxResult r = hamiltonian_argmax(h, 0.0, 0.0, 0.0, 0.0);
        CHECK(r.a_star == -1.0);
        CHECK(r.value == 0.0);
    }
    SECTION("brute force over a 3-point grid") {
        h.control = ControlSet::of({0.0, 0.5, 1.0});
        h.bar_f = [](double, double, double, double a) { return -(a - 0.4) * (a - 0.4); };
        const ArgmaxResult r = hamiltonian_argmax(h, 0.0, 0.0, 0.0, 0.0);
        CHECK(r.a_star == 0.5);
        CHECK(r.value == Catch::Approx(-0.01));
    }
    SECTION("non-finite gbar names the control point") {
        h.control = ControlSet::of({0.0, 3.0});
        h.bar_f = [](double, double, double, double a) { return a > 2.0 ? std::nan("") : 0.0; };
        CHECK_THROWS_WITH(hamiltonian_argmax(h, 0, 0, 0, 0), Catch::Matchers::ContainsSubstring("3.0"));
    }
    SECTION("argmax equals exhaustive maximisation on random draws") {
        h.control = ControlSet::of({-1.0, -0.5, 0.0, 0.25, 0.7, 1.0});
        h.bar_f = [](double s, double t, double x, double a) { return std::sin(3 * a + s) - (a - x) * (a - x) + 0.1 * t; };
        for (int k = 0; k < 1000; ++k) {
            const double s = detail::to_unit(detail::mix(5, k, 0, 0));
            const double t = detail::to_unit(detail::mix(5, k, 1, 0));
            const double x = 2.0 * detail::to_unit(detail::mix(5, k, 2, 0)) - 1.0;
            const double v = 2.0 * detail::to_unit(detail::mix(5, k, 3, 0)) - 1.0;
            const ArgmaxResult r = hamiltonian_argmax(h, s, t, x, v);
            double best = -1e300;
            for (double a : h.control.points) best = std::max(best, h.gbar(s, t, x, a, v));
            CHECK(r.value == best);
        }
    }
}

TEST_CASE("control set constructors enforce ordering") {
    CHECK_THROWS_AS(ControlSet::of({}), ConfigError);
    CHECK_THROWS_AS(ControlSet::of({1.0, 1.0}), ConfigError);
    CHECK_THROWS_AS(ControlSet::of({1.0, 0.0}), ConfigError);
    CHECK_NOTHROW(ControlSet::of({-1.0, 0.0, 2.0}));
}

TEST_CASE("representation pde") {
    const TimeGrid tg = TimeGrid::uniform(1.0, 50);
    const ParamGrid sg = ParamGrid::like(tg);
    const XGrid xg = XGrid::uniform(-3.0, 3.0, 120);
    SECTION("linear free term is exact: v = x, vx = 1") {
        ProblemSpec s = scalar_pde(0.5);
        s.xi = [](double, const double* x, double* o) { o[0] = x[0]; };
        const PdeSolution p = solve_representation_pde(s, tg, sg, xg);
        for (int j = 0; j <= p.J(); j += 10)
            for (int i = 0; i <= p.M(); i += 10)
                for (int k = 0; k <= p.K(); k += 15) {
                    CHECK(std::abs(p.v[p.off(j, i, k)] - xg.nodes[static_cast<std::size_t>(k)]) < 1e-10);
                    CHECK(std::abs(p.vx[p.off(j, i, k)] - 1.0) < 1e-10);
                }
    }
    SECTION("unit generator integrates to T - t") {
        ProblemSpec s = scalar_pde(0.5);
        s.f = [](double, double, const double*, const double*, const double*, const double*, const double*, double* o) { o[0] = 1.0; };
        const PdeSolution p = solve_representation_pde(s, tg, sg, xg);
        for (int i = 0; i <= p.M(); i += 7)
            CHECK(std::abs(p.v[p.off(3, i, 40)] - (1.0 - tg.nodes[static_cast<std::size_t>(i)])) < 1e-10);
    }
    SECTION("f = -y decays exponentially within O(dt)") {
        ProblemSpec s = scalar_pde(1.0);
        s.f = [](double, double, const double*, const double* y, const double*, const double*, const double*, double* o) { o[0] = -y[0]; };
        s.xi = [](double, const double*, double* o) { o[0] = 1.0; };
        const TimeGrid tg100 = TimeGrid::uniform(1.0, 100);
        const PdeSolution p = solve_representation_pde(s, tg100, ParamGrid::like(tg100), xg);
        for (int i = 0; i <= 100; i += 20)
            CHECK(std::abs(p.v[p.off(0, i, 60)] - std::exp(-(1.0 - tg100.nodes[static_cast<std::size_t>(i)]))) < 3e-3);
    }
    SECTION("terminal slice equals the free term bit-exactly") {
        ProblemSpec s = scalar_pde(1.0);
        s.xi = [](double sv, const double* x, double* o) { o[0] = sv * std::sin(x[0]); };
        const PdeSolution p = solve_representation_pde(s, tg, sg, xg);
        for (int j = 0; j <= p.J(); j += 9)
            for (int k = 0; k <= p.K(); k += 11) {
                double want;
                s.xi(sg.nodes[static_cast<std::size_t>(j)], &xg.nodes[static_cast<std::size_t>(k)], &want);
                CHECK(p.v[p.off(j, p.M(), k)] == want);
            }
    }
    SECTION("nonnegative data stays above the monotone floor") {
        ProblemSpec s = scalar_pde(1.0);
        s.xi = [](double, const double* x, double* o) { o[0] = std::abs(x[0]); };
        const PdeSolution p = solve_representation_pde(s, tg, sg, xg);
        for (double v : p.v) CHECK(v >= -1e-8);
    }
    SECTION("fixed substeps violating the CFL bound raise a config error") {
        ProblemSpec s = scalar_pde(1.0);
        s.xi = [](double, const double* x, double* o) { o[0] = x[0]; };
        CHECK_THROWS_WITH(solve_representation_pde(s, tg, sg, xg, 1),
                          Catch::Matchers::ContainsSubstring("maximal admissible"));
    }
    SECTION("explosive generator reports the blow-up location") {
        ProblemSpec s = scalar_pde(1.0);
        s.f = [](double, double, const double*, const double* y, const double*, const double*, const double*, double* o) { o[0] = 1e6 * y[0]; };
        s.xi = [](double, const double*, double* o) { o[0] = 1.0; };
        CHECK_THROWS_AS(solve_representation_pde(s, tg, sg, xg), DivergenceError);
    }
}

TEST_CASE("pde refinement orders sit at the scheme's nominal rates") {
    SECTION("first order in dt on the space-free exponential") {
        ProblemSpec s = scalar_pde(1.0);
        s.f = [](double, double, const double*, const double* y, const double*, const double*, const double*, double* o) { o[0] = -y[0]; };
        s.xi = [](double, const double*, double* o) { o[0] = 1.0; };
        const XGrid xg = XGrid::uniform(-3.0, 3.0, 120);
        auto err_at = [&](int M) {
            const TimeGrid tg = TimeGrid::uniform(1.0, M);
            const PdeSolution p = solve_representation_pde(s, tg, ParamGrid::like(tg), xg);
            return std::abs(p.v[p.off(0, 0, 60)] - std::exp(-1.0));
        };
        const double e25 = err_at(25), e50 = err_at(50), e100 = err_at(100);
        const double o1 = std::log2(e25 / e50), o2 = std::log2(e50 / e100);
        CHECK(o1 >= 0.8);
        CHECK(o1 <= 1.3);
        CHECK(o2 >= 0.8);
        CHECK(o2 <= 1.3);
    }
    SECTION("second order in dx on the heat semigroup of cos") {
        ProblemSpec s = scalar_pde(1.0);
        s.xi = [](double, const double* x, double* o) { o[0] = std::cos(x[0]); };
        auto err_at = [&](int cells) {
            const TimeGrid tg = TimeGrid::uniform(0.5, 20);
            const XGrid xg = XGrid::uniform(-8.0, 8.0, cells);
            const PdeSolution p = solve_representation_pde(s, tg, ParamGrid::like(tg), xg);
            double mx = 0.0;
            for (int k = p.K() / 4; k <= 3 * p.K() / 4; ++k) {
                const double want = std::exp(-0.25) * std::cos(xg.nodes[static_cast<std::size_t>(k)]);
                mx = std::max(mx, std::abs(p.v[p.off(0, 0, k)] - want));
            }
            return mx;
        };
        const double e80 = err_at(80), e160 = err_at(160);
        const double order = std::log2(e80 / e160);
        CHECK(order >= 1.6);
        CHECK(order <= 2.4);
    }
}

TEST_CASE("hjb wy backend") {
    const TimeGrid tg = TimeGrid::uniform(1.0, 40);
    const ParamGrid sg = ParamGrid::like(tg);
    const XGrid xg = XGrid::uniform(-4.0, 4.0, 100);
    SECTION("control-free degeneracy reduces to the representation pde") {
        HjbSpec h = controlfree([](double s, double, double x) { return s + 0.5 * std::cos(x); },
                                [](double, double x) { return 0.3 * x; });
        ProblemSpec s = scalar_pde(1.0);
        s.f = [](double sv, double, const double*, const double*, const double*, const double*, const double*, double* o) { o[0] = sv; };
        // match the generator: f(s,t,x, ...) = s + 0.5 cos x, no (y,z,u,v) use
        s.f = [](double sv, double, const double* x, const double*, const double*, const double*, const double*, double* o) {
            o[0] = sv + 0.5 * std::cos(x[0]);
        };
        s.xi = [](double, const double* x, double* o) { o[0] = 0.3 * x[0]; };
        const PdeSolution rep = solve_representation_pde(s, tg, sg, xg);
        const PdeSolution wy = solve_hjb_wy(h, tg, sg, xg);
        double sup = 0.0;
        for (std::size_t k = 0; k < rep.v.size(); ++k) sup = std::max(sup, std::abs(rep.v[k] - wy.v[k]));
        CHECK(sup < 1e-13);
    }
    SECTION("constant maximizer: fbar = a over {0, 1}") {
        HjbSpec h = controlfree([](double, double, double) { return 0.0; }, [](double s, double x) { return s + 0.1 * x; });
        h.control = ControlSet::of({0.0, 1.0});
        h.bar_f = [](double, double, double, double a) { return a; };
        const PdeSolution wy = solve_hjb_wy(h, tg, sg, xg);
        for (int j = 0; j <= wy.J(); j += 13)
            for (int i = 0; i <= wy.M(); i += 9)
                for (int k = 20; k <= 80; k += 17) {
                    const double want = sg.nodes[static_cast<std::size_t>(j)] + 0.1 * xg.nodes[static_cast<std::size_t>(k)] +
                                        (1.0 - tg.nodes[static_cast<std::size_t>(i)]);
                    CHECK(std::abs(wy.v[wy.off(j, i, k)] - want) < 1e-10);
                }
    }
    SECTION("quadratic tracking control follows the diagonal time") {
        // fbar = -(a - s)^2 rewards controls near the running s; on the
        // diagonal the maximiser is the grid point closest to t
        HjbSpec h = controlfree([](double, double, double) { return 0.0; }, [](double, double) { return 0.0; }, 0.05);
        std::vector<double> pts;
        for (int k = 0; k <= 20; ++k) pts.push_back(k / 20.0);
        h.control = ControlSet::of(pts);
        h.bar_f = [](double s, double, double, double a) { return -(a - s) * (a - s); };
        const PdeSolution wy = solve_hjb_wy(h, tg, sg, xg);

        // per-slice quadrature oracle on a 10x finer time grid with the same
        // brute-force control rule
        auto oracle = [&](double sref) {
            const int fine = 400;
            double acc = 0.0;
            for (int q = 0; q < fine; ++q) {
                const double r = (q + 0.5) / fine;
                const double astar = std::round(std::min(1.0, std::max(0.0, r)) * 20.0) / 20.0;
                acc += -(astar - sref) * (astar - sref) / fine;
            }
            return acc;
        };
        for (int j = 0; j <= wy.J(); j += 8) {
            const double sref = sg.nodes[static_cast<std::size_t>(j)];
            CHECK(std::abs(wy.v[wy.off(j, 0, 50)] - oracle(sref)) < 0.02);
        }
    }
}

TEST_CASE("hjb bkm backend") {
    const TimeGrid tg = TimeGrid::uniform(1.0, 40);
    const ParamGrid sg = ParamGrid::like(tg);
    const XGrid xg = XGrid::uniform(-4.0, 4.0, 100);
    SECTION("zero data stays zero") {
        HjbSpec h = controlfree([](double, double, double) { return 0.0; }, [](double, double) { return 0.0; });
        const PdeSolution bkm = solve_hjb_bkm(h, tg, sg, xg);
        for (double v : bkm.v) CHECK(v == 0.0);
        for (double v : bkm.Vfun) CHECK(v == 0.0);
    }
    SECTION("s-independent data collapses to a classical equation") {
        HjbSpec h = controlfree([](double, double, double x) { return 0.2 * std::sin(x); },
                                [](double, double x) { return 0.4 * std::cos(x); });
        const PdeSolution bkm = solve_hjb_bkm(h, tg, sg, xg);
        for (int j = 0; j <= bkm.J(); j += 11)
            for (int i = 0; i <= bkm.M(); i += 7)
                for (int k = 0; k <= bkm.K(); k += 13)
                    CHECK(std::abs(bkm.v[bkm.off(j, i, k)] - bkm.Vfun[bkm.voff(i, k)]) < 1e-12);
    }
    SECTION("linear-in-s free term: J = s and V = t by hand integration") {
        HjbSpec h = controlfree([](double, double, double) { return 0.0; }, [](double s, double) { return s; });
        h.ds_xi = [](double, double) { return 1.0; };
        const PdeSolution bkm = solve_hjb_bkm(h, tg, sg, xg);
        for (int i = 0; i <= bkm.M(); i += 5)
            for (int k = 10; k <= 90; k += 16) {
                CHECK(std::abs(bkm.Vfun[bkm.voff(i, k)] - tg.nodes[static_cast<std::size_t>(i)]) < 1e-12);
                CHECK(std::abs(bkm.v[bkm.off(7, i, k)] - sg.nodes[7]) < 1e-12);
            }
    }
}

TEST_CASE("equivalence of the two equilibrium formulations") {
    const XGrid xg = XGrid::uniform(-6.0, 6.0, 240);
    SECTION("s-independent data gives machine-zero differences") {
        const TimeGrid tg = TimeGrid::uniform(1.0, 30);
        const ParamGrid sg = ParamGrid::like(tg);
        HjbSpec h = controlfree([](double, double, double) { return 0.0; }, [](double, double x) { return std::cos(x); });
        const PdeSolution wy = solve_hjb_wy(h, tg, sg, xg);
        const PdeSolution bkm = solve_hjb_bkm(h, tg, sg, xg);
        const EquivalenceReport eq = check_equivalence(wy, bkm, h);
        CHECK(eq.sup_value_diff < 1e-12);
    }
    SECTION("s-dependent data decays at first order under joint refinement") {
        HjbSpec h = controlfree([](double, double, double) { return 0.0; },
                                [](double s, double x) { return s * std::cos(x); });
        h.ds_xi = [](double, double x) { return std::cos(x); };
        auto sup_at = [&](int MJ) {
            const TimeGrid tg = TimeGrid::uniform(1.0, MJ);
            const ParamGrid sg = ParamGrid::like(tg);
            const PdeSolution wy = solve_hjb_wy(h, tg, sg, xg);
            const PdeSolution bkm = solve_hjb_bkm(h, tg, sg, xg);
            const EquivalenceReport eq = check_equivalence(wy, bkm, h);
            return std::make_pair(eq.sup_value_diff, eq.sup_bkm_residual);
        };
        const auto [d25, r25] = sup_at(25);
        const auto [d50, r50] = sup_at(50);
        CHECK(d25 / d50 >= 1.7);
        CHECK(r25 / r50 >= 1.7);
    }
    SECTION("grid mismatch is rejected") {
        const TimeGrid tg = TimeGrid::uniform(1.0, 20);
        const ParamGrid sg = ParamGrid::like(tg);
        const TimeGrid tg2 = TimeGrid::uniform(1.0, 25);
        HjbSpec h = controlfree([](double, double, double) { return 0.0; }, [](double, double) { return 1.0; });
        const PdeSolution wy = solve_hjb_wy(h, tg, sg, xg);
        const PdeSolution bkm = solve_hjb_bkm(h, tg2, ParamGrid::like(tg2), xg);
        CHECK_THROWS_AS(check_equivalence(wy, bkm, h), ConfigError);
    }
}

TEST_CASE("feynman-kac cross-check") {
    ProblemSpec s = scalar_pde(1.0);
    s.xi = [](double sv, const double* x, double* o) { o[0] = sv * x[0]; };
    s.ds_xi = [](double, const double* x, double* o) { o[0] = x[0]; };
    s.z_diagonal_in_generator = false;
    const int M = 20, P = 2000;
    const TimeGrid tg = TimeGrid::uniform(1.0, M);
    const ParamGrid sg = ParamGrid::like(tg);
    const PathEnsemble ens = simulate_paths(s, tg, P, 44);
    auto field = std::make_shared<const FieldSolution>(
        solve_system(s, ens, tg, sg, RegressionBasis{2}, PicardOptions{}));
    const BsvieSolution sol = extract_bsvie(field, ens, s);
    SECTION("shared analytic solution keeps the RMS small") {
        const XGrid xg = XGrid::uniform(-6.0, 6.0, 240);
        const PdeSolution pde = solve_representation_pde(s, tg, sg, xg);
        const FeynmanKacReport fk = feynman_kac_check(pde, sol, ens);
        CHECK(fk.exit_fraction < 0.01);
        CHECK(fk.rms_Y < 0.05);
        CHECK(fk.rms_Z < 0.2);  // Z carries the increment-regression noise, ~0.1 at these sizes
    }
    SECTION("narrow domains are rejected with the exit fraction") {
        const XGrid xg = XGrid::uniform(-0.4, 0.4, 16);
        const PdeSolution pde = solve_representation_pde(s, tg, sg, xg);
        CHECK_THROWS_AS(feynman_kac_check(pde, sol, ens), DomainError);
    }
}
