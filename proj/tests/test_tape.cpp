#include <catch2/catch_amalgamated.hpp>

#include <functional>

#include "oracles.hpp"
#include "siger/tape.hpp"

namespace {

using BuildFn = std::function<siger::Var(siger::Tape&, siger::Var)>;

// Analytic gradient of a scalar functional of one matrix input.
siger::Dense grad_of(const siger::Dense& x, const BuildFn& build) {
    siger::Tape tape;
    siger::Var in = tape.leaf(x, true);
    siger::Var out = build(tape, in);
    tape.backward(out);
    return tape.grad(in);
}

double value_of(const siger::Dense& x, const BuildFn& build) {
    siger::Tape tape;
    siger::Var in = tape.leaf(x, true);
    return tape.value(build(tape, in)).v[0];
}

// Central finite differences entry by entry.
void check_grad(siger::Dense x, const BuildFn& build, double tol = 2e-6) {
    siger::Dense analytic = grad_of(x, build);
    REQUIRE(analytic.rows == x.rows);
    REQUIRE(analytic.cols == x.cols);
    double h = 1e-5;
    for (std::size_t k = 0; k < x.v.size(); ++k) {
        double keep = x.v[k];
        x.v[k] = keep + h;
        double up = value_of(x, build);
        x.v[k] = keep - h;
        double down = value_of(x, build);
        x.v[k] = keep;
        double fd = (up - down) / (2 * h);
        double denom = std::max({std::abs(fd), std::abs(analytic.v[k]), 1.0});
        INFO("entry " << k << " analytic " << analytic.v[k] << " fd " << fd);
        REQUIRE(std::abs(analytic.v[k] - fd) / denom < tol);
    }
}

siger::Dense random_dense(int r, int c, std::uint64_t seed, double scale = 1.0) {
    siger::Dense m(r, c);
    siger::RngStream rng(seed, "tape.rand");
    for (double& v : m.v) v = rng.normal() * scale;
    return m;
}

}  // namespace

TEST_CASE("elementwise and linear ops differentiate correctly") {
    siger::Dense x = random_dense(3, 4, 1);
    siger::Dense other = random_dense(3, 4, 2);
    siger::Dense w = random_dense(4, 5, 3);

    check_grad(x, [&](siger::Tape& t, siger::Var in) {
        return t.mean_all(t.add(in, t.constant(other)));
    });
    check_grad(x, [&](siger::Tape& t, siger::Var in) {
        return t.mean_all(t.sub(t.constant(other), in));
    });
    check_grad(x, [&](siger::Tape& t, siger::Var in) {
        return t.mean_all(t.hadamard(in, t.hadamard(in, t.constant(other))));
    });
    check_grad(x, [&](siger::Tape& t, siger::Var in) { return t.sum_all(t.scale(in, -2.5)); });
    check_grad(x, [&](siger::Tape& t, siger::Var in) {
        return t.mean_all(t.matmul(in, t.constant(w)));
    });
    check_grad(w, [&](siger::Tape& t, siger::Var in) {
        return t.mean_all(t.matmul(t.constant(x), in));
    });
    check_grad(x, [&](siger::Tape& t, siger::Var in) {
        return t.mean_all(t.matmul_nt(in, t.constant(other)));
    });
}

TEST_CASE("both matmul arguments can require gradients at once") {
    siger::Dense a = random_dense(3, 4, 4), b = random_dense(4, 3, 5);
    siger::Tape tape;
    siger::Var va = tape.leaf(a, true), vb = tape.leaf(b, true);
    siger::Var out = tape.mean_all(tape.matmul(va, vb));
    tape.backward(out);
    siger::Dense ga = tape.grad(va), gb = tape.grad(vb);

    double h = 1e-5;
    auto head_a = [&](const siger::Dense& aa) {
        siger::Dense m = siger::matmul(aa, b);
        double s = 0;
        for (double v : m.v) s += v;
        return s / static_cast<double>(m.v.size());
    };
    for (std::size_t k = 0; k < a.v.size(); ++k) {
        siger::Dense ap = a;
        ap.v[k] += h;
        siger::Dense am = a;
        am.v[k] -= h;
        double fd = (head_a(ap) - head_a(am)) / (2 * h);
        REQUIRE(ga.v[k] == Catch::Approx(fd).margin(1e-6));
    }
    for (std::size_t k = 0; k < b.v.size(); ++k) {
        siger::Dense bp = b;
        bp.v[k] += h;
        siger::Dense bm = b;
        bm.v[k] -= h;
        auto head = [&](const siger::Dense& bb) {
            siger::Dense m = siger::matmul(a, bb);
            double s = 0;
            for (double v : m.v) s += v;
            return s / static_cast<double>(m.v.size());
        };
        double fd = (head(bp) - head(bm)) / (2 * h);
        REQUIRE(gb.v[k] == Catch::Approx(fd).margin(1e-6));
    }
}

TEST_CASE("row reshaping ops differentiate correctly") {
    siger::Dense x = random_dense(6, 3, 7);

    check_grad(x, [&](siger::Tape& t, siger::Var in) { return t.sum_all(t.rows_head(in, 2)); });
    check_grad(x, [&](siger::Tape& t, siger::Var in) { return t.sum_all(t.rows_tail(in, 4)); });
    check_grad(x, [&](siger::Tape& t, siger::Var in) {
        return t.sum_all(t.concat_rows(t.rows_tail(in, 2), t.rows_head(in, 3)));
    });
    // repeated index exercises gradient accumulation
    check_grad(x, [&](siger::Tape& t, siger::Var in) {
        siger::Var g = t.gather_rows(in, {0, 2, 2, 5});
        return t.mean_all(t.hadamard(g, g));
    });
    check_grad(x, [&](siger::Tape& t, siger::Var in) {
        siger::Var p = t.permute_rows(in, {5, 4, 3, 2, 1, 0});
        return t.mean_all(t.hadamard(p, t.constant(random_dense(6, 3, 8))));
    });
}

TEST_CASE("bias broadcast differentiates for both arguments") {
    siger::Dense x = random_dense(5, 4, 9);
    siger::Dense b = random_dense(1, 4, 10);

    check_grad(x, [&](siger::Tape& t, siger::Var in) {
        return t.mean_all(t.sigmoid(t.add_bias_rows(in, t.constant(b))));
    });
    check_grad(b, [&](siger::Tape& t, siger::Var in) {
        return t.mean_all(t.sigmoid(t.add_bias_rows(t.constant(x), in)));
    });
}

TEST_CASE("nonlinearities differentiate correctly") {
    siger::Dense x = random_dense(4, 4, 11);

    check_grad(x, [&](siger::Tape& t, siger::Var in) { return t.mean_all(t.sigmoid(in)); });
    check_grad(x, [&](siger::Tape& t, siger::Var in) { return t.mean_all(t.softplus(in)); });
    // keep entries away from the kink
    siger::Dense far = x;
    for (double& v : far.v) v = v < 0 ? v - 0.5 : v + 0.5;
    check_grad(far, [&](siger::Tape& t, siger::Var in) { return t.mean_all(t.leaky_relu(in, 0.2)); });
}

TEST_CASE("sigmoid and softplus values are stable at extremes") {
    siger::Dense x(1, 4);
    x.v = {-800.0, -30.0, 30.0, 800.0};
    siger::Tape t;
    siger::Var v = t.leaf(x, false);
    const siger::Dense& s = t.value(t.sigmoid(v));
    REQUIRE(s.v[0] >= 0.0);
    REQUIRE(s.v[3] == Catch::Approx(1.0));
    REQUIRE(std::isfinite(s.v[0]));
    const siger::Dense& sp = t.value(t.softplus(v));
    REQUIRE(sp.v[0] == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(sp.v[3] == Catch::Approx(800.0));
    REQUIRE(std::isfinite(sp.v[3]));
}

TEST_CASE("row geometry ops differentiate correctly") {
    // rows kept away from zero so norms are smooth
    siger::Dense x = random_dense(5, 3, 12);
    for (double& v : x.v) v += (v >= 0 ? 0.3 : -0.3);

    check_grad(x, [&](siger::Tape& t, siger::Var in) {
        return t.mean_all(t.hadamard(t.row_normalize(in), t.constant(random_dense(5, 3, 13))));
    });
    check_grad(x, [&](siger::Tape& t, siger::Var in) {
        return t.mean_all(t.hadamard(t.row_norms(in), t.constant(random_dense(5, 1, 14))));
    });
    check_grad(x, [&](siger::Tape& t, siger::Var in) {
        return t.mean_all(t.row_scale(in, t.constant(random_dense(5, 1, 15))));
    });
    check_grad(x, [&](siger::Tape& t, siger::Var in) {
        siger::Var w = t.row_norms(in);
        return t.mean_all(t.row_scale(t.constant(random_dense(5, 3, 16)), w));
    });
    check_grad(x, [&](siger::Tape& t, siger::Var in) {
        return t.mean_all(t.rowdot(in, t.constant(random_dense(5, 3, 17))));
    });
    check_grad(x, [&](siger::Tape& t, siger::Var in) {
        return t.mean_all(t.rowdot(in, in));
    });
}

TEST_CASE("zero rows stay zero under row normalization with zero gradient") {
    siger::Dense x(3, 2);
    x(0, 0) = 3;
    x(0, 1) = 4;
    siger::Tape t;
    siger::Var in = t.leaf(x, true);
    siger::Var n = t.row_normalize(in);
    REQUIRE(t.value(n)(1, 0) == 0.0);
    REQUIRE(t.value(n)(0, 0) == Catch::Approx(0.6));
    siger::Var out = t.sum_all(n);
    t.backward(out);
    siger::Dense g = t.grad(in);
    REQUIRE(g(1, 0) == 0.0);
    REQUIRE(g(1, 1) == 0.0);
}

TEST_CASE("max entry and guarded division differentiate correctly") {
    // distinct entries keep the max unique (subgradient-safe for FD)
    siger::Dense x(4, 1);
    x.v = {3.0, 4.0, 5.0, 1.0};

    check_grad(x, [&](siger::Tape& t, siger::Var in) { return t.scale(t.max_entry(in), 2.0); });
    check_grad(x, [&](siger::Tape& t, siger::Var in) {
        // weights = norms / max norm, as used by the perturbation pass
        siger::Var w = t.div_guarded(in, t.max_entry(in));
        return t.mean_all(t.hadamard(w, t.constant(random_dense(4, 1, 18))));
    });

    // zero denominator yields zeros and no gradient explosion
    siger::Tape t;
    siger::Var in = t.leaf(siger::Dense(2, 1), true);
    siger::Var w = t.div_guarded(in, t.max_entry(in));
    REQUIRE(t.value(w).v[0] == 0.0);
    siger::Var out = t.sum_all(w);
    t.backward(out);
    REQUIRE(t.grad(in).all_finite());
}

TEST_CASE("diagonal surgery ops differentiate correctly") {
    siger::Dense z = random_dense(4, 4, 19);
    siger::Dense d = random_dense(4, 1, 20);

    check_grad(z, [&](siger::Tape& t, siger::Var in) {
        return t.mean_all(t.set_diag(in, t.constant(d)));
    });
    check_grad(d, [&](siger::Tape& t, siger::Var in) {
        return t.mean_all(t.set_diag(t.constant(z), in));
    });
    check_grad(z, [&](siger::Tape& t, siger::Var in) { return t.mean_all(t.get_diag(in)); });

    // value contract: off-diagonal from z, diagonal replaced
    siger::Tape t;
    siger::Var vz = t.leaf(z, false), vd = t.leaf(d, false);
    const siger::Dense& s = t.value(t.set_diag(vz, vd));
    REQUIRE(s(0, 1) == z(0, 1));
    REQUIRE(s(2, 2) == d(2, 0));
}

TEST_CASE("log-sum-exp rows differentiates and resists overflow") {
    siger::Dense z = random_dense(5, 6, 21, 2.0);
    check_grad(z, [&](siger::Tape& t, siger::Var in) { return t.mean_all(t.logsumexp_rows(in)); });

    siger::Dense big(2, 3);
    big.v = {1000.0, 999.0, 998.0, -1000.0, -999.0, -998.0};
    siger::Tape t;
    const siger::Dense& out = t.value(t.logsumexp_rows(t.leaf(big, false)));
    REQUIRE(out.all_finite());
    REQUIRE(out(0, 0) == Catch::Approx(1000.0 + std::log(1 + std::exp(-1.0) + std::exp(-2.0))));
}

TEST_CASE("spmm differentiates through the dense operand") {
    auto pairs = oracle::random_table(4, 5, 9, 22);
    std::vector<std::tuple<int, int, double>> trips;
    siger::RngStream r(23, "spmmw");
    for (auto [u, i] : pairs) trips.push_back({u, i, r.uniform() + 0.5});
    siger::SparseMatrix s = siger::csr_from_triplets(4, 5, trips);
    siger::SparseMatrix st = siger::csr_transpose(s);

    siger::Dense x = random_dense(5, 3, 24);
    check_grad(x, [&](siger::Tape& t, siger::Var in) {
        return t.mean_all(t.hadamard(t.spmm(&s, &st, in), t.constant(random_dense(4, 3, 25))));
    });
}

TEST_CASE("sign acts as a constant with zero at zero") {
    siger::Dense x(2, 2);
    x.v = {3.0, -0.5, 0.0, -2.0};
    siger::Tape t;
    siger::Var in = t.leaf(x, true);
    siger::Var sg = t.sign_of(in);
    REQUIRE(t.value(sg).v == std::vector<double>{1.0, -1.0, 0.0, -1.0});

    // no gradient flows through the sign path
    siger::Var out = t.sum_all(t.hadamard(sg, in));
    t.backward(out);
    siger::Dense g = t.grad(in);
    REQUIRE(g.v == std::vector<double>{1.0, -1.0, 0.0, -1.0});
}

TEST_CASE("gradients accumulate across fan-out") {
    siger::Dense x = random_dense(3, 3, 26);
    check_grad(x, [&](siger::Tape& t, siger::Var in) {
        siger::Var a = t.sigmoid(in);
        siger::Var b = t.hadamard(in, in);
        return t.add(t.mean_all(a), t.mean_all(b));
    });
}

TEST_CASE("backward demands a scalar head") {
    siger::Tape t;
    siger::Var in = t.leaf(random_dense(2, 2, 27), true);
    REQUIRE_THROWS(t.backward(in));
}

TEST_CASE("untouched leaves report zero gradients") {
    siger::Tape t;
    siger::Var used = t.leaf(random_dense(2, 2, 28), true);
    siger::Var unused = t.leaf(random_dense(3, 3, 29), true);
    t.backward(t.mean_all(used));
    siger::Dense g = t.grad(unused);
    REQUIRE(g.rows == 3);
    for (double v : g.v) REQUIRE(v == 0.0);
}
