#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cogmap/common/rng.hpp"
#include "cogmap/diff/diff.hpp"
#include "oracles.hpp"

using namespace cogmap;
using namespace cogmap::diff;

using DT = Tensor<double>;

namespace {

std::vector<double> random_vec(Rng& rng, size_t n, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = scale * rng.normal();
    return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

TEST_CASE("conv2d identity kernel") {
    Rng rng(7);
    DT x = DT::constant({1, 1, 4, 4}, random_vec(rng, 16));
    DT k = DT::constant({1, 1, 1, 1}, {1.0});
    DT y = conv2d(x, k, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 4, 4});
    CHECK(oracle::max_abs_diff(y.data(), x.data()) == 0.0);
}

TEST_CASE("conv2d matches direct-summation oracle") {
    Rng rng(11);
    for (int rep = 0; rep < 5; ++rep) {
        DT x = DT::constant({1, 2, 5, 5}, random_vec(rng, 50));
        DT k = DT::constant({3, 2, 3, 3}, random_vec(rng, 54));
        for (auto [stride, pad] : {std::pair{1, 1}, {1, 0}, {2, 1}}) {
            DT y = conv2d(x, k, stride, pad);
            auto ref = oracle::conv2d_ref(x.data(), 1, 2, 5, 5, k.data(), 3, 3, 3, stride, pad);
            CHECK(oracle::max_abs_diff(y.data(), ref) < 1e-5);
        }
    }
}

TEST_CASE("conv2d zero kernel gives zero output") {
    Rng rng(3);
    DT x = DT::constant({2, 3, 6, 6}, random_vec(rng, 2 * 3 * 36));
    DT k = DT::zeros({4, 3, 3, 3});
    DT y = conv2d(x, k, 1, 1);
    for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("conv2d shape mismatch raises structured error") {
    DT x = DT::zeros({1, 3, 5, 5});
    DT k = DT::zeros({2, 4, 3, 3});
    CHECK_THROWS_WITH_AS(conv2d(x, k, 1, 1),
                         doctest::Contains("[1,3,5,5]"), Error);
}

TEST_CASE("deconv2d unit kernel identity") {
    Rng rng(5);
    DT x = DT::constant({1, 1, 4, 4}, random_vec(rng, 16));
    DT k = DT::constant({1, 1, 1, 1}, {1.0});
    DT y = deconv2d(x, k, 1, 0);
    CHECK(y.shape() == Shape{1, 1, 4, 4});
    CHECK(oracle::max_abs_diff(y.data(), x.data()) == 0.0);
}

TEST_CASE("deconv2d zero input gives zero output") {
    DT x = DT::zeros({1, 2, 4, 4});
    Rng rng(6);
    DT k = DT::constant({2, 3, 4, 4}, random_vec(rng, 2 * 3 * 16));
    DT y = deconv2d(x, k, 2, 1);
    CHECK(y.shape() == Shape{1, 3, 8, 8});
    for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("conv2d/deconv2d adjoint identity") {
    Rng rng(13);
    for (int rep = 0; rep < 10; ++rep) {
        int64_t stride = 1 + rep % 2, pad = rep % 2;
        int64_t H = 6, kh = 3 + (rep % 2);  // stride 2 uses 4x4
        if (stride == 2) kh = 4;
        int64_t OH = (H + 2 * pad - kh) / stride + 1;
        DT x = DT::constant({2, 3, H, H}, random_vec(rng, 2 * 3 * H * H));
        DT k = DT::constant({4, 3, kh, kh}, random_vec(rng, 4 * 3 * kh * kh));
        DT y = DT::constant({2, 4, OH, OH}, random_vec(rng, 2 * 4 * OH * OH));
        double lhs = dot(conv2d(x, k, stride, pad).data(), y.data());
        double rhs = dot(x.data(), deconv2d(y, k, stride, pad).data());
        CHECK(std::abs(lhs - rhs) < 1e-5 * (1.0 + std::abs(lhs)));
    }
}

TEST_CASE("dense layer matches triple-loop matmul oracle") {
    Rng rng(17);
    DT x = DT::constant({4, 8}, random_vec(rng, 32));
    DT w = DT::constant({8, 5}, random_vec(rng, 40));
    DT y = matmul(x, w);
    auto ref = oracle::matmul_ref(x.data(), 4, 8, w.data(), 5);
    CHECK(oracle::max_abs_diff(y.data(), ref) < 1e-12);
}

TEST_CASE("leaky_relu slope") {
    DT x = DT::constant({2}, {1.0, -1.0});
    DT y = leaky_relu(x, 0.2);
    CHECK(y.data()[0] == doctest::Approx(1.0));
    CHECK(y.data()[1] == doctest::Approx(-0.2));
}

TEST_CASE("batch_norm normalizes per channel in training mode") {
    Rng rng(23);
    DT x = DT::constant({8, 3, 4, 4}, random_vec(rng, 8 * 3 * 16, 2.5));
    DT gamma = DT::param({3}, {1, 1, 1}, "g");
    DT beta = DT::param({3}, {0, 0, 0}, "b");
    BatchNormState<double> st;
    DT y = batch_norm(x, gamma, beta, st, true);
    for (int c = 0; c < 3; ++c) {
        double mean = 0, var = 0;
        int cnt = 0;
        for (int n = 0; n < 8; ++n)
            for (int i = 0; i < 16; ++i) {
                mean += y.data()[(n * 3 + c) * 16 + i];
                ++cnt;
            }
        mean /= cnt;
        for (int n = 0; n < 8; ++n)
            for (int i = 0; i < 16; ++i) {
                double d = y.data()[(n * 3 + c) * 16 + i] - mean;
                var += d * d;
            }
        var /= cnt;
        CHECK(std::abs(mean) < 1e-4);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }
}

TEST_CASE("backward of sum of squares is exactly 2p") {
    Rng rng(29);
    DT p = DT::param({7}, random_vec(rng, 7), "p");
    DT loss = sum_all(mul(p, p));
    auto grads = backward(loss);
    DT g = grad_of(grads, p);
    for (size_t i = 0; i < 7; ++i) CHECK(g.data()[i] == 2.0 * p.data()[i]);
}

TEST_CASE("gradient accumulates across reused nodes") {
    DT x = DT::param({3}, {1.0, 2.0, 3.0}, "x");
    DT loss = sum_all(add(mul(x, x), x));  // d/dx = 2x + 1
    auto grads = backward(loss);
    DT g = grad_of(grads, x);
    for (size_t i = 0; i < 3; ++i) CHECK(g.data()[i] == doctest::Approx(2.0 * x.data()[i] + 1.0));
}

TEST_CASE("two-layer net gradient matches central differences") {
    Rng rng(31);
    DT x = DT::constant({4, 6}, random_vec(rng, 24));
    DT w1 = DT::param({6, 8}, random_vec(rng, 48, 0.5), "w1");
    DT b1 = DT::param({8}, random_vec(rng, 8, 0.1), "b1");
    DT w2 = DT::param({8, 1}, random_vec(rng, 8, 0.5), "w2");
    DT b2 = DT::param({1}, random_vec(rng, 1, 0.1), "b2");
    DT tgt = DT::constant({4, 1}, random_vec(rng, 4));
    auto loss_value = [&]() {
        DT h = leaky_relu(add_rows(matmul(x, w1), b1), 0.2);
        DT y = add_rows(matmul(h, w2), b2);
        DT d = sub(y, tgt);
        return mean_all(mul(d, d)).item();
    };
    DT h = leaky_relu(add_rows(matmul(x, w1), b1), 0.2);
    DT y = add_rows(matmul(h, w2), b2);
    DT d = sub(y, tgt);
    DT loss = mean_all(mul(d, d));
    auto grads = backward(loss);
    for (DT* p : {&w1, &b1, &w2, &b2}) {
        auto fd = oracle::central_diff(p->data(), loss_value, 1e-3);
        CHECK(oracle::rel_err(grad_of(grads, *p).data(), fd) < 1e-6);
    }
}

TEST_CASE("finite differences across every primitive") {
    Rng rng(37);
    // Each entry builds a scalar loss from a parameter tensor through one
    // primitive; gradients must match central differences at 1e-6 relative.
    struct Case {
        const char* name;
        Shape shape;
        std::function<DT(const DT&)> f;
    };
    DT aux2 = DT::constant({3, 4}, random_vec(rng, 12));
    DT auxm = DT::constant({4, 5}, random_vec(rng, 20));
    DT auxb = DT::constant({4}, random_vec(rng, 4));
    DT auxc = DT::constant({2, 3, 4, 4}, random_vec(rng, 2 * 3 * 16));
    DT kern = DT::constant({2, 3, 3, 3}, random_vec(rng, 2 * 3 * 9));
    DT kern2 = DT::constant({3, 2, 4, 4}, random_vec(rng, 3 * 2 * 16));
    DT gy = DT::constant({2, 2, 4, 4}, random_vec(rng, 2 * 2 * 16));
    std::vector<Case> cases = {
        {"add", {3, 4}, [&](const DT& p) { return sum_all(mul(add(p, aux2), add(p, aux2))); }},
        {"sub", {3, 4}, [&](const DT& p) { return sum_all(mul(sub(p, aux2), sub(p, aux2))); }},
        {"neg", {3, 4}, [&](const DT& p) { return sum_all(mul(neg(p), aux2)); }},
        {"mul", {3, 4}, [&](const DT& p) { return sum_all(mul(mul(p, aux2), p)); }},
        {"scalar_mul", {3, 4}, [&](const DT& p) { return sum_all(mul(scalar_mul(p, 1.7), p)); }},
        {"add_scalar", {3, 4}, [&](const DT& p) { return sum_all(mul(add_scalar(p, 0.3), p)); }},
        {"exp", {3, 4}, [&](const DT& p) { return sum_all(mul(exp_(scalar_mul(p, 0.3)), aux2)); }},
        {"powf", {3, 4},
         [&](const DT& p) { return sum_all(powf_(add_scalar(mul(p, p), 1.0), 0.5)); }},
        {"tanh", {3, 4}, [&](const DT& p) { return sum_all(mul(tanh_(p), aux2)); }},
        {"leaky_relu", {3, 4},
         [&](const DT& p) { return sum_all(mul(leaky_relu(p, 0.2), aux2)); }},
        {"reshape", {3, 4}, [&](const DT& p) { return sum_all(mul(reshape(p, {12}), reshape(aux2, {12}))); }},
        {"transpose2d", {3, 4}, [&](const DT& p) { return sum_all(mul(transpose2d(p), transpose2d(aux2))); }},
        {"slice_cols", {3, 4}, [&](const DT& p) { return sum_all(mul(slice_cols(p, 1, 3), slice_cols(aux2, 1, 3))); }},
        {"pad_cols", {3, 2}, [&](const DT& p) { return sum_all(mul(pad_cols(p, 1, 4), aux2)); }},
        {"sum_all", {3, 4}, [&](const DT& p) { return mul(sum_all(p), sum_all(p)); }},
        {"mean_all", {3, 4}, [&](const DT& p) { return mul(mean_all(p), mean_all(p)); }},
        {"sum_rows", {3, 4}, [&](const DT& p) { return sum_all(mul(sum_rows(p), sum_rows(p))); }},
        {"broadcast_rows", {4}, [&](const DT& p) { return sum_all(mul(broadcast_rows(p, 3), aux2)); }},
        {"sum_chan", {2, 3, 4, 4}, [&](const DT& p) { return sum_all(mul(sum_chan(p), sum_chan(p))); }},
        {"broadcast_chan", {3}, [&](const DT& p) { return sum_all(mul(broadcast_chan(p, 2, 4, 4), auxc)); }},
        {"sum_per_sample", {2, 3, 4, 4},
         [&](const DT& p) { return sum_all(mul(sum_per_sample(p), sum_per_sample(p))); }},
        {"broadcast_per_sample", {2},
         [&](const DT& p) { return sum_all(mul(broadcast_per_sample(p, {3, 4, 4}), auxc)); }},
        {"matmul", {3, 4}, [&](const DT& p) { return sum_all(mul(matmul(p, auxm), matmul(p, auxm))); }},
        {"add_rows", {3, 4}, [&](const DT& p) { return sum_all(mul(add_rows(p, auxb), p)); }},
        {"add_rows_bias", {4}, [&](const DT& p) { return sum_all(mul(add_rows(aux2, p), aux2)); }},
        {"add_chan", {2, 3, 4, 4}, [&](const DT& p) { return sum_all(mul(add_chan(p, DT::constant({3}, {0.1, -0.2, 0.3})), p)); }},
        {"conv2d_x", {2, 3, 4, 4}, [&](const DT& p) { return sum_all(mul(conv2d(p, kern, 1, 1), conv2d(p, kern, 1, 1))); }},
        {"conv2d_k", {2, 3, 3, 3}, [&](const DT& p) { return sum_all(mul(conv2d(auxc, p, 1, 1), conv2d(auxc, p, 1, 1))); }},
        {"deconv2d_x", {2, 3, 4, 4}, [&](const DT& p) { return sum_all(mul(deconv2d(p, kern2, 2, 1), deconv2d(p, kern2, 2, 1))); }},
        {"deconv2d_k", {3, 2, 4, 4}, [&](const DT& p) { return sum_all(mul(deconv2d(auxc, p, 2, 1), deconv2d(auxc, p, 2, 1))); }},
        {"conv2d_kernel_grad", {2, 3, 4, 4},
         [&](const DT& p) {
             DT kg = conv2d_kernel_grad(p, gy, 1, 1, 3, 3);
             return sum_all(mul(kg, kg));
         }},
    };
    for (auto& c : cases) {
        CAPTURE(c.name);
        DT p = DT::param(c.shape, random_vec(rng, static_cast<size_t>(shape_numel(c.shape)), 0.7),
                         "p");
        auto eval = [&]() { return c.f(p).item(); };
        DT loss = c.f(p);
        auto grads = backward(loss);
        auto fd = oracle::central_diff(p.data(), eval, 1e-4);
        CHECK_MESSAGE(oracle::rel_err(grad_of(grads, p).data(), fd) < 1e-6, c.name);
    }
}

TEST_CASE("batch_norm gradient matches central differences") {
    Rng rng(41);
    DT x = DT::param({4, 2, 3, 3}, random_vec(rng, 4 * 2 * 9), "x");
    DT gamma = DT::param({2}, {1.2, 0.8}, "gamma");
    DT beta = DT::param({2}, {0.1, -0.1}, "beta");
    DT tgt = DT::constant({4, 2, 3, 3}, random_vec(rng, 4 * 2 * 9));
    auto make_loss = [&]() {
        BatchNormState<double> st;
        DT y = batch_norm(x, gamma, beta, st, true);
        DT d = sub(y, tgt);
        return mean_all(mul(d, d));
    };
    DT loss = make_loss();
    auto grads = backward(loss);
    for (DT* p : {&x, &gamma, &beta}) {
        auto fd = oracle::central_diff(p->data(), [&]() { return make_loss().item(); }, 1e-4);
        CHECK(oracle::rel_err(grad_of(grads, *p).data(), fd) < 1e-6);
    }
}

TEST_CASE("hand-derived gradient-penalty derivative for a linear critic") {
    // f(x) = a * sum(x) over x in R^D. The input gradient is a constant
    // vector of a's, so the penalty (|grad| - 1)^2 depends on the parameter
    // only: d/da = 2(|a|*sqrt(D) - 1) * sqrt(D) * sign(a).
    const int64_t D = 4;
    Rng rng(43);
    DT a = DT::param({1}, {0.8}, "a");
    DT x = DT::input({1, D}, random_vec(rng, D));
    auto penalty = [&]() {
        DT f = mul(a, sum_all(x));
        auto g1 = backward(f);
        DT gx = grad_of(g1, x);
        DT norm = powf_(add_scalar(sum_all(mul(gx, gx)), 1e-300), 0.5);
        return powf_(add_scalar(norm, -1.0), 2.0);
    };
    DT pen = penalty();
    const double sd = std::sqrt(static_cast<double>(D));
    const double expected_value = std::pow(0.8 * sd - 1.0, 2.0);
    CHECK(pen.item() == doctest::Approx(expected_value).epsilon(1e-9));

    auto g2 = backward(pen);
    DT ga = grad_of(g2, a);
    const double expected_grad = 2.0 * (0.8 * sd - 1.0) * sd;
    CHECK(ga.data()[0] == doctest::Approx(expected_grad).epsilon(1e-9));

    auto fd = oracle::central_diff(a.data(), [&]() { return penalty().item(); }, 1e-5);
    CHECK(std::abs(fd[0] - ga.data()[0]) < 1e-6 * std::abs(fd[0]));
}

TEST_CASE("penalty parameter gradient on a 2-layer critic matches finite differences") {
    Rng rng(47);
    const int64_t D = 6, Hd = 5, N = 3;
    DT x = DT::input({N, D}, random_vec(rng, N * D));
    DT w1 = DT::param({D, Hd}, random_vec(rng, D * Hd, 0.6), "w1");
    DT b1 = DT::param({Hd}, random_vec(rng, Hd, 0.1), "b1");
    DT w2 = DT::param({Hd, 1}, random_vec(rng, Hd, 0.6), "w2");
    auto penalty = [&]() {
        DT h = tanh_(add_rows(matmul(x, w1), b1));
        DT out = matmul(h, w2);
        auto g1 = backward(sum_all(out));
        DT gx = grad_of(g1, x);
        DT ssq = sum_per_sample(mul(gx, gx));
        DT norm = powf_(add_scalar(ssq, 1e-300), 0.5);
        return mean_all(powf_(add_scalar(norm, -1.0), 2.0));
    };
    DT pen = penalty();
    auto g2 = backward(pen);
    for (DT* p : {&w1, &b1, &w2}) {
        auto fd = oracle::central_diff(p->data(), [&]() { return penalty().item(); }, 1e-4);
        CHECK(oracle::rel_err(grad_of(g2, *p).data(), fd) < 1e-4);
    }
}

TEST_CASE("second derivative through backward: y = x^3") {
    DT x = DT::param({1}, {1.7}, "x");
    DT y = mul(mul(x, x), x);
    auto g1 = backward(y);
    DT dy = grad_of(g1, x);  // 3 x^2
    CHECK(dy.item() == doctest::Approx(3 * 1.7 * 1.7));
    auto g2 = backward(sum_all(dy));
    DT d2y = grad_of(g2, x);  // 6 x
    CHECK(d2y.item() == doctest::Approx(6 * 1.7));
}

TEST_CASE("backward rejects non-scalar and non-finite losses") {
    DT x = DT::param({2}, {1.0, 2.0}, "x");
    CHECK_THROWS_AS(backward(mul(x, x)), Error);
    DT bad = DT::param({1}, {std::numeric_limits<double>::infinity()}, "bad");
    CHECK_THROWS_AS(backward(bad), Error);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    using FT = Tensor<double>;
    FT p = FT::param({3}, {1.0, -2.0, 3.0}, "p");
    std::vector<FT> params = {p};
    Adam<double> opt;
    GradMap<double> empty;
    opt.step(params, empty);
    CHECK(p.data() == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("adam: first step with unit gradient moves by about -lr") {
    DT p = DT::param({1}, {0.5}, "p");
    std::vector<DT> params = {p};
    Adam<double> opt;
    DT loss = sum_all(p);  // gradient 1
    auto grads = backward(loss);
    opt.step(params, grads);
    CHECK(std::abs(p.data()[0] - (0.5 - 0.0002)) < 1e-9);
}

TEST_CASE("adam: 100 steps on p^2 strictly decreases the objective") {
    DT p = DT::param({1}, {1.0}, "p");
    std::vector<DT> params = {p};
    Adam<double> opt;
    double prev = 1.0;
    for (int i = 0; i < 100; ++i) {
        DT loss = sum_all(mul(p, p));
        auto grads = backward(loss);
        opt.step(params, grads);
        double cur = p.data()[0] * p.data()[0];
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("adam: non-finite gradient names the parameter") {
    DT p = DT::param({1}, {1.0}, "badparam");
    std::vector<DT> params = {p};
    Adam<double> opt;
    GradMap<double> grads;
    grads.emplace(p.node(), DT::constant({1}, {std::numeric_limits<double>::quiet_NaN()}));
    CHECK_THROWS_WITH_AS(opt.step(params, grads), doctest::Contains("badparam"), Error);
}

TEST_CASE("determinism: identical seeds give bit-identical forwards and gradients") {
    auto run = [&]() {
        Rng rng(123);
        DT x = DT::constant({4, 6}, random_vec(rng, 24));
        DT w = DT::param({6, 9}, random_vec(rng, 54), "w");
        DT k = DT::param({2, 1, 3, 3}, random_vec(rng, 18), "k");
        DT img = reshape(tanh_(matmul(x, w)), {4, 1, 3, 3});
        DT y = conv2d(img, k, 1, 1);
        DT loss = mean_all(mul(y, y));
        auto grads = backward(loss);
        std::vector<double> out = loss.data();
        auto gw = grad_of(grads, w).data();
        auto gk = grad_of(grads, k).data();
        out.insert(out.end(), gw.begin(), gw.end());
        out.insert(out.end(), gk.begin(), gk.end());
        return out;
    };
    auto a = run(), b = run();
    CHECK(a == b);
}
