#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "icegraph/binio.hpp"
#include "icegraph/errors.hpp"
#include "icegraph/matrix.hpp"
#include "icegraph/ndnn.hpp"
#include "icegraph/rng.hpp"

using namespace icegraph;
using namespace icegraph::ndnn;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("rng is deterministic and well ranged") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng r(7);
    for (int i = 0; i < 1000; ++i) {
        double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        std::uint64_t k = r.uniform_int(13);
        CHECK(k < 13);
    }
    double lo = r.uniform(-2.0, 3.0);
    CHECK(lo >= -2.0);
    CHECK(lo <= 3.0);
}

TEST_CASE("rng normal has standard moments") {
    Rng r(123);
    const int n = 20000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double z = r.normal();
        sum += z;
        sum2 += z * z;
    }
    double mean = sum / n;
    double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.03);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("rng shuffle produces a permutation, deterministically") {
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[static_cast<std::size_t>(i)] = i;
    Rng r1(9), r2(9);
    auto w = v;
    r1.shuffle(v);
    r2.shuffle(w);
    CHECK(v == w);
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("derive_seed separates streams") {
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    CHECK(derive_seed(1, 2) != derive_seed(2, 2));
    CHECK(derive_seed(5, 0xabc) == derive_seed(5, 0xabc));
}

TEST_CASE("matmul matches a hand-computed product") {
    Matrix A(2, 3), B(3, 2);
    double av[] = {1, 2, 3, 4, 5, 6};
    double bv[] = {7, 8, 9, 10, 11, 12};
    std::copy(av, av + 6, A.a.begin());
    std::copy(bv, bv + 6, B.a.begin());

    Matrix C = matmul(A, B);
    REQUIRE(C.rows == 2);
    REQUIRE(C.cols == 2);
    CHECK(C(0, 0) == doctest::Approx(58.0));
    CHECK(C(0, 1) == doctest::Approx(64.0));
    CHECK(C(1, 0) == doctest::Approx(139.0));
    CHECK(C(1, 1) == doctest::Approx(154.0));

    // Same product via the transposed storage of A.
    Matrix At(3, 2);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j) At(j, i) = A(i, j);
    Matrix C2 = matmul(At, B, true, false);
    for (int i = 0; i < 4; ++i) CHECK(C2.a[static_cast<std::size_t>(i)] ==
                                      doctest::Approx(C.a[static_cast<std::size_t>(i)]));

    Matrix bad(4, 4);
    CHECK_THROWS_AS(matmul(A, bad), ValidationError);
}

TEST_CASE("matmul_acc accumulates into C") {
    Matrix A(1, 2), B(2, 1), C(1, 1);
    A(0, 0) = 2;
    A(0, 1) = 3;
    B(0, 0) = 5;
    B(1, 0) = 7;
    C(0, 0) = 100;
    matmul_acc(C, A, B);
    CHECK(C(0, 0) == doctest::Approx(131.0)); // 100 + 2*5 + 3*7
}

TEST_CASE("leaky relu and its derivative") {
    CHECK(leaky_relu(2.0) == doctest::Approx(2.0));
    CHECK(leaky_relu(-3.0) == doctest::Approx(-0.03));
    CHECK(leaky_relu(0.0) == doctest::Approx(0.0));
    CHECK(leaky_relu_deriv(2.0) == doctest::Approx(1.0));
    CHECK(leaky_relu_deriv(-3.0) == doctest::Approx(0.01));
    CHECK(leaky_relu_deriv(0.0) == doctest::Approx(1.0));

    Matrix x(1, 3), y, dx;
    x(0, 0) = 2.0;
    x(0, 1) = -3.0;
    x(0, 2) = 0.0;
    leaky_relu_forward(x, y);
    CHECK(y(0, 0) == doctest::Approx(2.0));
    CHECK(y(0, 1) == doctest::Approx(-0.03));
    CHECK(y(0, 2) == doctest::Approx(0.0));
    Matrix dy(1, 3);
    dy.fill(1.0);
    leaky_relu_backward(x, dy, dx);
    CHECK(dx(0, 0) == doctest::Approx(1.0));
    CHECK(dx(0, 1) == doctest::Approx(0.01));
    CHECK(dx(0, 2) == doctest::Approx(1.0));
}

TEST_CASE("linear layer forward and backward match hand-worked values") {
    Linear lin("lin", 2, 3);
    // W rows: input feature -> output features
    double wv[] = {1, -1, 0.5, 2, 0.25, -3};
    std::copy(wv, wv + 6, lin.W.data.begin());
    lin.b.data = {0.1, -0.2, 0.3};

    Matrix x(1, 2);
    x(0, 0) = 1;
    x(0, 1) = 2;
    Matrix y = lin.forward(x);
    CHECK(y(0, 0) == doctest::Approx(5.1));
    CHECK(y(0, 1) == doctest::Approx(-0.7));
    CHECK(y(0, 2) == doctest::Approx(-5.2));

    Matrix dy(1, 3);
    dy(0, 0) = 1;
    dy(0, 1) = -1;
    dy(0, 2) = 2;
    Matrix dx = lin.backward(x, dy);
    CHECK(dx(0, 0) == doctest::Approx(3.0));    // 1*1 + (-1)*(-1) + 2*0.5
    CHECK(dx(0, 1) == doctest::Approx(-4.25));  // 1*2 + (-1)*0.25 + 2*(-3)
    CHECK(lin.W.grad[0] == doctest::Approx(1.0));
    CHECK(lin.W.grad[1] == doctest::Approx(-1.0));
    CHECK(lin.W.grad[2] == doctest::Approx(2.0));
    CHECK(lin.W.grad[3] == doctest::Approx(2.0));
    CHECK(lin.W.grad[4] == doctest::Approx(-2.0));
    CHECK(lin.W.grad[5] == doctest::Approx(4.0));
    CHECK(lin.b.grad[0] == doctest::Approx(1.0));
    CHECK(lin.b.grad[1] == doctest::Approx(-1.0));
    CHECK(lin.b.grad[2] == doctest::Approx(2.0));
}

TEST_CASE("mse loss and gradient match hand-worked values") {
    Matrix p(2, 2), t(2, 2);
    p(0, 0) = 1;
    p(0, 1) = 2;
    p(1, 0) = 3;
    p(1, 1) = 4;
    t(0, 0) = 0;
    t(0, 1) = 2;
    t(1, 0) = 5;
    t(1, 1) = 2;
    CHECK(mse_loss(p, t) == doctest::Approx(2.25));
    Matrix g = mse_backward(p, t);
    CHECK(g(0, 0) == doctest::Approx(0.5));
    CHECK(g(0, 1) == doctest::Approx(0.0));
    CHECK(g(1, 0) == doctest::Approx(-1.0));
    CHECK(g(1, 1) == doctest::Approx(1.0));
}

TEST_CASE("glorot init stays inside its bound") {
    Rng rng(3);
    ParamTensor p("w", {20, 10});
    glorot_init(p, 20, 10, rng);
    double bound = std::sqrt(6.0 / 30.0);
    double lo = 1e9, hi = -1e9;
    for (double v : p.data) {
        CHECK(std::abs(v) <= bound);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo < -0.1 * bound); // actually spreads over the range
    CHECK(hi > 0.1 * bound);
}

TEST_CASE("linear layer gradients agree with central differences to 1e-7") {
    // Positive inputs and loss weights keep every gradient entry away from
    // zero, so the tight tolerance is meaningful.
    Rng rng(11);
    Linear lin("lin", 4, 5);
    lin.init(rng);
    Matrix x(3, 4), c(3, 5);
    for (auto& v : x.a) v = rng.uniform(0.5, 1.5);
    for (auto& v : c.a) v = rng.uniform(0.5, 1.5);

    std::vector<ParamTensor*> params{&lin.W, &lin.b};
    auto loss = [&]() {
        Matrix y = lin.forward(x);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += c.a[i] * y.a[i];
        return s;
    };
    auto grads = [&]() {
        for (auto* p : params) p->zero_grad();
        lin.forward(x);
        lin.backward(x, c); // dL/dy = c
    };
    GradCheckReport rep = grad_check(params, loss, grads, 1e-7);
    INFO("max rel err ", rep.max_rel_err);
    CHECK(rep.pass);
}

TEST_CASE("mlp gradients agree with central differences to 1e-5") {
    Rng rng(17);
    Mlp mlp("mlp", 4, 8, 3);
    mlp.init(rng);
    Matrix x(5, 4), t(5, 3);
    for (auto& v : x.a) v = rng.uniform(-1.0, 1.0);
    for (auto& v : t.a) v = rng.uniform(-1.0, 1.0);

    auto params = mlp.params();
    MlpCache cache;
    auto loss = [&]() {
        MlpCache c2;
        Matrix y = mlp.forward(x, c2);
        return mse_loss(y, t);
    };
    auto grads = [&]() {
        for (auto* p : params) p->zero_grad();
        Matrix y = mlp.forward(x, cache);
        mlp.backward(cache, mse_backward(y, t));
    };
    GradCheckReport rep = grad_check(params, loss, grads, 1e-5);
    INFO("max rel err ", rep.max_rel_err);
    CHECK(rep.pass);
    CHECK(mlp.param_count() == 4 * 8 + 8 + 8 * 3 + 3);
}

TEST_CASE("grad_check flags a corrupted backward pass") {
    Rng rng(19);
    Mlp mlp("mlp", 3, 6, 2);
    mlp.init(rng);
    Matrix x(4, 3), t(4, 2);
    for (auto& v : x.a) v = rng.uniform(-1.0, 1.0);
    for (auto& v : t.a) v = rng.uniform(-1.0, 1.0);

    auto params = mlp.params();
    MlpCache cache;
    auto loss = [&]() {
        MlpCache c2;
        Matrix y = mlp.forward(x, c2);
        return mse_loss(y, t);
    };
    auto corrupted = [&]() {
        for (auto* p : params) p->zero_grad();
        Matrix y = mlp.forward(x, cache);
        mlp.backward(cache, mse_backward(y, t));
        params[0]->grad[0] += 0.5; // broken gradient
    };
    GradCheckReport rep = grad_check(params, loss, corrupted, 1e-5);
    CHECK_FALSE(rep.pass);
    CHECK(rep.max_rel_err > 0.1);
}

TEST_CASE("grad_check probe subsampling limits work per tensor") {
    Rng rng(23);
    Linear lin("lin", 10, 10);
    lin.init(rng);
    Matrix x(2, 10), c(2, 10);
    for (auto& v : x.a) v = rng.uniform(0.5, 1.5);
    for (auto& v : c.a) v = rng.uniform(0.5, 1.5);
    std::vector<ParamTensor*> params{&lin.W, &lin.b};
    auto loss = [&]() {
        Matrix y = lin.forward(x);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += c.a[i] * y.a[i];
        return s;
    };
    auto grads = [&]() {
        for (auto* p : params) p->zero_grad();
        lin.forward(x);
        lin.backward(x, c);
    };
    GradCheckReport rep = grad_check(params, loss, grads, 1e-7, 1e-6, 7);
    CHECK(rep.pass);
    REQUIRE(rep.entries.size() == 2);
    CHECK(rep.entries[0].checked == 7);
    CHECK(rep.entries[1].checked == 7); // bias has 10 entries, capped at 7
}

TEST_CASE("adam first and second steps match the closed form") {
    ParamTensor p("p", {1});
    p.data = {0.0};
    AdamConfig cfg;

    p.grad = {1.0};
    adam_step(p, cfg);
    // Bias correction makes the first step exactly -lr / (1 + eps).
    CHECK(p.data[0] == doctest::Approx(-0.001).epsilon(1e-6));
    CHECK(p.step == 1);

    p.grad = {1.0};
    adam_step(p, cfg);
    // With a constant gradient both corrected moments stay 1.
    CHECK(p.data[0] == doctest::Approx(-0.002).epsilon(1e-6));

    // A fresh tensor with a negative gradient moves up by the same amount.
    ParamTensor q("q", {1});
    q.grad = {-1.0};
    adam_step(q, cfg);
    CHECK(q.data[0] == doctest::Approx(0.001).epsilon(1e-6));
}

TEST_CASE("adam rejects non-finite gradients") {
    ParamTensor p("p", {2});
    p.grad[1] = std::numeric_limits<double>::quiet_NaN();
    AdamConfig cfg;
    CHECK_THROWS_AS(adam_step(p, cfg), NumericError);
}

TEST_CASE("checkpoint round-trips tensors bitwise") {
    Rng rng(31);
    ParamTensor w("layer.W", {3, 4}), b("layer.b", {4});
    for (auto& v : w.data) v = rng.normal();
    for (auto& v : b.data) v = rng.normal();

    std::string path = temp_path("ndnn_ckpt_test.bin");
    save_checkpoint(path, "{\"model\":\"test\"}", {&w, &b});

    Checkpoint ck = load_checkpoint(path);
    CHECK(ck.arch_json == "{\"model\":\"test\"}");
    REQUIRE(ck.tensors.size() == 2);
    CHECK(ck.tensors[0].name == "layer.W");
    CHECK(ck.tensors[0].shape == std::vector<int>{3, 4});
    CHECK(ck.tensors[0].data == w.data);
    CHECK(ck.tensors[1].data == b.data);

    ParamTensor w2("layer.W", {3, 4}), b2("layer.b", {4});
    apply_checkpoint(ck, {&w2, &b2});
    CHECK(w2.data == w.data);
    CHECK(b2.data == b.data);

    ParamTensor wrong("other.W", {3, 4});
    CHECK_THROWS_AS(apply_checkpoint(ck, {&wrong}), ValidationError);

    // Corrupt the magic and make sure the loader refuses the file.
    {
        std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
        f.seekp(0);
        f.write("XXXX", 4);
    }
    CHECK_THROWS_AS(load_checkpoint(path), ValidationError);
    std::remove(path.c_str());
}

TEST_CASE("binary io round-trips and detects truncation") {
    std::string path = temp_path("ndnn_binio_test.bin");
    {
        BinWriter w(path);
        w.u32(0xdeadbeefu);
        w.u64(1234567890123ull);
        w.f64(-0.125);
        w.str("hello");
        w.f64_vec({1.5, -2.5, 3.75});
        w.u8_vec({9, 8, 7});
        w.close();
    }
    {
        BinReader r(path);
        CHECK(r.u32() == 0xdeadbeefu);
        CHECK(r.u64() == 1234567890123ull);
        CHECK(r.f64() == -0.125);
        CHECK(r.str() == "hello");
        CHECK(r.f64_vec() == std::vector<double>{1.5, -2.5, 3.75});
        CHECK(r.u8_vec() == std::vector<std::uint8_t>{9, 8, 7});
        CHECK_THROWS_AS(r.u32(), ValidationError); // past the end
    }
    std::remove(path.c_str());
}

TEST_CASE("fnv1a64 fingerprints differ for different content") {
    CHECK(fnv1a64_str("abc") != fnv1a64_str("abd"));
    CHECK(fnv1a64_str("abc") == fnv1a64_str("abc"));
}
