#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "gradcheck.hpp"
#include "pgfwi/adam.hpp"
#include "pgfwi/checkpoint.hpp"
#include "pgfwi/ops.hpp"
#include "pgfwi/tensor.hpp"

using namespace pgfwi;
using testutil::grad_check;
using testutil::project;
using testutil::random_tensor;
using testutil::all_op_cases;
using testutil::spread;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }


} // namespace

TEST_CASE("op examples") {
    auto x = Tensor::from({3}, {-1.0, 0.0, 2.0});
    CHECK(values(ops::relu(x)) == std::vector<double>{0.0, 0.0, 2.0});

    auto l = ops::leaky_relu(Tensor::from({2}, {-1.0, 2.0}), 0.1);
    CHECK(l.data()[0] == doctest::Approx(-0.1).epsilon(1e-15));
    CHECK(l.data()[1] == 2.0);

    auto ones = Tensor::full({1, 4, 4}, 1.0);
    auto k = Tensor::full({1, 1, 3, 3}, 1.0);
    auto c = ops::conv2d(ones, k, Tensor{}, 1, 1);
    REQUIRE(c.shape() == Shape{1, 4, 4});
    CHECK(c.data()[1 * 4 + 1] == 9.0);
    CHECK(c.data()[0] == 4.0); // corner sees a 2x2 patch
    CHECK(c.data()[1] == 6.0);
}

TEST_CASE("op shapes and errors") {
    auto x = Tensor::zeros({1, 2, 5, 5});
    CHECK(ops::conv_transpose2d(x, Tensor::zeros({2, 3, 2, 2}), Tensor{}, 2, 0).shape() ==
          Shape{1, 3, 10, 10});
    CHECK(ops::conv_transpose2d(x, Tensor::zeros({2, 3, 3, 3}), Tensor{}, 1, 1).shape() ==
          Shape{1, 3, 5, 5});
    CHECK(ops::maxpool2d(x, 2).shape() == Shape{1, 2, 2, 2});

    try {
        ops::conv2d(x, Tensor::zeros({4, 3, 3, 3}), Tensor{}, 1, 1);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("conv2d") != std::string::npos);
        CHECK(msg.find('3') != std::string::npos);
    }
    CHECK_THROWS_AS(ops::add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
    CHECK_THROWS_AS(ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0}), ShapeError);
    std::vector<Tensor> none;
    CHECK_THROWS_AS(ops::op_forward(ops::OpKind::Add, none), ShapeError);
}

TEST_CASE("maxpool routes gradient to the first maximum") {
    auto x = Tensor::from({1, 2, 2}, {3.0, 3.0, 1.0, 3.0}, true);
    auto y = ops::maxpool2d(x, 2);
    CHECK(y.item() == 3.0);
    backward(ops::sum(y));
    CHECK(values(Tensor::from({4}, {x.grad().begin(), x.grad().end()})) ==
          std::vector<double>{1.0, 0.0, 0.0, 0.0});
}

TEST_CASE("every op kind matches central differences") {
    for (auto& c : all_op_cases()) {
        CAPTURE(std::string(ops::op_name(c.kind)));
        std::vector<std::size_t> wrt;
        for (std::size_t i = 0; i < c.inputs.size(); ++i)
            if (c.inputs[i].defined()) wrt.push_back(i);
        auto fn = [&](const std::vector<Tensor>& in) {
            return project(ops::op_forward(c.kind, in, c.attrs));
        };
        auto res = grad_check(fn, c.inputs, wrt, 10);
        CHECK(res.checked > 0);
        CHECK(res.max_rel < 1e-6);
    }
}

TEST_CASE("helper ops match central differences") {
    std::mt19937_64 rng(11);
    std::vector<std::size_t> rows{2, 0, 2};
    auto fn_rows = [&](const std::vector<Tensor>& in) { return project(ops::select_rows(in[0], rows)); };
    CHECK(grad_check(fn_rows, {random_tensor({2, 4, 3}, rng)}, {0}, 10).max_rel < 1e-6);

    auto fn_sqrt = [](const std::vector<Tensor>& in) { return project(ops::sqrt(in[0])); };
    CHECK(grad_check(fn_sqrt, {random_tensor({6}, rng, 0.5, 2.0)}, {0}, 6).max_rel < 1e-6);

    auto fn_clamp = [](const std::vector<Tensor>& in) { return project(ops::clamp(in[0], -0.305, 0.305)); };
    CHECK(grad_check(fn_clamp, {spread({4, 4}, rng)}, {0}, 16).max_rel < 1e-6);
    auto clipped = ops::clamp(Tensor::from({3}, {-2.0, 0.1, 9.0}), -1.0, 1.0);
    CHECK(values(clipped) == std::vector<double>{-1.0, 0.1, 1.0});

    auto fn_reshape = [](const std::vector<Tensor>& in) {
        return project(ops::reshape(in[0], {3, 4}));
    };
    CHECK(grad_check(fn_reshape, {random_tensor({2, 6}, rng)}, {0}, 10).max_rel < 1e-6);

    auto fn_scalar = [](const std::vector<Tensor>& in) {
        return ops::mul(ops::add_scalar(ops::mean(in[0]), 0.5), ops::sum(in[0]));
    };
    CHECK(grad_check(fn_scalar, {random_tensor({5}, rng)}, {0}, 5).max_rel < 1e-6);
}

TEST_CASE("backward examples") {
    auto x = Tensor::from({3}, {1.0, 2.0, 3.0}, true);
    backward(ops::sum(ops::square(x)));
    CHECK(values(Tensor::from({3}, {x.grad().begin(), x.grad().end()})) ==
          std::vector<double>{2.0, 4.0, 6.0});

    auto y = Tensor::from({4}, {1.0, -2.0, 5.0, 0.5}, true);
    backward(ops::mean(y));
    for (double g : y.grad()) CHECK(g == 0.25);

    SUBCASE("reuse sums both paths") {
        auto a = Tensor::from({2}, {1.5, -0.5}, true);
        // d/da sum(a*a + 3a) = 2a + 3
        backward(ops::sum(ops::add(ops::mul(a, a), ops::scale(a, 3.0))));
        CHECK(a.grad()[0] == doctest::Approx(6.0));
        CHECK(a.grad()[1] == doctest::Approx(2.0));
    }
    SUBCASE("shared intermediate") {
        auto a = Tensor::from({2}, {1.0, 2.0}, true);
        auto h = ops::scale(a, 2.0);
        backward(ops::sum(ops::add(h, h)));
        CHECK(a.grad()[0] == 4.0);
        CHECK(a.grad()[1] == 4.0);
    }
    SUBCASE("non-scalar loss") {
        auto a = Tensor::from({2}, {1.0, 2.0}, true);
        CHECK_THROWS_AS(backward(ops::scale(a, 2.0)), AutodiffError);
    }
}

TEST_CASE("grad_of_grad: linear critic has zero penalty gradient") {
    auto x = Tensor::from({1, 3}, {0.3, -1.2, 2.0}, true);
    auto w = Tensor::from({1, 3}, {0.6, 0.0, 0.8}, true);
    auto d = ops::sum(ops::linear(x, w, Tensor{}));
    auto g = grad_of_grad(d, x);
    auto norm2 = ops::sum(ops::square(g));
    CHECK(norm2.item() == doctest::Approx(1.0).epsilon(1e-15));
    auto penalty = ops::square(ops::add_scalar(ops::sqrt(norm2), -1.0));
    backward(penalty);
    CHECK(penalty.item() == doctest::Approx(0.0).epsilon(1e-15));
    for (double v : x.grad()) CHECK(v == 0.0);
}

TEST_CASE("grad_of_grad: (w.x)^2 penalty gradient vs finite differences") {
    std::mt19937_64 rng(5);
    auto x = random_tensor({4}, rng, -1.0, 1.0, true);
    auto w0 = random_tensor({4}, rng, -1.0, 1.0, true);
    // ||grad_x (w.x)^2||^2 = 4 (w.x)^2 ||w||^2, differentiated in w.
    auto fn = [&](const std::vector<Tensor>& in) {
        auto xx = x.detach();
        xx.set_requires_grad(true);
        auto d = ops::square(ops::sum(ops::mul(in[0], xx)));
        return ops::sum(ops::square(grad_of_grad(d, xx)));
    };
    auto res = grad_check(fn, {w0}, {0}, 4);
    CHECK(res.max_rel < 1e-5);

    double wx = 0.0, ww = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
        wx += w0.data()[i] * x.data()[i];
        ww += w0.data()[i] * w0.data()[i];
    }
    CHECK(fn({w0}).item() == doctest::Approx(4.0 * wx * wx * ww).epsilon(1e-12));
}

TEST_CASE("grad_of_grad rejects non piecewise-linear paths") {
    auto x = Tensor::from({2}, {0.5, 0.2}, true);
    auto d = ops::sum(ops::sigmoid(x));
    CHECK_THROWS_AS(grad_of_grad(d, x), AutodiffError);
}

TEST_CASE("adam") {
    SUBCASE("first step is -lr * sign(g)") {
        auto p = Tensor::from({3}, {1.0, 1.0, 1.0}, true);
        auto gb = p.mutable_grad();
        gb[0] = 0.3;
        gb[1] = -5.0;
        gb[2] = 1e-3;
        AdamState st;
        std::vector<Tensor> ps{p};
        adam_step(ps, st);
        CHECK(p.data()[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-9));
        CHECK(p.data()[1] == doctest::Approx(1.0 + 1e-3).epsilon(1e-9));
        CHECK(p.data()[2] == doctest::Approx(1.0 - 1e-3).epsilon(1e-7));
        CHECK(st.step == 1);
        CHECK_FALSE(p.has_grad());
    }
    SUBCASE("zero gradients leave parameters unchanged") {
        auto p = Tensor::from({2}, {0.25, -4.0}, true);
        AdamState st;
        std::vector<Tensor> ps{p};
        for (int i = 0; i < 5; ++i) {
            p.mutable_grad();
            adam_step(ps, st);
        }
        CHECK(values(p) == std::vector<double>{0.25, -4.0});
    }
    SUBCASE("three steps on x^2 follow the scalar recurrence") {
        auto p = Tensor::from({1}, {1.0}, true);
        AdamState st;
        st.lr = 0.1;
        std::vector<Tensor> ps{p};
        double x = 1.0, m = 0.0, v = 0.0;
        for (int t = 1; t <= 3; ++t) {
            backward(ops::sum(ops::square(p)));
            adam_step(ps, st);
            double g = 2.0 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            double mh = m / (1.0 - std::pow(0.9, t));
            double vh = v / (1.0 - std::pow(0.999, t));
            x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
            CHECK(p.data()[0] == doctest::Approx(x).epsilon(1e-14));
        }
        CHECK(x == doctest::Approx(0.7).epsilon(1e-3));
    }
    SUBCASE("missing grad names the parameter") {
        auto a = Tensor::from({1}, {1.0}, true);
        auto b = Tensor::from({1}, {1.0}, true);
        a.mutable_grad()[0] = 1.0;
        AdamState st;
        std::vector<Tensor> ps{a, b};
        try {
            adam_step(ps, st);
            FAIL("expected AutodiffError");
        } catch (const AutodiffError& e) {
            CHECK(std::string(e.what()).find("1") != std::string::npos);
        }
    }
}

TEST_CASE("checkpoint round trip") {
    auto dir = std::filesystem::temp_directory_path() / "pgfwi_test_ckpt";
    std::filesystem::create_directories(dir);
    auto path = dir / "w.wgt1";
    std::mt19937_64 rng(1);
    NamedTensors params{{"conv.weight", random_tensor({2, 1, 3, 3}, rng)},
                        {"conv.bias", random_tensor({2}, rng)},
                        {"scalar", Tensor::scalar(3.25)}};
    save_checkpoint(path, params);

    std::ifstream in(path, std::ios::binary);
    char magic[4];
    in.read(magic, 4);
    CHECK(std::string(magic, 4) == "WGT1");
    std::uint32_t name_len = 0;
    in.read(reinterpret_cast<char*>(&name_len), 4);
    CHECK(name_len == 11);
    // header + records: (4 + name + 4 + 8*ndim + 8*numel) each
    auto expect = 4 + (4 + 11 + 4 + 32 + 144) + (4 + 9 + 4 + 8 + 16) + (4 + 6 + 4 + 0 + 8);
    CHECK(std::filesystem::file_size(path) == static_cast<std::uintmax_t>(expect));

    auto loaded = load_checkpoint(path);
    REQUIRE(loaded.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(loaded[i].first == params[i].first);
        CHECK(loaded[i].second.shape() == params[i].second.shape());
        CHECK(values(loaded[i].second) == values(params[i].second));
    }

    NamedTensors target{{"conv.weight", Tensor::zeros({2, 1, 3, 3})},
                        {"conv.bias", Tensor::zeros({2})},
                        {"scalar", Tensor::scalar(0.0)}};
    restore_checkpoint(path, target);
    CHECK(values(target[0].second) == values(params[0].second));

    NamedTensors wrong{{"conv.bias", Tensor::zeros({3})}};
    CHECK_THROWS(restore_checkpoint(path, wrong));
    std::filesystem::remove_all(dir);
}
