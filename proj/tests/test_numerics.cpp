#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "cipl/tensor.hpp"
#include "test_util.hpp"

using namespace cipl;
using testutil::gradcheck;
using testutil::random_tensor;

namespace {
Tape<double> g_tape;  // scratch for forward-only checks

TensorPtr<double> mk(std::vector<int> dims, std::vector<double> vals, bool rg = false) {
    return make_tensor<double>(std::move(dims), std::move(vals), rg);
}
}  // namespace

TEST_CASE("matmul identity and hand example") {
    Tape<double> tape;
    auto eye = mk({2, 2}, {1, 0, 0, 1});
    auto b = mk({2, 3}, {1, 2, 3, 4, 5, 6});
    auto prod = matmul(tape, eye, b);
    for (size_t i = 0; i < b->values.size(); ++i) CHECK(prod->values[i] == b->values[i]);

    auto a = mk({2, 2}, {1, 2, 3, 4});
    auto ones = mk({2, 1}, {1, 1});
    auto r = matmul(tape, a, ones);
    CHECK(r->values[0] == doctest::Approx(3.0));
    CHECK(r->values[1] == doctest::Approx(7.0));
}

TEST_CASE("matmul shape error names both dims") {
    Tape<double> tape;
    auto a = mk({2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = mk({2, 2}, {1, 2, 3, 4});
    CHECK_THROWS_WITH_AS(matmul(tape, a, b), doctest::Contains("2x3"), ShapeError);
}

TEST_CASE("matmul gradient matches finite differences over seeds") {
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
        Rng rng(seed);
        auto a = random_tensor<double>({3, 3}, rng);
        auto b = random_tensor<double>({3, 3}, rng);
        auto w = random_tensor<double>({3, 3}, rng, -1, 1, false);
        auto res = gradcheck<double>(
            [&](Tape<double>& t) { return sum(t, mul(t, matmul(t, a, b), w)); }, {a, b});
        CHECK(res.max_rel_err < 1e-6);
    }
}

TEST_CASE("conv2d identity, box kernel, output extent") {
    Tape<double> tape;
    Rng rng(7);
    auto x = random_tensor<double>({4, 4, 1}, rng, 0, 1, false);
    auto k1 = mk({1, 1, 1, 1}, {1.0});
    auto y = conv2d(tape, x, k1, 1, 0);
    for (size_t i = 0; i < x->values.size(); ++i) CHECK(y->values[i] == x->values[i]);

    const double v = 0.37;
    auto xc = make_tensor<double>({5, 5, 1});
    std::fill(xc->values.begin(), xc->values.end(), v);
    auto box = make_tensor<double>({3, 3, 1, 1});
    std::fill(box->values.begin(), box->values.end(), 1.0);
    auto z = conv2d(tape, xc, box, 1, 1);
    CHECK(z->dims == std::vector<int>{5, 5, 1});
    CHECK(z->values[2 * 5 + 2] == doctest::Approx(9 * v));  // interior pixel

    auto bad = make_tensor<double>({2, 2, 1, 1});
    CHECK_THROWS_AS(conv2d(tape, xc, bad, 2, 0), ShapeError);
}

TEST_CASE("conv2d gradient vs finite differences") {
    for (std::uint64_t seed : {11, 12, 13, 14, 15}) {
        Rng rng(seed);
        auto x = random_tensor<double>({5, 5, 2}, rng);
        auto k = random_tensor<double>({3, 3, 2, 2}, rng);
        auto b = random_tensor<double>({2}, rng);
        auto w = random_tensor<double>({5, 5, 2}, rng, -1, 1, false);
        auto res = gradcheck<double>(
            [&](Tape<double>& t) {
                return sum(t, mul(t, conv2d(t, x, k, b, 1, 1), w));
            },
            {x, k, b});
        CHECK(res.max_rel_err < 1e-5);
    }
}

TEST_CASE("maxpool2x2 forward and gradient routing") {
    Tape<double> tape;
    auto x = mk({2, 2, 1}, {1, 5, 3, 2}, true);
    auto y = maxpool2x2(tape, x);
    CHECK(y->values[0] == 5.0);
    auto loss = sum(tape, y);
    tape.backward(loss);
    CHECK(x->grad[1] == 1.0);
    CHECK(x->grad[0] == 0.0);

    for (std::uint64_t seed : {21, 22, 23, 24, 25}) {
        Rng rng(seed);
        auto xin = random_tensor<double>({4, 4, 3}, rng);
        auto w = random_tensor<double>({2, 2, 3}, rng, -1, 1, false);
        auto res = gradcheck<double>(
            [&](Tape<double>& t) { return sum(t, mul(t, maxpool2x2(t, xin), w)); }, {xin});
        CHECK(res.max_rel_err < 1e-6);
    }
}

TEST_CASE("softmax_cols examples and invariances") {
    Tape<double> tape;
    auto a = mk({2, 1}, {0, 0});
    auto s = softmax_cols(tape, a);
    CHECK(s->values[0] == doctest::Approx(0.5));
    CHECK(s->values[1] == doctest::Approx(0.5));

    auto b = mk({2, 1}, {std::log(1.0), std::log(3.0)});
    auto sb = softmax_cols(tape, b);
    CHECK(sb->values[0] == doctest::Approx(0.25));
    CHECK(sb->values[1] == doctest::Approx(0.75));

    Rng rng(31);
    for (int rep = 0; rep < 20; ++rep) {
        auto m = random_tensor<double>({4, 5}, rng, -3, 3, false);
        auto shifted = make_tensor<double>(m->dims, m->values);
        for (int j = 0; j < 5; ++j) {
            const double c = rng.uniform(-2, 2);
            for (int i = 0; i < 4; ++i) shifted->values[static_cast<size_t>(i) * 5 + j] += c;
        }
        auto s1 = softmax_cols(g_tape, m);
        auto s2 = softmax_cols(g_tape, shifted);
        for (size_t i = 0; i < s1->values.size(); ++i)
            CHECK(std::abs(s1->values[i] - s2->values[i]) < 1e-12);
        for (int j = 0; j < 5; ++j) {
            double col = 0;
            for (int i = 0; i < 4; ++i) col += s1->values[static_cast<size_t>(i) * 5 + j];
            CHECK(std::abs(col - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("softmax_cols gradient") {
    for (std::uint64_t seed : {41, 42, 43, 44, 45}) {
        Rng rng(seed);
        auto a = random_tensor<double>({4, 3}, rng, -2, 2);
        auto w = random_tensor<double>({4, 3}, rng, -1, 1, false);
        auto res = gradcheck<double>(
            [&](Tape<double>& t) { return sum(t, mul(t, softmax_cols(t, a), w)); }, {a});
        CHECK(res.max_rel_err < 1e-6);
    }
}

TEST_CASE("reduce_max_spatial value, tie rule, gradient routing") {
    Tape<double> tape;
    auto s = make_tensor<double>({2, 1, 2});
    s->values = {0.1, 0.4, 0.9, 0.4};  // channel 0: {0.1, 0.9}; channel 1: {0.4, 0.4}
    auto mx = reduce_max_spatial(tape, s);
    CHECK(mx.values->values[0] == 0.9);
    CHECK(mx.argmax[0] == std::pair<int, int>{1, 0});
    CHECK(mx.values->values[1] == 0.4);
    CHECK(mx.argmax[1] == std::pair<int, int>{0, 0});  // all-equal: first row-major cell

    for (std::uint64_t seed : {51, 52, 53, 54, 55}) {
        Rng rng(seed);
        auto sin = random_tensor<double>({3, 3, 2}, rng);
        auto w = random_tensor<double>({2, 1}, rng, -1, 1, false);
        auto res = gradcheck<double>(
            [&](Tape<double>& t) { return sum(t, mul(t, reduce_max_spatial(t, sin).values, w)); },
            {sin});
        CHECK(res.max_rel_err < 1e-6);
    }

    // gradient lands only on the argmax cell
    Tape<double> t2;
    Rng rng61(61);
    auto sg = random_tensor<double>({2, 2, 1}, rng61);
    auto m2 = reduce_max_spatial(t2, sg);
    t2.backward(sum(t2, m2.values));
    int nonzero = 0;
    for (double g : sg->grad) nonzero += g != 0.0;
    CHECK(nonzero == 1);
}

TEST_CASE("reduce_min_all and gather ops") {
    Tape<double> tape;
    auto a = mk({2, 3}, {5, 2, 7, 2, 9, 1}, true);
    std::int64_t arg = -1;
    auto mn = reduce_min_all(tape, a, &arg);
    CHECK(mn->values[0] == 1.0);
    CHECK(arg == 5);

    auto g = gather_cols(tape, a, {0, 2});
    CHECK(g->values == std::vector<double>{5, 7, 2, 1});
    CHECK_THROWS_AS(gather_cols(tape, a, {3}), ShapeError);

    for (std::uint64_t seed : {71, 72, 73, 74, 75}) {
        Rng rng(seed);
        auto x = random_tensor<double>({3, 4}, rng);
        auto res = gradcheck<double>(
            [&](Tape<double>& t) {
                return add(t, reduce_min_all(t, gather_cols(t, x, {1, 3})),
                           sum(t, gather_rows(t, x, {0, 2})));
            },
            {x});
        CHECK(res.max_rel_err < 1e-6);
    }
}

TEST_CASE("pairwise_sqdist exactness and gradient") {
    Tape<double> tape;
    auto x = mk({1, 2}, {1, 0});
    auto y = mk({2, 2}, {0, 1, 1, 0});
    auto d = pairwise_sqdist(tape, x, y);
    CHECK(d->values[0] == 2.0);
    CHECK(d->values[1] == 0.0);  // identical rows: exact zero

    for (std::uint64_t seed : {81, 82, 83, 84, 85}) {
        Rng rng(seed);
        auto a = random_tensor<double>({3, 4}, rng);
        auto b = random_tensor<double>({2, 4}, rng);
        auto w = random_tensor<double>({3, 2}, rng, -1, 1, false);
        auto res = gradcheck<double>(
            [&](Tape<double>& t) { return sum(t, mul(t, pairwise_sqdist(t, a, b), w)); }, {a, b});
        CHECK(res.max_rel_err < 1e-6);
    }
}

TEST_CASE("elementwise suite gradients over seeds") {
    for (std::uint64_t seed : {91, 92, 93, 94, 95}) {
        Rng rng(seed);
        auto a = random_tensor<double>({3, 3}, rng, 0.2, 2.0);
        auto b = random_tensor<double>({3, 3}, rng, 0.2, 2.0);
        auto w = random_tensor<double>({3, 3}, rng, -1, 1, false);
        auto weighted_sum = [&](Tape<double>& t, TensorPtr<double> v) {
            return sum(t, mul(t, v, w));
        };
        std::vector<std::pair<const char*, std::function<TensorPtr<double>(Tape<double>&)>>> ops{
            {"add", [&](Tape<double>& t) { return weighted_sum(t, add(t, a, b)); }},
            {"sub", [&](Tape<double>& t) { return weighted_sum(t, sub(t, a, b)); }},
            {"mul", [&](Tape<double>& t) { return weighted_sum(t, mul(t, a, b)); }},
            {"div", [&](Tape<double>& t) { return weighted_sum(t, div(t, a, b)); }},
            {"scale", [&](Tape<double>& t) { return weighted_sum(t, scale(t, a, 1.7)); }},
            {"add_scalar", [&](Tape<double>& t) { return weighted_sum(t, add_scalar(t, a, 0.3)); }},
            {"exp", [&](Tape<double>& t) { return weighted_sum(t, exp_op(t, a)); }},
            {"log", [&](Tape<double>& t) { return weighted_sum(t, log_op(t, a)); }},
            {"sqrt", [&](Tape<double>& t) { return weighted_sum(t, sqrt_op(t, a)); }},
            {"relu", [&](Tape<double>& t) { return weighted_sum(t, relu(t, add_scalar(t, a, -1.0))); }},
            {"sigmoid", [&](Tape<double>& t) { return weighted_sum(t, sigmoid(t, a)); }},
            {"square", [&](Tape<double>& t) { return weighted_sum(t, square(t, a)); }},
            {"neg", [&](Tape<double>& t) { return weighted_sum(t, neg(t, a)); }},
            {"clamp", [&](Tape<double>& t) { return weighted_sum(t, clamp(t, a, 0.5, 1.5)); }},
            {"sum", [&](Tape<double>& t) { return sum(t, a); }},
            {"mean", [&](Tape<double>& t) { return mean(t, a); }},
            {"transpose", [&](Tape<double>& t) { return sum(t, mul(t, transpose(t, a), w)); }},
            {"reshape", [&](Tape<double>& t) { return weighted_sum(t, reshape(t, reshape(t, a, {9, 1}), {3, 3})); }},
            {"cosine", [&](Tape<double>& t) { return cosine(t, a, b); }},
        };
        for (auto& [name, fn] : ops) {
            INFO("op = " << name << ", seed = " << seed);
            auto res = gradcheck<double>(fn, {a, b});
            CHECK(res.max_rel_err < 1e-6);
        }
    }
}

TEST_CASE("cosine examples") {
    Tape<double> tape;
    auto v = mk({3}, {0.3, -0.2, 0.9});
    CHECK(cosine(tape, v, v)->values[0] == doctest::Approx(1.0).epsilon(1e-7));
    auto u = mk({2}, {1, 0});
    auto w = mk({2}, {0, 1});
    CHECK(cosine(tape, u, w)->values[0] == doctest::Approx(0.0));
}

TEST_CASE("log rejects non-positive input") {
    Tape<double> tape;
    auto a = mk({2}, {1.0, 0.0});
    CHECK_THROWS_AS(log_op(tape, a), DomainError);
}

TEST_CASE("concat_rows forward and gradient") {
    Tape<double> tape;
    auto a = mk({1, 2}, {1, 2}, true);
    auto b = mk({2, 2}, {3, 4, 5, 6}, true);
    auto c = concat_rows(tape, {a, b});
    CHECK(c->dims == std::vector<int>{3, 2});
    CHECK(c->values == std::vector<double>{1, 2, 3, 4, 5, 6});

    Rng rng(101);
    auto x = random_tensor<double>({2, 3}, rng);
    auto y = random_tensor<double>({1, 3}, rng);
    auto w = random_tensor<double>({3, 3}, rng, -1, 1, false);
    auto res = gradcheck<double>(
        [&](Tape<double>& t) { return sum(t, mul(t, concat_rows(t, {x, y}), w)); }, {x, y});
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("kernel determinism: identical inputs give bitwise-identical outputs") {
    Rng rng(111);
    auto a = random_tensor<double>({16, 16}, rng, -1, 1, false);
    auto b = random_tensor<double>({16, 16}, rng, -1, 1, false);
    auto r1 = matmul(g_tape, a, b);
    auto r2 = matmul(g_tape, a, b);
    CHECK(std::memcmp(r1->values.data(), r2->values.data(), r1->values.size() * sizeof(double)) == 0);

    auto d1 = pairwise_sqdist(g_tape, a, b);
    auto d2 = pairwise_sqdist(g_tape, a, b);
    CHECK(std::memcmp(d1->values.data(), d2->values.data(), d1->values.size() * sizeof(double)) == 0);
}

TEST_CASE("gradient accumulation is additive and reset is explicit") {
    Tape<double> tape;
    auto a = mk({2}, {1.0, 2.0}, true);
    auto l1 = sum(tape, a);
    tape.backward(l1);
    CHECK(a->grad[0] == 1.0);
    Tape<double> tape2;
    auto l2 = sum(tape2, scale(tape2, a, 3.0));
    tape2.backward(l2);
    CHECK(a->grad[0] == 4.0);  // accumulated across sweeps until zeroed
    a->zero_grad();
    CHECK(a->grad[0] == 0.0);
}
