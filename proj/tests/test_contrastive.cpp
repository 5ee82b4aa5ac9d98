#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "repsnet/contrastive.hpp"
#include "repsnet/grad_check.hpp"
#include "repsnet/tensor.hpp"

using namespace repsnet;

namespace {

// Rows of an identity-like matrix: orthonormal unit embeddings.
Tensor orthonormal_rows(int n, int d) {
    std::vector<double> v(static_cast<size_t>(n) * d, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * d + i] = 1.0;
    return Tensor({n, d}, std::move(v));
}

double loss_from_sims(std::vector<double> sims, int n, double tau) {
    Tape tape(false);
    Tensor s({n, n}, std::move(sims));
    return detail::nce_from_sims(tape, s, tau).item();
}

} // namespace

TEST_CASE("cosine similarity endpoints") {
    Tensor a({2}, {0.6, 0.8});
    REQUIRE_THAT(cosine_sim(a, a), Catch::Matchers::WithinAbs(1.0, 1e-12));
    REQUIRE_THAT(cosine_sim(Tensor({2}, {1, 0}), Tensor({2}, {0, 1})), Catch::Matchers::WithinAbs(0.0, 1e-12));
    REQUIRE_THAT(cosine_sim(Tensor({2}, {1, 0}), Tensor({2}, {1, 1})),
                 Catch::Matchers::WithinAbs(0.7071067811865475, 1e-12));
    REQUIRE_THROWS_AS(cosine_sim(Tensor({2}, {0, 0}), a), ContractError);
}

TEST_CASE("a single pair has zero directional loss") {
    Tape tape(false);
    Tensor x({1, 4}, {1, 0, 0, 0});
    Tensor y({1, 4}, {0, 1, 0, 0});
    REQUIRE(info_nce_directional(tape, x, y, 0.07).item() == 0.0);
}

TEST_CASE("two orthogonal pairs match the scalar evaluation") {
    Tape tape(false);
    Tensor e = orthonormal_rows(2, 4);
    Tensor loss = info_nce_directional(tape, e, e, 1.0);
    REQUIRE_THAT(loss.item(), Catch::Matchers::WithinAbs(std::log(1.0 + std::exp(-1.0)), 1e-12));
    REQUIRE_THAT(loss.item(), Catch::Matchers::WithinAbs(0.31326, 1e-5));
}

TEST_CASE("identical embeddings give the uniform log N loss") {
    Tape tape(false);
    std::vector<double> v(3 * 4);
    for (int i = 0; i < 3; ++i) { v[static_cast<size_t>(i) * 4] = 1.0; }
    Tensor x({3, 4}, v);
    REQUIRE_THAT(info_nce_directional(tape, x, x, 0.5).item(),
                 Catch::Matchers::WithinAbs(std::log(3.0), 1e-12));
}

TEST_CASE("bidirectional loss doubles the symmetric case") {
    Tape tape(false);
    Tensor e = orthonormal_rows(2, 4);
    ContrastiveConfig cfg;
    cfg.temperature = 1.0;
    cfg.alpha = 1.0;
    Tensor total = encoder_loss(tape, e, e, cfg);
    REQUIRE_THAT(total.item(), Catch::Matchers::WithinAbs(0.62652, 1e-5));
    REQUIRE_THAT(total.item(), Catch::Matchers::WithinAbs(2.0 * std::log(1.0 + std::exp(-1.0)), 1e-12));
}

TEST_CASE("swapping inputs leaves the bidirectional loss bit-identical") {
    Rng rng(77);
    std::vector<double> rows;
    for (int i = 0; i < 4; ++i) {
        std::vector<double> r(6);
        double n2 = 0.0;
        for (double& x : r) { x = rng.normal(); n2 += x * x; }
        for (double& x : r) x /= std::sqrt(n2);
        rows.insert(rows.end(), r.begin(), r.end());
    }
    Tensor a({4, 6}, rows);
    std::vector<double> rows_b;
    for (int i = 0; i < 4; ++i) {
        std::vector<double> r(6);
        double n2 = 0.0;
        for (double& x : r) { x = rng.normal(); n2 += x * x; }
        for (double& x : r) x /= std::sqrt(n2);
        rows_b.insert(rows_b.end(), r.begin(), r.end());
    }
    Tensor b({4, 6}, rows_b);
    Tape tape(false);
    ContrastiveConfig cfg;
    REQUIRE(encoder_loss(tape, a, b, cfg).item() == encoder_loss(tape, b, a, cfg).item());
}

TEST_CASE("lowering an off-diagonal similarity never raises the loss") {
    std::vector<double> base = {0.9, 0.2, -0.1,
                                0.3, 0.8, 0.0,
                                -0.2, 0.4, 0.7};
    const double tau = 0.25;
    const double l0 = loss_from_sims(base, 3, tau);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            if (i == j) continue;
            for (double delta : {0.05, 0.3, 1.0}) {
                std::vector<double> lowered = base;
                lowered[static_cast<size_t>(i) * 3 + j] -= delta;
                REQUIRE(loss_from_sims(lowered, 3, tau) <= l0 + 1e-12);
            }
        }
    }
}

TEST_CASE("loss respects the softmax-derived upper bound") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + static_cast<int>(rng.uniform_int(4));
        std::vector<double> sims(static_cast<size_t>(n) * n);
        double smax = -10.0, smin = 10.0;
        for (double& s : sims) {
            s = rng.uniform() * 2.0 - 1.0;
            smax = std::max(smax, s);
            smin = std::min(smin, s);
        }
        const double tau = 0.2 + rng.uniform();
        const double alpha = 0.5 + rng.uniform();
        Tape tape(false);
        Tensor s({n, n}, sims);
        Tensor fwd = detail::nce_from_sims(tape, s, tau);
        Tensor bwd = detail::nce_from_sims(tape, transpose(tape, s), tau);
        const double total = alpha * (fwd.item() + bwd.item());
        const double bound = 2.0 * alpha * (std::log(static_cast<double>(n)) + (smax - smin) / tau);
        REQUIRE(total <= bound + 1e-9);
    }
}

TEST_CASE("contrastive gradients match finite differences") {
    for (int n : {2, 4}) {
        Rng rng(static_cast<uint64_t>(100 + n));
        Tensor a = Tensor::randn({n, 5}, rng, 0.8);
        Tensor b = Tensor::randn({n, 5}, rng, 0.8);
        auto forward = [&](Tape& t) {
            // normalize inside the graph so gradients flow through the norm too
            std::vector<Tensor> xs, ys;
            for (int i = 0; i < n; ++i) {
                xs.push_back(l2_normalize(t, reshape(t, embedding_rows(t, a, {i}), {5})));
                ys.push_back(l2_normalize(t, reshape(t, embedding_rows(t, b, {i}), {5})));
            }
            return encoder_loss(t, stack_rows(t, xs), stack_rows(t, ys), ContrastiveConfig{});
        };
        auto report = check_gradients({a, b}, forward, 1e-5);
        REQUIRE(report.max_rel_err < 1e-4);
    }
}

TEST_CASE("invalid hyperparameters are rejected") {
    Tape tape(false);
    Tensor e = orthonormal_rows(2, 4);
    REQUIRE_THROWS_AS(info_nce_directional(tape, e, e, 0.0), ContractError);
    REQUIRE_THROWS_AS(info_nce_directional(tape, e, e, -1.0), ContractError);
    ContrastiveConfig bad;
    bad.alpha = 0.0;
    REQUIRE_THROWS_AS(encoder_loss(tape, e, e, bad), ContractError);
    Tensor rect({2, 3}, {1, 0, 0, 0, 1, 0});
    REQUIRE_THROWS_AS(info_nce_directional(tape, rect, e, 1.0), DimensionError);
}
