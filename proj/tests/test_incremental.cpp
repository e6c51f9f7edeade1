#include <doctest.h>

#include <cmath>
#include <random>

#include "hyperfscil/dataset.hpp"
#include "hyperfscil/errors.hpp"
#include "hyperfscil/hyper_rpl.hpp"
#include "hyperfscil/incremental.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace hyperfscil;
using diff::Tape;
using diff::Var;

namespace {

using Matrix = std::vector<std::vector<double>>;

Matrix constant_matrix(std::size_t t, double v) {
    Matrix d(t, std::vector<double>(t, v));
    for (std::size_t i = 0; i < t; ++i) d[i][i] = 0.0;
    return d;
}

Matrix random_distances(std::mt19937_64& rng, std::size_t t) {
    std::uniform_real_distribution<double> u(0.0, 4.0);
    Matrix d(t, std::vector<double>(t, 0.0));
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = i + 1; j < t; ++j) d[i][j] = d[j][i] = u(rng);
    return d;
}

double metric(const Matrix& d, double tau) { return metric_loss_from_distances(d, tau); }

BackboneConfig net_config(std::size_t in) {
    BackboneConfig net;
    net.input_dim = in;
    net.hidden_dims = {16};
    net.embed_dim = 8;
    net.frozen_prefix_layers = 1;
    return net;
}

std::vector<Sample> select(const FeatureDataset& data, const std::vector<ClassId>& classes, Split split,
                           std::size_t per_class) {
    std::vector<Sample> out;
    for (ClassId c : classes) {
        const auto idx = data.indices_of(c, split);
        for (std::size_t i = 0; i < std::min(per_class, idx.size()); ++i) out.push_back(data.samples()[idx[i]]);
    }
    return out;
}

BaseBranch trained_base(const FeatureDataset& data, std::uint64_t seed) {
    BaseTrainConfig train;
    train.epochs = 30;
    train.batch_size = 16;
    const auto samples = select(data, {0, 1, 2}, Split::train, 1000);
    return train_base_session(samples, {0, 1, 2}, net_config(data.dim()), {}, {}, train, seed);
}

double nme_accuracy(const NovelBranch& branch, const std::vector<Sample>& tests) {
    const auto means = branch.means();
    std::size_t ok = 0;
    for (const auto& s : tests) ok += branch.classify(s.features, means) == s.label;
    return static_cast<double>(ok) / static_cast<double>(tests.size());
}

} // namespace

TEST_CASE("metric loss examples") {
    CHECK(metric(Matrix{{0.0, 1.7}, {1.7, 0.0}}, 1.0) == 0.0);
    CHECK(metric(constant_matrix(4, 0.0), 1.0) == doctest::Approx(std::log(3.0)).epsilon(1e-14));
    const std::vector<double> row{0.0, 0.0, 0.0};
    CHECK(metric_pair_term(std::span<const double>(row), 0, 1, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK_THROWS_AS(metric(constant_matrix(3, 1.0), 1.0), ContractError);
    CHECK_THROWS_AS(metric(constant_matrix(4, 1.0), 0.0), ContractError);

    const BallConfig ball{0.1, 1e-5};
    const std::vector<std::vector<double>> two{{0.3, 0.1}, {-0.5, 2.0}};
    CHECK(hyper_metric_loss(two, 0.0, ball, 1.0) == 0.0);
    const std::vector<std::vector<double>> three{{0.3, 0.1}, {-0.5, 2.0}, {1.0, 1.0}};
    CHECK_THROWS_AS(hyper_metric_loss(three, 0.0, ball, 1.0), ContractError);
}

TEST_CASE("metric loss is nonnegative, monotone and temperature-scale invariant") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t t = 2 * (1 + trial % 3);
        const auto d = random_distances(rng, t);
        const double tau = 0.5 + 0.01 * trial;
        const double base = metric(d, tau);
        CHECK(base >= 0.0);
        if (t < 4) continue;

        // Sample 0's positive is 1; 2 is a negative for it.
        auto farther_negative = d;
        farther_negative[0][2] += 0.5;
        farther_negative[2][0] += 0.5;
        CHECK(metric(farther_negative, tau) <= base + 1e-12);
        auto farther_positive = d;
        farther_positive[0][1] += 0.5;
        farther_positive[1][0] += 0.5;
        CHECK(metric(farther_positive, tau) >= base - 1e-12);

        const double s = 2.5;
        auto scaled = d;
        for (auto& r : scaled)
            for (auto& v : r) v /= s;
        CHECK(metric(scaled, tau / s) == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("metric loss gradients on a four-sample fixture") {
    std::mt19937_64 rng(32);
    for (double c : {0.1, 0.5, 1.0}) {
        ParameterStore store;
        store.add("e", 4, 3, testing_support::random_point(rng, 12, 2.0));
        store.add("log_scale", 1, 1, {0.2});
        const BallConfig ball{c, 1e-5};
        const LossBuilder loss = [&](Tape&, const Binding& bind) {
            std::vector<std::vector<Var>> rows;
            for (std::size_t i = 0; i < 4; ++i) {
                const auto r = bind.row("e", i);
                rows.emplace_back(r.begin(), r.end());
            }
            return hyper_metric_loss(rows, bind["log_scale"][0], ball, 1.0);
        };
        CHECK(finite_difference_check(loss, store, 1e-5, 1e-4).passed());
    }
}

TEST_CASE("cross-entropy examples") {
    CHECK(cross_entropy_loss(std::span<const double>(std::vector<double>{2.0}), 0) == 0.0);
    const std::vector<double> eq{0.3, 0.3};
    CHECK(cross_entropy_loss(std::span<const double>(eq), 1) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    const std::vector<double> z{2.0, 0.0};
    const double e2 = std::exp(2.0);
    CHECK(cross_entropy_loss(std::span<const double>(z), 0) == doctest::Approx(-std::log(e2 / (e2 + 1.0))).epsilon(1e-14));
    CHECK(cross_entropy_loss(std::span<const double>(z), 0) == doctest::Approx(0.1269).epsilon(1e-3));
    CHECK_THROWS_AS(cross_entropy_loss(std::span<const double>(z), 2), LabelError);
}

TEST_CASE("distillation examples") {
    const std::vector<double> zero{0.0};
    CHECK(distillation_loss(std::span<const double>(zero), zero, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    const std::vector<double> z{1.0, -2.0};
    CHECK(distillation_loss(std::span<const double>(z), z, 0) == 0.0);
    CHECK_THROWS_AS(distillation_loss(std::span<const double>(z), z, 3), ShapeError);

    std::mt19937_64 rng(33);
    std::normal_distribution<double> normal(0.0, 3.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> old(5);
        for (auto& v : old) v = normal(rng);
        Tape tape;
        std::vector<Var> fresh;
        for (double v : old) fresh.push_back(tape.variable(v));
        fresh.push_back(tape.variable(normal(rng)));
        diff::backward_grad(distillation_loss(std::span<const Var>(fresh), old, 5));
        for (const Var& v : fresh) CHECK(std::abs(v.grad()) <= 1e-10);
    }
}

TEST_CASE("adaptive distillation weight") {
    CHECK(adaptive_zeta(0, 4, 1.0) == 0.0);
    CHECK(adaptive_zeta(4, 4, 1.0) == 1.0);
    CHECK(adaptive_zeta(16, 4, 1.0) == 2.0);
    CHECK(adaptive_zeta(16, 4, 0.5) == 1.0);
    CHECK_THROWS_AS(adaptive_zeta(3, 0, 1.0), ContractError);
    CHECK(combine_incremental_loss(0.5, 0.2, 0.3, 1.0, 1.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(combine_incremental_loss(0.5, 0.2, 0.3, 0.0, 0.0) == 0.5);
}

TEST_CASE("herding examples") {
    const std::vector<std::vector<double>> line{{0.0}, {1.0}, {2.0}};
    CHECK(herding_select(line, std::vector<double>{1.0}, 2) == std::vector<std::size_t>{1, 0});
    CHECK(herding_select(line, std::vector<double>{1.9}, 1) == std::vector<std::size_t>{2});
    const std::vector<std::vector<double>> same(4, std::vector<double>{0.5, 0.5});
    CHECK(herding_select(same, std::vector<double>{0.5, 0.5}, 10) == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK_THROWS_AS(herding_select(line, std::vector<double>{1.0}, 0), ContractError);
    CHECK_THROWS_AS(herding_select({}, std::vector<double>{1.0}, 1), ContractError);
}

TEST_CASE("herding matches exhaustive enumeration") {
    std::mt19937_64 rng(34);
    std::uniform_int_distribution<int> small(-2, 2);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + trial % 6, dim = 1 + trial % 3;
        const bool grid = trial % 2 == 0;  // integer grids produce exact ties
        std::vector<std::vector<double>> e(n, std::vector<double>(dim));
        std::vector<double> mean(dim, 0.0);
        for (auto& row : e)
            for (std::size_t k = 0; k < dim; ++k) {
                row[k] = grid ? small(rng) : normal(rng);
                mean[k] += row[k] / static_cast<double>(n);
            }
        const std::size_t budget = 1 + static_cast<std::size_t>(trial % 7);
        CHECK(herding_select(e, mean, budget) == oracles::herding_by_enumeration(e, mean, budget));
    }
}

TEST_CASE("nearest mean of exemplars") {
    CHECK(nme_classify(EuclideanVector({5.0, 5.0}), ClassMeans{{3, EuclideanVector({0.0, 0.0})}}) == 3);
    const ClassMeans ab{{0, EuclideanVector({0.0, 0.0})}, {1, EuclideanVector({2.0, 0.0})}};
    CHECK(nme_classify(EuclideanVector({0.9, 0.0}), ab) == 0);
    CHECK(nme_classify(EuclideanVector({1.0, 0.0}), ab) == 0);
    CHECK(nme_classify(EuclideanVector({1.8, 0.0}), ab) == 1);
    CHECK_THROWS_AS(nme_classify(EuclideanVector({1.0, 0.0}), ClassMeans{}), ContractError);

    std::mt19937_64 rng(35);
    std::uniform_int_distribution<int> small(-2, 2);
    for (int trial = 0; trial < 500; ++trial) {
        ClassMeans means;
        std::map<std::size_t, std::vector<double>> plain;
        for (std::size_t c = 0; c < 1 + static_cast<std::size_t>(trial % 5); ++c) {
            std::vector<double> mu{double(small(rng)), double(small(rng))};
            means.emplace(c * 3 + 1, EuclideanVector(mu));
            plain.emplace(c * 3 + 1, mu);
        }
        const std::vector<double> x{small(rng) * 0.5, small(rng) * 0.5};
        CHECK(nme_classify(EuclideanVector(x), means) == oracles::nearest_mean(x, plain));
    }
}

TEST_CASE("class means track the current backbone") {
    BackboneConfig cfg = net_config(2);
    cfg.frozen_prefix_layers = 0;
    const Backbone net(cfg);
    ParameterStore store(SgdConfig{0.1, 0.0, 0.0, {}});
    net.init_params(store, 3);
    ExemplarMemory memory(2);
    memory.store(0, {{{1.0, 0.0}, {}}});
    memory.store(1, {{{0.5, 0.5}, {}}, {{-0.5, 1.5}, {}}});
    const auto before = class_means(memory, net, store);
    CHECK(before.at(0) == net.embed(std::vector<double>{1.0, 0.0}, store));
    const auto e1 = net.embed(std::vector<double>{0.5, 0.5}, store);
    const auto e2 = net.embed(std::vector<double>{-0.5, 1.5}, store);
    for (std::size_t k = 0; k < e1.size(); ++k) CHECK(before.at(1)[k] == doctest::Approx((e1[k] + e2[k]) / 2.0));

    for (auto& t : store.tensors()) std::fill(t.grads.begin(), t.grads.end(), 0.3);
    sgd_step(store, 0);
    CHECK_FALSE(class_means(memory, net, store).at(1) == before.at(1));

    CHECK_THROWS_AS(memory.store(2, std::vector<Exemplar>(3)), ContractError);
    ExemplarMemory holes(2);
    holes.store(4, {});
    CHECK_THROWS_AS(class_means(holes, net, store), ContractError);
}

TEST_CASE("an incremental session with zero epochs only grows the branch") {
    const auto data = generate_synthetic({7, 20, 10, 6, 8.0, 1});
    const auto base = trained_base(data, 1);
    IncrementalTrainConfig train;
    train.epochs = 0;
    auto branch = init_novel_branch(base, {}, train);
    const ParameterStore before = branch.params;
    train_incremental_session(branch, select(data, {3, 4}, Split::train, 5), 2, train, 7);
    CHECK(branch.classes == std::vector<ClassId>{3, 4});
    CHECK(branch.params.at(NovelBranch::kHeadWeight).rows == 2);
    CHECK(branch.memory.classes().size() == 2);
    for (const auto& [id, ex] : branch.memory.classes()) CHECK(ex.size() == 5);
    for (const auto& t : before.tensors())
        if (t.name != NovelBranch::kHeadWeight && t.name != NovelBranch::kHeadBias)
            CHECK(t.values == branch.params.at(t.name).values);
}

TEST_CASE("novel classes on separable blobs are classified perfectly") {
    const auto data = generate_synthetic({7, 20, 10, 6, 10.0, 2});
    const auto base = trained_base(data, 2);
    IncrementalTrainConfig train;
    auto branch = init_novel_branch(base, {}, train);
    train_incremental_session(branch, select(data, {3, 4}, Split::train, 5), 2, train, 8);
    CHECK(nme_accuracy(branch, select(data, {3, 4}, Split::test, 100)) == 1.0);
    CHECK_THROWS_AS(train_incremental_session(branch, select(data, {4, 5}, Split::train, 5), 3, train, 9),
                    ProtocolError);
}

TEST_CASE("memory respects the budget across sessions and the metric term runs") {
    const auto data = generate_synthetic({9, 20, 10, 6, 8.0, 3});
    const auto base = trained_base(data, 3);
    IncrementalTrainConfig train;
    train.epochs = 6;
    train.exemplar_budget = 3;
    train.metric_start_session = 2;
    train.metric_start_epoch = 2;
    auto branch = init_novel_branch(base, {}, train);
    for (std::size_t s = 0; s < 3; ++s) {
        const ClassId first = 3 + 2 * s;
        train_incremental_session(branch, select(data, {first, first + 1}, Split::train, 5), s + 2, train, s);
        for (const auto& [id, ex] : branch.memory.classes()) CHECK(ex.size() <= 3);
        for (double l : branch.loss_history) CHECK(std::isfinite(l));
    }
    CHECK(branch.memory.classes().size() == 6);
    CHECK(branch.old_class_count == 4);
}

TEST_CASE("exemplar replay does not hurt earlier novel classes") {
    double with = 0.0, without = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto data = generate_synthetic({7, 20, 10, 6, 8.0, 40 + seed});
        const auto base = trained_base(data, seed);
        for (bool replay : {true, false}) {
            IncrementalTrainConfig train;
            train.replay = replay;
            auto branch = init_novel_branch(base, {}, train);
            train_incremental_session(branch, select(data, {3, 4}, Split::train, 5), 2, train, seed);
            train_incremental_session(branch, select(data, {5, 6}, Split::train, 5), 3, train, seed + 100);
            const double acc = nme_accuracy(branch, select(data, {3, 4}, Split::test, 100));
            (replay ? with : without) += acc / 5.0;
        }
    }
    MESSAGE("session-2 NME accuracy with replay " << with << ", without " << without);
    CHECK(with >= without);
}

TEST_CASE("incremental config validation") {
    CHECK_THROWS_AS((IncrementalLossConfig{0.0, 1.0, 1.0, 0}.validate()), ConfigError);
    CHECK_THROWS_AS((IncrementalLossConfig{1.0, -1.0, 1.0, 0}.validate()), ConfigError);
    CHECK_THROWS_AS(ExemplarMemory(0), ConfigError);
}
