#include "hyperfscil/incremental.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "hyperfscil/hyper_rpl.hpp"

namespace hyperfscil {

void IncrementalLossConfig::validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be > 0");
    if (!(eta >= 0.0)) throw ConfigError("eta must be >= 0");
    if (!(zeta_base >= 0.0)) throw ConfigError("zeta_base must be >= 0");
}

double adaptive_zeta(std::size_t old_count, std::size_t new_count, double zeta_base) {
    if (new_count == 0) throw ContractError("adaptive_zeta: new class count must be >= 1");
    if (old_count == 0) return 0.0;
    return zeta_base * std::sqrt(static_cast<double>(old_count) / static_cast<double>(new_count));
}

ExemplarMemory::ExemplarMemory(std::size_t budget_per_class) : budget_(budget_per_class) {
    if (budget_ == 0) throw ConfigError("exemplar budget must be >= 1");
}

void ExemplarMemory::store(ClassId id, std::vector<Exemplar> exemplars) {
    if (exemplars.size() > budget_)
        throw ContractError("class " + std::to_string(id) + ": " + std::to_string(exemplars.size()) +
                            " exemplars exceed the budget of " + std::to_string(budget_));
    classes_[id] = std::move(exemplars);
}

std::size_t ExemplarMemory::size() const {
    std::size_t n = 0;
    for (const auto& [id, ex] : classes_) n += ex.size();
    return n;
}

std::vector<std::size_t> herding_select(std::span<const std::vector<double>> embeddings, std::span<const double> mean,
                                        std::size_t budget) {
    if (budget == 0) throw ContractError("herding_select: budget must be >= 1");
    if (embeddings.empty()) throw ContractError("herding_select: no samples");
    const std::size_t dim = mean.size();
    for (const auto& e : embeddings)
        if (e.size() != dim) throw ShapeError("herding_select: embedding dimension mismatch");

    const std::size_t picks = std::min(budget, embeddings.size());
    std::vector<char> taken(embeddings.size(), 0);
    std::vector<double> running(dim, 0.0);
    std::vector<std::size_t> order;
    order.reserve(picks);
    for (std::size_t t = 1; t <= picks; ++t) {
        std::size_t best = embeddings.size();
        double best_dist = 0.0;
        for (std::size_t i = 0; i < embeddings.size(); ++i) {
            if (taken[i]) continue;
            double sq = 0.0;
            for (std::size_t k = 0; k < dim; ++k) {
                const double diff = mean[k] - (running[k] + embeddings[i][k]) / static_cast<double>(t);
                sq += diff * diff;
            }
            if (best == embeddings.size() || sq < best_dist) {
                best = i;
                best_dist = sq;
            }
        }
        taken[best] = 1;
        for (std::size_t k = 0; k < dim; ++k) running[k] += embeddings[best][k];
        order.push_back(best);
    }
    return order;
}

ClassMeans class_means(const ExemplarMemory& memory, const Backbone& backbone, const ParameterStore& params) {
    ClassMeans means;
    for (const auto& [id, exemplars] : memory.classes()) {
        if (exemplars.empty()) throw ContractError("class " + std::to_string(id) + " has no exemplars");
        std::vector<double> acc(backbone.config().embed_dim, 0.0);
        for (const auto& ex : exemplars) {
            const auto e = backbone.embed(ex.raw, params);
            for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += e[k];
        }
        for (auto& a : acc) a /= static_cast<double>(exemplars.size());
        means.emplace(id, EuclideanVector(std::move(acc)));
    }
    return means;
}

ClassId nme_classify(const EuclideanVector& feature, const ClassMeans& means) {
    if (means.empty()) throw ContractError("nme_classify: no class means");
    ClassId best = means.begin()->first;
    double best_dist = -1.0;
    for (const auto& [id, mu] : means) {
        const double d = diff::squared_distance(feature.span(), mu.span());
        if (best_dist < 0.0 || d < best_dist) {
            best = id;
            best_dist = d;
        }
    }
    return best;
}

ClassId nme_classify_hyperbolic(const EuclideanVector& feature, const ClassMeans& means, const HyperbolicHead& head) {
    if (means.empty()) throw ContractError("nme_classify: no class means");
    const auto f = to_hyperbolic(feature, head);
    ClassId best = means.begin()->first;
    double best_dist = -1.0;
    for (const auto& [id, mu] : means) {
        const double d = poincare_distance(f, to_hyperbolic(mu, head), head.ball);
        if (best_dist < 0.0 || d < best_dist) {
            best = id;
            best_dist = d;
        }
    }
    return best;
}

HyperbolicHead NovelBranch::head() const { return {ball, params.at(head_log_scale_name(kPrefix)).values.at(0)}; }

EuclideanVector NovelBranch::embed(std::span<const double> x) const { return net().embed(x, params); }

namespace {

std::vector<double> head_logits(std::span<const double> feature, const ParameterStore& params) {
    const auto& w = params.at(NovelBranch::kHeadWeight);
    const auto& b = params.at(NovelBranch::kHeadBias);
    std::vector<double> out(w.rows);
    for (std::size_t r = 0; r < w.rows; ++r) out[r] = diff::affine(w.row(r), feature, b.values[r]);
    return out;
}

std::vector<diff::Var> head_logits(std::span<const diff::Var> feature, const Binding& bind, std::size_t rows) {
    const auto w = bind[NovelBranch::kHeadWeight];
    const auto b = bind[NovelBranch::kHeadBias];
    const std::size_t cols = feature.size();
    std::vector<diff::Var> out;
    out.reserve(rows);
    for (std::size_t r = 0; r < rows; ++r) out.push_back(diff::affine(w.subspan(r * cols, cols), feature, b[r]));
    return out;
}

} // namespace

std::vector<double> NovelBranch::logits(std::span<const double> x) const {
    return head_logits(embed(x).span(), params);
}

ClassMeans NovelBranch::means() const { return class_means(memory, net(), params); }

ClassId NovelBranch::classify(std::span<const double> x) const { return classify(x, means()); }

ClassId NovelBranch::classify(std::span<const double> x, const ClassMeans& means) const {
    const auto f = embed(x);
    return hyperbolic_nme ? nme_classify_hyperbolic(f, means, head()) : nme_classify(f, means);
}

NovelBranch init_novel_branch(const BaseBranch& base, const IncrementalLossConfig& loss,
                              const IncrementalTrainConfig& train) {
    loss.validate();
    train.sgd.validate();
    NovelBranch branch;
    branch.backbone = base.backbone;
    branch.ball = base.ball;
    branch.loss = loss;
    branch.hyperbolic_nme = train.hyperbolic_nme;
    branch.memory = ExemplarMemory(train.exemplar_budget);
    branch.params = ParameterStore(train.sgd);
    for (std::size_t l = 0; l < base.backbone.layer_count(); ++l) {
        for (const auto& name : {layer_weight_name(BaseBranch::kPrefix, l), layer_bias_name(BaseBranch::kPrefix, l)}) {
            const auto& t = base.params.at(name);
            branch.params.add(name, t.rows, t.cols, t.values);
        }
    }
    const auto& scale = base.params.at(head_log_scale_name(BaseBranch::kPrefix));
    branch.params.add(head_log_scale_name(NovelBranch::kPrefix), 1, 1, scale.values);
    branch.params.add_zeros(NovelBranch::kHeadWeight, 0, base.backbone.embed_dim);
    branch.params.add_zeros(NovelBranch::kHeadBias, 0, 1);
    branch.net().apply_freeze(branch.params);
    return branch;
}

namespace {

struct PoolItem {
    const std::vector<double>* raw;
    std::size_t head_index;
};

} // namespace

void train_incremental_session(NovelBranch& branch, std::span<const Sample> samples, std::size_t session,
                               const IncrementalTrainConfig& train, std::uint64_t seed) {
    if (samples.empty()) throw DatasetError("incremental session has no training samples");

    std::vector<ClassId> new_classes;
    for (const auto& s : samples)
        if (std::find(new_classes.begin(), new_classes.end(), s.label) == new_classes.end()) new_classes.push_back(s.label);
    std::sort(new_classes.begin(), new_classes.end());
    for (ClassId c : new_classes)
        if (std::find(branch.classes.begin(), branch.classes.end(), c) != branch.classes.end())
            throw ProtocolError("class " + std::to_string(c) + " was already learned in an earlier session");

    const Backbone net = branch.net();
    const std::size_t dim = branch.backbone.embed_dim;

    // Snapshot the previous model for distillation.
    branch.old_class_count = branch.classes.size();
    if (branch.old_class_count > 0) branch.old_params = branch.params;
    else branch.old_params.reset();

    // Grow the head by one row per new class.
    std::mt19937_64 rng(seed);
    {
        const auto& w = branch.params.at(NovelBranch::kHeadWeight);
        const auto& b = branch.params.at(NovelBranch::kHeadBias);
        std::vector<double> wv = w.values;
        std::vector<double> bv = b.values;
        std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / static_cast<double>(dim)));
        for (std::size_t n = 0; n < new_classes.size(); ++n) {
            for (std::size_t k = 0; k < dim; ++k) wv.push_back(dist(rng));
            bv.push_back(0.0);
        }
        const std::size_t rows = branch.classes.size() + new_classes.size();
        branch.params.reshape(NovelBranch::kHeadWeight, rows, dim, std::move(wv));
        branch.params.reshape(NovelBranch::kHeadBias, rows, 1, std::move(bv));
    }
    branch.classes.insert(branch.classes.end(), new_classes.begin(), new_classes.end());
    auto head_index = [&](ClassId c) {
        return static_cast<std::size_t>(std::find(branch.classes.begin(), branch.classes.end(), c) - branch.classes.begin());
    };

    std::vector<PoolItem> pool;
    for (const auto& s : samples) pool.push_back({&s.features, head_index(s.label)});
    if (train.replay)
        for (const auto& [id, exemplars] : branch.memory.classes())
            for (const auto& ex : exemplars) pool.push_back({&ex.raw, head_index(id)});

    std::vector<std::vector<double>> old_logits;
    if (branch.old_params) {
        for (const auto& item : pool) {
            const auto f = net.embed(*item.raw, *branch.old_params);
            old_logits.push_back(head_logits(f.span(), *branch.old_params));
        }
    }
    const double zeta = adaptive_zeta(branch.old_class_count, new_classes.size(), branch.loss.zeta_base);

    std::map<std::size_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < pool.size(); ++i) by_class[pool[i].head_index].push_back(i);
    std::vector<std::size_t> pool_classes;
    for (const auto& [c, members] : by_class) pool_classes.push_back(c);

    const std::size_t rows = branch.classes.size();
    const std::size_t batch_size = train.batch_size == 0 ? pool.size() : train.batch_size;
    const std::size_t pairs = branch.loss.pairs_per_epoch == 0 ? pool.size() : branch.loss.pairs_per_epoch;
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);

    branch.loss_history.clear();
    diff::Tape tape;
    for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
        const bool metric_active =
            session >= train.metric_start_session && epoch >= train.metric_start_epoch && branch.loss.eta > 0.0;
        std::vector<std::size_t> pair_members;
        if (metric_active) {
            std::uniform_int_distribution<std::size_t> pick_class(0, pool_classes.size() - 1);
            for (std::size_t m = 0; m < pairs; ++m) {
                const auto& members = by_class[pool_classes[pick_class(rng)]];
                std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
                const std::size_t a = pick(rng);
                std::size_t b = a;
                if (members.size() > 1) {
                    std::uniform_int_distribution<std::size_t> other(0, members.size() - 2);
                    b = other(rng);
                    if (b >= a) ++b;
                }
                pair_members.push_back(members[a]);
                pair_members.push_back(members[b]);
            }
        }

        std::shuffle(order.begin(), order.end(), rng);
        double weighted = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            const std::size_t end = std::min(order.size(), start + batch_size);
            tape.clear();
            Binding bind(tape, branch.params);
            std::vector<diff::Var> ce_terms;
            std::vector<diff::Var> dl_terms;
            for (std::size_t i = start; i < end; ++i) {
                const auto& item = pool[order[i]];
                const auto f = net.embed(*item.raw, bind);
                const auto z = head_logits(std::span<const diff::Var>(f), bind, rows);
                ce_terms.push_back(cross_entropy_loss(std::span<const diff::Var>(z), item.head_index));
                if (branch.old_class_count > 0)
                    dl_terms.push_back(distillation_loss(std::span<const diff::Var>(z), old_logits[order[i]],
                                                         branch.old_class_count));
            }
            diff::Var loss = diff::mean_of(std::span<const diff::Var>(ce_terms));
            if (!dl_terms.empty()) loss = loss + zeta * diff::mean_of(std::span<const diff::Var>(dl_terms));
            if (metric_active) {
                std::vector<std::vector<diff::Var>> embeddings;
                embeddings.reserve(pair_members.size());
                for (std::size_t idx : pair_members) embeddings.push_back(net.embed(*pool[idx].raw, bind));
                const diff::Var log_scale = bind[head_log_scale_name(NovelBranch::kPrefix)][0];
                loss = loss + branch.loss.eta * hyper_metric_loss(embeddings, log_scale, branch.ball, branch.loss.tau);
            }
            weighted += diff::forward_eval(loss) * static_cast<double>(end - start);
            diff::backward_grad(loss);
            bind.accumulate_grads(branch.params);
            sgd_step(branch.params, static_cast<int>(epoch));
        }
        branch.loss_history.push_back(weighted / static_cast<double>(pool.size()));
    }

    // Herding exemplars for the new classes under the updated backbone.
    for (ClassId c : new_classes) {
        std::vector<const Sample*> members;
        for (const auto& s : samples)
            if (s.label == c) members.push_back(&s);
        std::vector<std::vector<double>> embeddings;
        std::vector<double> mean(dim, 0.0);
        for (const auto* s : members) {
            embeddings.push_back(net.embed(s->features, branch.params).components());
            for (std::size_t k = 0; k < dim; ++k) mean[k] += embeddings.back()[k];
        }
        for (auto& m : mean) m /= static_cast<double>(members.size());
        std::vector<Exemplar> chosen;
        for (std::size_t idx : herding_select(embeddings, mean, branch.memory.budget()))
            chosen.push_back({members[idx]->features, embeddings[idx]});
        branch.memory.store(c, std::move(chosen));
    }
    // Refresh cached embeddings of older exemplars.
    for (const auto& [id, exemplars] : branch.memory.classes()) {
        if (std::find(new_classes.begin(), new_classes.end(), id) != new_classes.end()) continue;
        std::vector<Exemplar> refreshed = exemplars;
        for (auto& ex : refreshed) ex.embedding = net.embed(ex.raw, branch.params).components();
        branch.memory.store(id, std::move(refreshed));
    }
}

} // namespace hyperfscil
