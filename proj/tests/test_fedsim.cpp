#include <doctest.h>

#include "fedmp/errors.hpp"
#include "fedmp/fedsim.hpp"
#include "fedmp/rng.hpp"
#include "support.hpp"

using namespace fedmp;

namespace {

struct Setup {
    Dataset ds;
    Partition part;
    FLConfig cfg;
};

Setup small_setup(std::size_t clients = 4, std::size_t samples = 400) {
    SynthConfig s;
    s.num_classes = 3;
    s.samples = samples;
    s.input_dim = 4;
    Setup st;
    st.ds = gen_synthetic(s, 1);
    st.part = partition_iid(st.ds, clients, 2);
    st.cfg.arch.layer_dims = {4, 8, 3};
    st.cfg.rounds = 3;
    st.cfg.local_epochs = 1;
    st.cfg.batch_size = 16;
    st.cfg.learning_rate = 1e-2;
    st.cfg.seed = 5;
    return st;
}

}  // namespace

TEST_CASE("local_train with zero learning rate is a no-op") {
    auto st = small_setup();
    st.cfg.learning_rate = 0.0;
    const auto m = init_model(st.cfg.arch, 1);
    for (auto kind : {OptKind::sgd, OptKind::adam}) {
        st.cfg.optimizer = kind;
        CHECK(local_train(m, st.ds, st.part.client_examples[0], st.cfg, 3) == m);
    }
}

TEST_CASE("full-batch sgd on one example does not increase its loss") {
    auto st = small_setup();
    st.cfg.optimizer = OptKind::sgd;
    st.cfg.batch_size = 1;
    st.cfg.local_epochs = 1;
    const std::vector<std::size_t> one{7};
    const auto b = st.ds.gather(one);
    auto m = init_model(st.cfg.arch, 2);
    double prev = mean_loss(m, b);
    for (int epoch = 0; epoch < 5; ++epoch) {
        m = local_train(m, st.ds, one, st.cfg, static_cast<std::uint64_t>(epoch));
        const double cur = mean_loss(m, b);
        CHECK(cur <= prev);
        prev = cur;
    }
}

TEST_CASE("local_train is deterministic") {
    auto st = small_setup();
    const auto m = init_model(st.cfg.arch, 1);
    CHECK(local_train(m, st.ds, st.part.client_examples[1], st.cfg, 9) ==
          local_train(m, st.ds, st.part.client_examples[1], st.cfg, 9));
    CHECK_THROWS_AS(local_train(m, st.ds, std::vector<std::size_t>{}, st.cfg, 9), DataError);
}

TEST_CASE("average_models") {
    const auto a = testutil::model_with({1, 1}, {1, 2});
    const auto b = testutil::model_with({1, 1}, {3, 4});
    const std::vector<ModelParams> ab{a, b};
    CHECK(average_models(ab).values == std::vector<double>{2, 3});
    const std::vector<ModelParams> same{a, a, a};
    CHECK(average_models(same) == a);
    const std::vector<ModelParams> mixed{a, testutil::model_with({2, 1}, {1, 2, 3})};
    CHECK_THROWS_AS(average_models(mixed), ShapeError);
    CHECK_THROWS_AS(average_models(std::span<const ModelParams>{}), ArgumentError);
}

TEST_CASE("one round equals the mean of one local update per client") {
    auto st = small_setup();
    st.cfg.rounds = 1;
    const auto init = init_model(st.cfg.arch, 4);
    const auto clients = st.part.all_clients();
    const auto run = run_fedavg(st.cfg, st.part, st.ds, clients, init);
    std::vector<ModelParams> locals;
    for (int k : clients) {
        const auto seed = derive_seed(st.cfg.seed, {stream::kShuffle, 1, static_cast<std::uint64_t>(k)});
        locals.push_back(local_train(init, st.ds, st.part.client_examples[static_cast<std::size_t>(k)], st.cfg, seed));
    }
    CHECK(run.final_model == average_models(locals));
    CHECK(run.history.size() == 1);

    st.cfg.rounds = 0;
    CHECK_THROWS_AS(run_fedavg(st.cfg, st.part, st.ds, clients, init), ConfigError);
}

TEST_CASE("fedavg learns a separable three-class mixture") {
    SynthConfig s;
    s.num_classes = 3;
    s.samples = 3000;
    s.input_dim = 4;
    s.noise_sigma = 0.6;
    const auto ds = gen_synthetic(s, 3);
    const auto test = gen_holdout(s, 3, 600, 4).all();
    const auto part = partition_iid(ds, 10, 5);
    FLConfig cfg;
    cfg.arch.layer_dims = {4, 16, 3};
    cfg.rounds = 50;
    cfg.local_epochs = 1;
    cfg.learning_rate = 1e-3;
    cfg.eval_every = 10;
    cfg.seed = 6;
    const auto run = run_fedavg(cfg, part, ds, part.all_clients(), init_model(cfg.arch, 7), {&test, nullptr});
    CHECK(run.history.size() == 5);
    CHECK(run.history.back().round == 50);
    CHECK(run.history.back().test_accuracy >= 0.90);
    CHECK(accuracy(run.final_model, test) == run.history.back().test_accuracy);
}

TEST_CASE("retrain ensemble never reads unlearning clients") {
    auto st = small_setup();
    const int u[] = {0};
    const auto part = mark_unlearning(st.part, u);
    AccessTracer tracer;
    const auto runs = retrain_ensemble_runs(st.cfg, part, st.ds, 3, 11, {}, &tracer);
    CHECK_FALSE(tracer.touched_any(part.client_examples[0]));
    CHECK(tracer.distinct_count() == st.ds.size() - part.client_examples[0].size());

    const auto models = final_models(runs);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = i + 1; j < 3; ++j) CHECK(testutil::l2(models[i].values, models[j].values) > 0);
    }
    CHECK(retrain_ensemble(st.cfg, part, st.ds, 3, 11) == models);
    CHECK(retrain_ensemble(st.cfg, part, st.ds, 1, 11).size() == 1);
    CHECK_THROWS_AS(retrain_ensemble(st.cfg, part, st.ds, 0, 11), ArgumentError);
}

TEST_CASE("original ensemble uses every client and differs from the retrained one") {
    auto st = small_setup();
    const int u[] = {0};
    const auto part = mark_unlearning(st.part, u);
    const auto orig = original_ensemble(st.cfg, part, st.ds, 1, 11);
    const auto retr = retrain_ensemble(st.cfg, part, st.ds, 1, 11);
    CHECK(orig.size() == 1);
    CHECK_FALSE(orig[0] == retr[0]);
}
