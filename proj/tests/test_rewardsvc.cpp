#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "refocus/rewardsvc.hpp"
#include "refocus/trainer.hpp"

using namespace refocus;

namespace {

std::vector<env::Episode> tiny_dataset(int n) {
    env::EnvConfig cfg;
    cfg.T = 12;
    cfg.L = 1;
    cfg.d_in = 3;
    cfg.d_q = 2;
    cfg.n_needle = 2;
    std::vector<env::Episode> out;
    for (int i = 0; i < n; ++i) out.push_back(env::gen_episode(cfg, 3000 + i));
    return out;
}

}  // namespace

TEST_CASE("request ids are stable and order insensitive at the call site") {
    std::vector<int> a = {1, 5, 9};
    const std::string id1 = svc::make_request_id("ep-1", a);
    const std::string id2 = svc::make_request_id("ep-1", a);
    CHECK(id1 == id2);
    CHECK(!id1.empty());
    std::vector<int> b = {1, 5, 8};
    CHECK(svc::make_request_id("ep-1", b) != id1);
    CHECK(svc::make_request_id("ep-2", a) != id1);
}

TEST_CASE("client and mock server complete the score round trip") {
    svc::MockScoreServer server;
    server.set_handler([](const svc::ScoreRequest& req) {
        svc::ScoreResponse resp;
        resp.request_id = req.request_id;
        // echo the frame count into the logits so the test can see the payload
        for (std::size_t i = 0; i < req.options.size(); ++i)
            resp.logits.push_back(static_cast<double>(req.frame_ids.size() + i));
        return resp;
    });
    server.start();

    svc::ScoreClient client(server.endpoint());
    svc::ScoreRequest req;
    req.episode_id = "ep-7";
    req.frame_ids = {2, 4, 8};
    req.question = "which option?";
    req.options = {"a", "b", "c", "d"};
    req.request_id = svc::make_request_id(req.episode_id, req.frame_ids);
    const auto resp = client.score(req);
    CHECK(resp.request_id == req.request_id);
    REQUIRE(resp.logits.size() == 4);
    CHECK(resp.logits[0] == 3.0);
    CHECK(resp.logits[3] == 6.0);
    server.stop();
}

TEST_CASE("wrong logit count is a protocol error, not a retry") {
    svc::MockScoreServer server;
    int calls = 0;
    server.set_handler([&](const svc::ScoreRequest& req) {
        ++calls;
        svc::ScoreResponse resp;
        resp.request_id = req.request_id;
        resp.logits = {0.0, 1.0, 2.0};  // one short of the four options
        return resp;
    });
    server.start();
    svc::ScoreClient client(server.endpoint());
    svc::ScoreRequest req;
    req.episode_id = "ep";
    req.frame_ids = {0, 1};
    req.options = {"a", "b", "c", "d"};
    CHECK_THROWS_AS(client.score(req), svc::ProtocolError);
    CHECK(calls == 1);
    server.stop();
}

TEST_CASE("transient 500s are retried until success") {
    svc::MockScoreServer server;
    server.set_handler([](const svc::ScoreRequest& req) {
        svc::ScoreResponse resp;
        resp.request_id = req.request_id;
        resp.logits = {1.0, 0.0, 0.0, 0.0};
        return resp;
    });
    server.fail_next(2, 500);
    server.start();

    svc::ScoreClient::Options opts;
    opts.retries = 3;
    svc::ScoreClient client(server.endpoint(), opts);
    svc::ScoreRequest req;
    req.episode_id = "ep";
    req.frame_ids = {3};
    req.options = {"a", "b", "c", "d"};
    const auto resp = client.score(req);
    CHECK(resp.logits[0] == 1.0);
    CHECK(client.attempts_of_last_call() == 3);

    // exhausting the budget surfaces a transport error
    server.fail_next(3, 503);
    CHECK_THROWS_AS(client.score(req), svc::TransportError);
    server.stop();
}

TEST_CASE("4xx responses fail immediately") {
    svc::MockScoreServer server;
    server.set_handler([](const svc::ScoreRequest& req) {
        svc::ScoreResponse resp;
        resp.request_id = req.request_id;
        resp.logits = {1.0, 0.0, 0.0, 0.0};
        return resp;
    });
    server.fail_next(1, 400);
    server.start();
    svc::ScoreClient::Options opts;
    opts.retries = 3;
    svc::ScoreClient client(server.endpoint(), opts);
    svc::ScoreRequest req;
    req.episode_id = "ep";
    req.frame_ids = {0};
    req.options = {"a", "b", "c", "d"};
    CHECK_THROWS_AS(client.score(req), svc::ProtocolError);
    CHECK(client.attempts_of_last_call() == 1);
    server.stop();
}

TEST_CASE("remote backend reproduces local oracle training exactly") {
    const auto data = tiny_dataset(3);
    env::OracleConfig oc;
    oc.noise_std = 0.1;

    policy::Dims d;
    d.d_in = 3;
    d.d_e = 4;
    d.d_model = 4;
    d.d_g = 4;
    d.d_q = 2;
    train::TrainConfig cfg;
    cfg.N = 4;
    cfg.T_sel = 3;
    cfg.batch_size = 2;
    cfg.total_steps = 3;
    cfg.seed = 1;

    std::vector<train::StepMetrics> local_metrics;
    train::LocalOracleBackend local(oc);
    const auto local_res = train::run_training(
        cfg, d, data, local, [&](const train::StepMetrics& m) { local_metrics.push_back(m); });

    svc::MockScoreServer server;
    server.serve_oracle(data, oc);
    server.start();
    svc::RemoteOracleBackend remote(server.endpoint());
    std::vector<train::StepMetrics> remote_metrics;
    const auto remote_res = train::run_training(
        cfg, d, data, remote, [&](const train::StepMetrics& m) { remote_metrics.push_back(m); });
    server.stop();

    REQUIRE(local_metrics.size() == remote_metrics.size());
    for (std::size_t i = 0; i < local_metrics.size(); ++i) {
        CHECK(local_metrics[i].mean_reward == remote_metrics[i].mean_reward);
        CHECK(local_metrics[i].grad_norm == remote_metrics[i].grad_norm);
        CHECK(local_metrics[i].needle_recall == remote_metrics[i].needle_recall);
    }
    auto lb = policy::blocks(local_res.params);
    auto rb = policy::blocks(remote_res.params);
    for (std::size_t b = 0; b < lb.size(); ++b)
        for (std::size_t i = 0; i < lb[b].size(); ++i) CHECK(lb[b].data[i] == rb[b].data[i]);
}

TEST_CASE("unknown episodes are rejected by the oracle server") {
    const auto data = tiny_dataset(1);
    env::OracleConfig oc;
    svc::MockScoreServer server;
    server.serve_oracle(data, oc);
    server.start();
    svc::ScoreClient::Options opts;
    opts.retries = 1;
    svc::ScoreClient client(server.endpoint(), opts);
    svc::ScoreRequest req;
    req.episode_id = "no-such-episode";
    req.frame_ids = {0};
    req.options = {"a", "b", "c", "d"};
    CHECK_THROWS_AS(client.score(req), svc::ProtocolError);
    server.stop();
}
