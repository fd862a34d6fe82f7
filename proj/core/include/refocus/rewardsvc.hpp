#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "refocus/episode.hpp"
#include "refocus/trainer.hpp"

namespace refocus::svc {

struct ScoreRequest {
    std::string episode_id;
    std::vector<int> frame_ids;  // strictly increasing
    std::string question;
    std::vector<std::string> options;
    std::string request_id;
};

struct ScoreResponse {
    std::vector<double> logits;
    std::string request_id;
};

// hash(episode_id, sorted frame_ids), stable across runs: lets the server
// cache and replay
std::string make_request_id(const std::string& episode_id, std::span<const int> frame_ids);

// retriable: timeouts, connect failures, HTTP 5xx
class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// non-retriable: malformed or invalid payloads, HTTP 4xx
class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ScoreClient {
public:
    struct Options {
        int timeout_ms = 2000;
        int retries = 3;        // total attempts
        int max_inflight = 8;   // bounded concurrency across threads
    };

    // endpoint like "http://127.0.0.1:8080"; the REFOCUS_SCORE_ENDPOINT env
    // var overrides it when set
    explicit ScoreClient(std::string endpoint);
    ScoreClient(std::string endpoint, Options opts);
    ~ScoreClient();

    ScoreResponse score(const ScoreRequest& req);
    int attempts_of_last_call() const { return last_attempts_; }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int last_attempts_ = 0;
};

// In-process HTTP server for tests and local runs. Either serves the
// synthetic oracle over a registered dataset or a hand-installed handler.
class MockScoreServer {
public:
    using Handler = std::function<ScoreResponse(const ScoreRequest&)>;

    MockScoreServer();
    ~MockScoreServer();

    void serve_oracle(std::vector<env::Episode> dataset, env::OracleConfig oc);
    void set_handler(Handler handler);
    // returns raw body + status for the next `n` calls, then reverts to the
    // normal handler; used to exercise retry paths
    void fail_next(int n, int status);

    void start();
    void stop();
    int port() const;
    std::string endpoint() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// RewardBackend over the wire protocol: trainer code stays untouched when
// the oracle moves behind HTTP.
class RemoteOracleBackend final : public train::RewardBackend {
public:
    explicit RemoteOracleBackend(std::string endpoint);
    RemoteOracleBackend(std::string endpoint, ScoreClient::Options opts);
    Eigen::VectorXd score(const env::Episode& ep, std::span<const int> time_sorted) override;

private:
    ScoreClient client_;
};

}  // namespace refocus::svc
