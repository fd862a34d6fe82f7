#include "refocus/rewardsvc.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <httplib.h>
#include <mutex>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

#include "refocus/rng.hpp"

namespace refocus::svc {

using nlohmann::json;

std::string make_request_id(const std::string& episode_id, std::span<const int> frame_ids) {
    std::uint64_t h = hash_str(episode_id);
    for (int f : frame_ids) h = stream_seed(h, static_cast<std::uint64_t>(f));
    std::ostringstream oss;
    oss << std::hex << h;
    return oss.str();
}

namespace {

json request_to_json(const ScoreRequest& req) {
    return json{{"episode_id", req.episode_id},
                {"frame_ids", req.frame_ids},
                {"question", req.question},
                {"options", req.options},
                {"request_id", req.request_id}};
}

ScoreRequest request_from_json(const json& j) {
    ScoreRequest req;
    req.episode_id = j.at("episode_id").get<std::string>();
    req.frame_ids = j.at("frame_ids").get<std::vector<int>>();
    req.question = j.at("question").get<std::string>();
    req.options = j.at("options").get<std::vector<std::string>>();
    req.request_id = j.at("request_id").get<std::string>();
    return req;
}

// simple counting gate; std::counting_semaphore needs a compile-time ceiling
class InflightGate {
public:
    explicit InflightGate(int limit) : limit_(limit) {}
    void acquire() {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return count_ < limit_; });
        ++count_;
    }
    void release() {
        {
            std::lock_guard lock(mu_);
            --count_;
        }
        cv_.notify_one();
    }

private:
    std::mutex mu_;
    std::condition_variable cv_;
    int limit_;
    int count_ = 0;
};

}  // namespace

struct ScoreClient::Impl {
    std::string host;
    int port = 80;
    Options opts;
    InflightGate gate;

    Impl(std::string endpoint, Options o) : opts(o), gate(o.max_inflight) {
        if (const char* env = std::getenv("REFOCUS_SCORE_ENDPOINT")) endpoint = env;
        std::string e = endpoint;
        const std::string prefix = "http://";
        if (e.rfind(prefix, 0) == 0) e = e.substr(prefix.size());
        const auto colon = e.rfind(':');
        if (colon == std::string::npos)
            throw std::invalid_argument("ScoreClient: endpoint must be host:port");
        host = e.substr(0, colon);
        port = std::stoi(e.substr(colon + 1));
    }
};

ScoreClient::ScoreClient(std::string endpoint)
    : ScoreClient(std::move(endpoint), Options{}) {}

ScoreClient::ScoreClient(std::string endpoint, Options opts)
    : impl_(std::make_unique<Impl>(std::move(endpoint), opts)) {}

ScoreClient::~ScoreClient() = default;

ScoreResponse ScoreClient::score(const ScoreRequest& req) {
    for (std::size_t i = 1; i < req.frame_ids.size(); ++i)
        if (req.frame_ids[i] <= req.frame_ids[i - 1])
            throw ProtocolError("ScoreClient: frame_ids must be strictly increasing");
    if (req.options.size() < 2) throw ProtocolError("ScoreClient: need at least 2 options");

    impl_->gate.acquire();
    struct Release {
        InflightGate& g;
        ~Release() { g.release(); }
    } release{impl_->gate};

    const std::string body = request_to_json(req).dump();
    std::string last_error;
    for (int attempt = 1; attempt <= impl_->opts.retries; ++attempt) {
        last_attempts_ = attempt;
        if (attempt > 1)
            std::this_thread::sleep_for(std::chrono::milliseconds(5 << (attempt - 2)));

        httplib::Client cli(impl_->host, impl_->port);
        cli.set_connection_timeout(0, impl_->opts.timeout_ms * 1000);
        cli.set_read_timeout(0, impl_->opts.timeout_ms * 1000);
        auto res = cli.Post("/score", body, "application/json");
        if (!res) {
            last_error = "transport failure: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 500) {
            last_error = "server error " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200)
            throw ProtocolError("ScoreClient: HTTP " + std::to_string(res->status));

        json j;
        try {
            j = json::parse(res->body);
        } catch (const json::exception& e) {
            throw ProtocolError(std::string("ScoreClient: malformed response: ") + e.what());
        }
        ScoreResponse resp;
        try {
            resp.logits = j.at("logits").get<std::vector<double>>();
            resp.request_id = j.at("request_id").get<std::string>();
        } catch (const json::exception& e) {
            throw ProtocolError(std::string("ScoreClient: missing field: ") + e.what());
        }
        if (resp.logits.size() != req.options.size())
            throw ProtocolError("ScoreClient: logit count does not match option count");
        for (double z : resp.logits)
            if (!std::isfinite(z)) throw ProtocolError("ScoreClient: non-finite logit");
        if (resp.request_id != req.request_id)
            throw ProtocolError("ScoreClient: request_id mismatch");
        return resp;
    }
    throw TransportError("ScoreClient: retries exhausted: " + last_error);
}

struct MockScoreServer::Impl {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::mutex mu;
    Handler handler;
    int fail_remaining = 0;
    int fail_status = 503;
};

MockScoreServer::MockScoreServer() : impl_(std::make_unique<Impl>()) {
    impl_->server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("ok", "text/plain");
    });
    impl_->server.Post("/score", [this](const httplib::Request& req, httplib::Response& res) {
        Handler handler;
        {
            std::lock_guard lock(impl_->mu);
            if (impl_->fail_remaining > 0) {
                --impl_->fail_remaining;
                res.status = impl_->fail_status;
                res.set_content("transient failure", "text/plain");
                return;
            }
            handler = impl_->handler;
        }
        if (!handler) {
            res.status = 404;
            res.set_content("no handler installed", "text/plain");
            return;
        }
        try {
            const ScoreRequest sreq = request_from_json(json::parse(req.body));
            const ScoreResponse sresp = handler(sreq);
            res.set_content(
                json{{"logits", sresp.logits}, {"request_id", sresp.request_id}}.dump(),
                "application/json");
        } catch (const std::exception& e) {
            res.status = 400;
            res.set_content(e.what(), "text/plain");
        }
    });
}

MockScoreServer::~MockScoreServer() { stop(); }

void MockScoreServer::serve_oracle(std::vector<env::Episode> dataset, env::OracleConfig oc) {
    auto eps = std::make_shared<std::map<std::string, env::Episode>>();
    for (auto& ep : dataset) (*eps)[ep.id] = std::move(ep);
    set_handler([eps, oc](const ScoreRequest& req) {
        auto it = eps->find(req.episode_id);
        if (it == eps->end()) throw std::invalid_argument("unknown episode " + req.episode_id);
        const Eigen::VectorXd z = env::oracle_logits(it->second, req.frame_ids, oc);
        ScoreResponse resp;
        resp.logits.assign(z.data(), z.data() + z.size());
        resp.request_id = req.request_id;
        return resp;
    });
}

void MockScoreServer::set_handler(Handler handler) {
    std::lock_guard lock(impl_->mu);
    impl_->handler = std::move(handler);
}

void MockScoreServer::fail_next(int n, int status) {
    std::lock_guard lock(impl_->mu);
    impl_->fail_remaining = n;
    impl_->fail_status = status;
}

void MockScoreServer::start() {
    impl_->port = impl_->server.bind_to_any_port("127.0.0.1");
    if (impl_->port <= 0) throw std::runtime_error("MockScoreServer: bind failed");
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

void MockScoreServer::stop() {
    if (impl_->thread.joinable()) {
        impl_->server.stop();
        impl_->thread.join();
    }
}

int MockScoreServer::port() const { return impl_->port; }

std::string MockScoreServer::endpoint() const {
    return "http://127.0.0.1:" + std::to_string(impl_->port);
}

RemoteOracleBackend::RemoteOracleBackend(std::string endpoint)
    : client_(std::move(endpoint)) {}

RemoteOracleBackend::RemoteOracleBackend(std::string endpoint, ScoreClient::Options opts)
    : client_(std::move(endpoint), opts) {}

Eigen::VectorXd RemoteOracleBackend::score(const env::Episode& ep,
                                           std::span<const int> time_sorted) {
    ScoreRequest req;
    req.episode_id = ep.id;
    req.frame_ids.assign(time_sorted.begin(), time_sorted.end());
    req.question = "mcq:" + ep.id;
    req.options = ep.options;
    req.request_id = make_request_id(ep.id, time_sorted);
    const ScoreResponse resp = client_.score(req);
    Eigen::VectorXd z(resp.logits.size());
    for (std::size_t i = 0; i < resp.logits.size(); ++i) z[i] = resp.logits[i];
    return z;
}

}  // namespace refocus::svc
