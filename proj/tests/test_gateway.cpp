#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "iamfm/gateway.hpp"

using namespace iamfm;

namespace {

// In-process chat-completion mock. Scripted per test: either echoes a canned
// content string or fails the first k requests with a 503.
class MockServer {
public:
    explicit MockServer(std::string content, int fail_first = 0)
        : content_(std::move(content)), fail_remaining_(fail_first) {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            requests_.push_back(req.body);
            if (fail_remaining_ > 0) {
                --fail_remaining_;
                res.status = 503;
                res.set_content("busy", "text/plain");
                return;
            }
            nlohmann::json reply;
            reply["choices"] = nlohmann::json::array(
                {nlohmann::json{{"message", nlohmann::json{{"role", "assistant"},
                                                           {"content", content_}}}}});
            res.set_content(reply.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~MockServer() {
        server_.stop();
        thread_.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
    const std::vector<std::string>& requests() const { return requests_; }
    void set_content(std::string content) { content_ = std::move(content); }

private:
    std::string content_;
    std::atomic<int> fail_remaining_;
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::vector<std::string> requests_;
};

EndpointConfig config_for(const MockServer& server) {
    EndpointConfig cfg;
    cfg.base_url = server.url();
    cfg.model = "mock-model";
    cfg.max_retries = 2;
    cfg.retry_base_delay_ms = 1;
    cfg.timeout_seconds = 5;
    return cfg;
}

std::string extract_user_message(const std::string& request_body) {
    const nlohmann::json j = nlohmann::json::parse(request_body);
    for (const auto& msg : j.at("messages")) {
        if (msg.at("role") == "user") return msg.at("content").get<std::string>();
    }
    return "";
}

} // namespace

TEST_CASE("strength levels map to the five fixed descriptions") {
    const PromptBundle bundle = PromptBundle::default_bundle();
    CHECK(bundle.describe_strength(0) == "minimal presence (indirect references only)");
    CHECK(bundle.describe_strength(1) == "weak presence (subtle, background references)");
    CHECK(bundle.describe_strength(2) == "moderate presence (balanced, natural integration)");
    CHECK(bundle.describe_strength(3) == "strong presence (prominent, featured examples)");
    CHECK(bundle.describe_strength(4) == "very strong presence (dominant, detailed focus)");
    CHECK_THROWS_AS(bundle.describe_strength(5), Error);
}

TEST_CASE("template rendering: identical inputs give identical payloads") {
    const std::map<std::string, std::string> slots = {{"a", "x"}, {"b", "y"}};
    const std::string tmpl = "{a} and {b} and {unknown} and {a}";
    CHECK(render_template(tmpl, slots) == "x and y and {unknown} and x");
    CHECK(render_template(tmpl, slots) == render_template(tmpl, slots));
}

TEST_CASE("root generation request carries the token target") {
    MockServer server("A fine recommendation.");
    const ChatEndpoint endpoint(config_for(server));
    const PromptBundle bundle = PromptBundle::default_bundle();
    const auto advertisers = GatewayEnvironment::default_advertisers();
    const UserPersona persona = GatewayEnvironment::default_personas()[0];

    const std::string text = generate_prefix(endpoint, bundle, advertisers,
                                             InfluenceConfiguration{{2, 3}}, persona, 30,
                                             std::nullopt);
    CHECK(text == "A fine recommendation.");
    REQUIRE(server.requests().size() == 1);
    const std::string user = extract_user_message(server.requests()[0]);
    CHECK(user.find("approximately 30 tokens") != std::string::npos);
    CHECK(user.find(persona.prompt) != std::string::npos);
}

TEST_CASE("continuation request embeds the parent content verbatim") {
    MockServer server("...continued text.");
    const ChatEndpoint endpoint(config_for(server));
    const PromptBundle bundle = PromptBundle::default_bundle();
    const auto advertisers = GatewayEnvironment::default_advertisers();
    const UserPersona persona = GatewayEnvironment::default_personas()[1];

    const std::string parent = "Original 30-token stub about noodles.";
    generate_prefix(endpoint, bundle, advertisers, InfluenceConfiguration{{0, 4}}, persona, 60,
                    parent);
    REQUIRE(server.requests().size() == 1);
    const std::string user = extract_user_message(server.requests()[0]);
    CHECK(user.find(parent) != std::string::npos);
    CHECK(user.find("approximately 60 tokens total") != std::string::npos);
}

TEST_CASE("utility parsing: pass-through, clamping, and recorded-exchange replay") {
    CHECK(parse_utility_reply(R"({"utility": 74.97, "reasoning": "solid"})") ==
          doctest::Approx(74.97));
    CHECK(parse_utility_reply(R"({"utility": 150, "reasoning": "x"})") == doctest::Approx(100.0));
    CHECK(parse_utility_reply(R"({"utility": -3, "reasoning": "x"})") == doctest::Approx(0.0));
    // Prose-wrapped JSON still parses.
    CHECK(parse_utility_reply("Sure!\n{\"utility\": 64.90, \"reasoning\": \"ok\"}\nDone.") ==
          doctest::Approx(64.90));
    CHECK_THROWS_AS(parse_utility_reply("no json here"), Error);
    CHECK_THROWS_AS(parse_utility_reply(R"({"reasoning": "missing"})"), Error);
}

TEST_CASE("evaluator prompt includes the prefix note only below top fidelity") {
    MockServer server(R"({"utility": 50.0, "reasoning": "ok"})");
    const ChatEndpoint endpoint(config_for(server));
    const PromptBundle bundle = PromptBundle::default_bundle();
    const auto advertisers = GatewayEnvironment::default_advertisers();
    const UserPersona persona = GatewayEnvironment::default_personas()[2];

    evaluate_utility(endpoint, bundle, EvalRole::advertiser, &advertisers[0], persona, 2,
                     "Some content", true, 1.0);
    evaluate_utility(endpoint, bundle, EvalRole::user, nullptr, persona, 0, "Some content", false,
                     1.0);
    REQUIRE(server.requests().size() == 2);
    CHECK(extract_user_message(server.requests()[0]).find("partial response") != std::string::npos);
    CHECK(extract_user_message(server.requests()[1]).find("partial response") == std::string::npos);
}

TEST_CASE("score scales apply to the clamped utility") {
    MockServer server(R"({"utility": 80.0, "reasoning": "ok"})");
    const ChatEndpoint endpoint(config_for(server));
    const PromptBundle bundle = PromptBundle::default_bundle();
    const UserPersona persona = GatewayEnvironment::default_personas()[0];
    const double scaled = evaluate_utility(endpoint, bundle, EvalRole::user, nullptr, persona, 0,
                                           "content", true, 0.7);
    CHECK(scaled == doctest::Approx(56.0));
}

TEST_CASE("retries recover from transient server failures") {
    MockServer server(R"({"utility": 42.0, "reasoning": "ok"})", /*fail_first=*/2);
    EndpointConfig cfg = config_for(server);
    cfg.max_retries = 3;
    const ChatEndpoint endpoint(cfg);
    const std::string reply = endpoint.complete("sys", "user");
    CHECK(parse_utility_reply(reply) == doctest::Approx(42.0));
    CHECK(server.requests().size() == 3);
}

TEST_CASE("unreachable endpoint raises a gateway error and records nothing") {
    EndpointConfig cfg;
    cfg.base_url = "http://127.0.0.1:9"; // discard port: nothing listens
    cfg.model = "mock";
    cfg.max_retries = 1;
    cfg.retry_base_delay_ms = 1;
    cfg.timeout_seconds = 1;
    const ChatEndpoint endpoint(cfg);

    GatewayEnvironment env(endpoint, endpoint, PromptBundle::default_bundle(),
                           GatewayEnvironment::default_advertisers(),
                           GatewayEnvironment::default_personas(), FidelityLadder::standard(), 4,
                           1234);
    try {
        env.pull(InfluenceConfiguration{{1, 1}}, 1);
        FAIL("expected gateway error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::gateway);
    }
    // Atomicity: the failed pull must not have advanced any lineage state, so
    // a later successful pull is still a root.
    MockServer server(R"({"utility": 30.0, "reasoning": "ok"})");
    GatewayEnvironment healthy(ChatEndpoint(config_for(server)), ChatEndpoint(config_for(server)),
                               PromptBundle::default_bundle(),
                               GatewayEnvironment::default_advertisers(),
                               GatewayEnvironment::default_personas(), FidelityLadder::standard(),
                               4, 1234);
    const Observation obs = healthy.pull(InfluenceConfiguration{{1, 1}}, 1);
    CHECK_FALSE(obs.parent_id.has_value());
}

TEST_CASE("gateway pulls follow the ladder's marginal-cost and lineage rules") {
    MockServer server(R"({"utility": 61.5, "reasoning": "ok"})");
    const ChatEndpoint endpoint(config_for(server));
    GatewayEnvironment env(endpoint, endpoint, PromptBundle::default_bundle(),
                           GatewayEnvironment::default_advertisers(),
                           GatewayEnvironment::default_personas(), FidelityLadder::standard(), 4,
                           99);
    const InfluenceConfiguration arm{{2, 2}};
    const Observation root = env.pull(arm, 1);
    CHECK(root.cost_charged == 30);
    CHECK_FALSE(root.parent_id.has_value());
    CHECK(root.valuations.per_agent.size() == 2);
    CHECK(root.valuations.user == doctest::Approx(61.5));

    const Observation upgrade = env.pull(arm, 2);
    CHECK(upgrade.cost_charged == 30);
    REQUIRE(upgrade.parent_id.has_value());
    CHECK(*upgrade.parent_id == root.id);

    const Observation resample = env.pull(arm, 2);
    CHECK(resample.cost_charged == 60);
    CHECK_FALSE(resample.parent_id.has_value());
}

TEST_CASE("gateway log captures observations with content, never credentials") {
    MockServer server(R"({"utility": 55.0, "reasoning": "ok"})");
    EndpointConfig cfg = config_for(server);
    cfg.auth_env_var = "IAMFM_TEST_TOKEN";
    setenv("IAMFM_TEST_TOKEN", "super-secret-value", 1);
    const ChatEndpoint endpoint(cfg);
    GatewayEnvironment env(endpoint, endpoint, PromptBundle::default_bundle(),
                           GatewayEnvironment::default_advertisers(),
                           GatewayEnvironment::default_personas(), FidelityLadder::standard(), 4,
                           7);
    env.pull(InfluenceConfiguration{{1, 1}}, 1);
    env.pull(InfluenceConfiguration{{1, 1}}, 2);

    const std::string path = "gateway_log_test.jsonl";
    env.save_log(path);
    std::ifstream in(path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text.find("\"content\"") != std::string::npos);
    CHECK(text.find("\"cost\":30") != std::string::npos);
    CHECK(text.find("super-secret-value") == std::string::npos);
    std::filesystem::remove(path);
    unsetenv("IAMFM_TEST_TOKEN");
}
