#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "iamfm/core.hpp"
#include "iamfm/environment.hpp"

namespace iamfm {

// Prompt templates with {slot} placeholders. The defaults implement a
// food-court recommendation task with two sponsored restaurants and five
// user personas.
struct PromptBundle {
    std::string system_template;       // slots: {advertiser_block} {strength_lines} {persona}
    std::string root_template;         // slots: {persona_prompt} {target_tokens}
    std::string continuation_template; // slots: {target_tokens} {parent_content}
    std::string advertiser_eval_template; // slots: {advertiser_name} {brand_description} {strength} {content} {prefix_note}
    std::string user_eval_template;       // slots: {persona_prompt} {content} {prefix_note}
    std::string prefix_note; // inserted when evaluating a partial response
    std::array<std::string, 5> strength_descriptions;

    static PromptBundle default_bundle();

    const std::string& describe_strength(int level) const;
};

std::string render_template(const std::string& tmpl,
                            const std::map<std::string, std::string>& slots);

struct EndpointConfig {
    std::string base_url;          // e.g. http://127.0.0.1:8089
    std::string chat_path = "/v1/chat/completions";
    std::string model;
    double temperature = 0.8;
    // Name of the environment variable holding the bearer token; the secret
    // itself is never stored or logged.
    std::string auth_env_var;
    int timeout_seconds = 30;
    int max_retries = 3;
    int retry_base_delay_ms = 200;
};

struct AdvertiserProfile {
    std::string name;
    std::string brand_description;
};

struct UserPersona {
    std::string name;
    std::string prompt;
};

// Score normalization applied to raw 0-100 evaluator outputs. Platform
// policy knobs; identity by default.
struct ScoreScales {
    double advertiser = 1.0;
    double user = 1.0;
};

// Minimal chat-completion client with exponential-backoff retries.
class ChatEndpoint {
public:
    explicit ChatEndpoint(EndpointConfig config);

    // Returns the assistant message content; throws gateway/protocol errors.
    std::string complete(const std::string& system, const std::string& user) const;

    const EndpointConfig& config() const { return config_; }

private:
    EndpointConfig config_;
};

enum class EvalRole { advertiser, user };

// Renders the generation request for (arm, persona, target length) and
// returns the generated text. Roots use the root template; continuations
// embed the parent content verbatim.
std::string generate_prefix(const ChatEndpoint& endpoint, const PromptBundle& bundle,
                            const std::vector<AdvertiserProfile>& advertisers,
                            const InfluenceConfiguration& arm, const UserPersona& persona,
                            long target_tokens, const std::optional<std::string>& parent_content);

// Renders the evaluation request for one party, parses the JSON utility
// field of the reply, and clamps to [0, 100] before scaling.
double evaluate_utility(const ChatEndpoint& endpoint, const PromptBundle& bundle,
                        EvalRole role, const AdvertiserProfile* advertiser,
                        const UserPersona& persona, int strength, const std::string& content,
                        bool is_prefix, double scale);

// Parses an evaluator reply body (JSON with a "utility" field, possibly
// wrapped in prose) and clamps to [0, 100].
double parse_utility_reply(const std::string& body);

// Arm-pull adapter over live endpoints: generates at the requested fidelity
// (continuing cached branches), asks one evaluation per party, and charges
// the ladder's nominal marginal cost. A failed call never records a partial
// observation.
class GatewayEnvironment : public ArmPullEnvironment {
public:
    GatewayEnvironment(ChatEndpoint generator, ChatEndpoint evaluator, PromptBundle bundle,
                       std::vector<AdvertiserProfile> advertisers, std::vector<UserPersona> personas,
                       FidelityLadder ladder, int max_strength, std::uint64_t seed,
                       ScoreScales scales = {});

    int n_agents() const override { return static_cast<int>(advertisers_.size()); }
    int max_strength() const override { return max_strength_; }
    const FidelityLadder& ladder() const override { return ladder_; }

    Observation pull(const InfluenceConfiguration& arm, int fidelity) override;

    // Replay-style log of completed pulls, one JSON line per observation with
    // the generated content attached. Credentials never appear here: the
    // endpoint config only ever holds the name of the token variable.
    void save_log(const std::string& path) const;

    static std::vector<AdvertiserProfile> default_advertisers();
    static std::vector<UserPersona> default_personas();

private:
    struct Branch {
        std::string content;
        std::int64_t obs_id = 0;
    };

    ChatEndpoint generator_;
    ChatEndpoint evaluator_;
    PromptBundle bundle_;
    std::vector<AdvertiserProfile> advertisers_;
    std::vector<UserPersona> personas_;
    FidelityLadder ladder_;
    int max_strength_;
    ScoreScales scales_;
    Rng rng_;
    std::int64_t next_id_ = 0;
    std::int64_t step_ = 0;
    std::map<std::vector<int>, std::map<int, Branch>> tips_;
    std::map<std::vector<int>, int> highest_;
    std::vector<std::pair<Observation, std::string>> log_;
};

} // namespace iamfm
