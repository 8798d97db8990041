#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "enoki/kvstore.hpp"
#include "enoki/naming.hpp"
#include "enoki/netem.hpp"
#include "enoki/replication.hpp"
#include "enoki/session.hpp"

namespace enoki::runtime {

enum class InvokeMode { Sync, Async };

struct FunctionSpec {
    std::string name;
    std::string handler;  // builtin name, or "exec:<command line>" for a subprocess
    unsigned threads = 1;
    std::string keygroup;  // empty -> function name
    std::map<std::string, std::string> env;
    bool replicate_from_existing = true;

    std::string resolved_keygroup() const { return keygroup.empty() ? name : keygroup; }
    bool operator==(const FunctionSpec&) const = default;
};

struct DeploymentResult {
    bool created_keygroup = false;
    std::optional<NodeId> replicated_from;
};

constexpr int kMaxCallDepth = 16;
constexpr std::size_t kInvokeQueueCap = 10000;

/// Wall limit a synchronous caller waits on a handler. Default 30 s;
/// ENOKI_HANDLER_TIMEOUT_MS overrides (test hook).
std::chrono::milliseconds handler_timeout();

class FunctionRuntime;
struct Deployment;

/// Per-invocation view handed to every handler: the session-bound kv
/// interface plus nested invocation, capped at depth 16.
class HandlerContext {
public:
    session::Session& kv() { return session_; }
    const std::map<std::string, std::string>& env() const;
    const NodeId& self_node() const;
    int depth() const { return depth_; }

    /// Invoke another function. The target node comes from the deployment
    /// env ("route.<fn>" = node id), defaulting to this node.
    std::string call(const std::string& fn, const std::string& input, InvokeMode mode);
    std::string call_at(const std::string& fn, const std::string& node_name,
                        const std::string& input, InvokeMode mode);

private:
    friend class FunctionRuntime;
    HandlerContext(FunctionRuntime& rt, Deployment& dep, session::Session& session, int depth)
        : runtime_(rt), dep_(dep), session_(session), depth_(depth) {}

    FunctionRuntime& runtime_;
    Deployment& dep_;
    session::Session& session_;
    int depth_;
};

using HandlerFn = std::function<std::string(const std::string& input, HandlerContext& ctx)>;

/// Single-node FaaS runtime: deployment, FIFO invocation queues with a
/// fixed warm worker pool per function, builtin catalog and the stdio
/// subprocess escape hatch.
class FunctionRuntime {
public:
    struct Deps {
        kv::Store* store = nullptr;
        repl::Replicator* repl = nullptr;
        naming::Client* naming = nullptr;
        netem::Shaper* shaper = nullptr;
        /// Node id -> RPC address for nested remote invocation.
        std::function<std::string(const NodeId&)> resolve_rpc_addr;
    };

    explicit FunctionRuntime(Deps deps);
    ~FunctionRuntime();

    DeploymentResult deploy(const FunctionSpec& spec);

    std::string invoke_sync(const std::string& fn, const std::string& input, int depth = 0);
    void invoke_async(const std::string& fn, const std::string& input, int depth = 0);

    /// Registers an additional in-process handler (tests, embedding).
    void register_handler(const std::string& name, HandlerFn handler);
    std::vector<std::string> list_builtins() const;
    bool has_function(const std::string& fn) const;
    std::optional<FunctionSpec> spec_of(const std::string& fn) const;
    std::optional<DeploymentResult> deployment_result(const std::string& fn) const;

    /// Remote-home pool of the function's keygroup, when kv ops are routed
    /// off-node; used by the daemon to forward raw probe reads.
    std::shared_ptr<rpc::ConnectionPool> home_pool_for_keygroup(const std::string& kg) const;

    /// Stops accepting work, drains queues for up to 5 s, joins workers.
    void stop();

private:
    friend class HandlerContext;

    struct Job {
        std::string input;
        int depth = 0;
        std::shared_ptr<std::promise<std::string>> result;  // null for async
    };

    Deployment& find(const std::string& fn);
    void enqueue(Deployment& dep, Job job);
    void worker_loop(Deployment& dep, unsigned slot);
    std::string run_handler(Deployment& dep, unsigned slot, const Job& job, HandlerContext& ctx);
    session::Session make_session(Deployment& dep);
    std::shared_ptr<rpc::ConnectionPool> pool_for(const std::string& addr);

    Deps deps_;
    mutable std::mutex mu_;
    std::map<std::string, HandlerFn> handlers_;
    std::map<std::string, std::unique_ptr<Deployment>> deployments_;
    std::map<std::string, std::shared_ptr<rpc::ConnectionPool>> pools_;  // by rpc addr
    bool stopping_ = false;
};

}  // namespace enoki::runtime
