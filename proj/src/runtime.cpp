#include "enoki/runtime.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <cstring>

#include "enoki/builtins.hpp"
#include "enoki/log.hpp"
#include "enoki/util.hpp"

extern char** environ;

namespace enoki::runtime {

std::chrono::milliseconds handler_timeout() {
    static const auto value = [] {
        if (const char* env = std::getenv("ENOKI_HANDLER_TIMEOUT_MS")) {
            if (const auto ms = util::parse_u64(env); ms && *ms > 0) {
                return std::chrono::milliseconds(*ms);
            }
        }
        return std::chrono::milliseconds(30000);
    }();
    return value;
}

namespace {

/// One stdio handler process bound to one instance slot. Newline-delimited
/// protocol; exactly one CALL outstanding at a time.
class ProcSlot {
public:
    ProcSlot(std::string cmd, const std::map<std::string, std::string>& env, std::string fn)
        : cmd_(std::move(cmd)), env_(env), fn_(std::move(fn)) {}

    ~ProcSlot() { kill_child(); }

    std::string run(const std::string& input, HandlerContext& ctx);

private:
    void ensure_spawned();
    void kill_child();
    bool write_line(const std::string& line);
    std::optional<std::string> read_line(std::chrono::steady_clock::time_point deadline);
    std::string handle_kv_line(const std::string& line, HandlerContext& ctx);

    std::string cmd_;
    std::map<std::string, std::string> env_;
    std::string fn_;
    pid_t pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    std::string buffer_;
};

void ProcSlot::ensure_spawned() {
    if (pid_ > 0) return;
    int in_pipe[2];
    int out_pipe[2];
    if (::pipe(in_pipe) != 0 || ::pipe(out_pipe) != 0) {
        fail(ErrorKind::Internal, "pipe: " + std::string(strerror(errno)));
    }
    // Build the child environment before forking.
    std::vector<std::string> env_strings;
    for (char** e = environ; *e != nullptr; ++e) {
        const std::string_view entry(*e);
        const auto eq = entry.find('=');
        if (eq != std::string_view::npos && env_.contains(std::string(entry.substr(0, eq)))) {
            continue;
        }
        env_strings.emplace_back(entry);
    }
    for (const auto& [k, v] : env_) env_strings.push_back(k + "=" + v);
    env_strings.push_back("ENOKI_FUNCTION=" + fn_);
    std::vector<char*> envp;
    for (auto& s : env_strings) envp.push_back(s.data());
    envp.push_back(nullptr);

    const pid_t pid = ::fork();
    if (pid < 0) {
        ::close(in_pipe[0]);
        ::close(in_pipe[1]);
        ::close(out_pipe[0]);
        ::close(out_pipe[1]);
        fail(ErrorKind::Internal, "fork: " + std::string(strerror(errno)));
    }
    if (pid == 0) {
        ::dup2(in_pipe[0], STDIN_FILENO);
        ::dup2(out_pipe[1], STDOUT_FILENO);
        ::close(in_pipe[0]);
        ::close(in_pipe[1]);
        ::close(out_pipe[0]);
        ::close(out_pipe[1]);
        const char* argv[] = {"sh", "-c", cmd_.c_str(), nullptr};
        ::execve("/bin/sh", const_cast<char* const*>(argv), envp.data());
        _exit(127);
    }
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    pid_ = pid;
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    buffer_.clear();
}

void ProcSlot::kill_child() {
    if (pid_ > 0) {
        ::kill(pid_, SIGKILL);
        int status = 0;
        ::waitpid(pid_, &status, 0);
        pid_ = -1;
    }
    if (to_child_ >= 0) ::close(to_child_);
    if (from_child_ >= 0) ::close(from_child_);
    to_child_ = -1;
    from_child_ = -1;
}

bool ProcSlot::write_line(const std::string& line) {
    std::string framed = line + "\n";
    const char* data = framed.data();
    std::size_t len = framed.size();
    while (len > 0) {
        const auto n = ::write(to_child_, data, len);
        if (n <= 0) {
            if (n < 0 && errno == EINTR) continue;
            return false;
        }
        data += n;
        len -= static_cast<std::size_t>(n);
    }
    return true;
}

std::optional<std::string> ProcSlot::read_line(std::chrono::steady_clock::time_point deadline) {
    while (true) {
        const auto nl = buffer_.find('\n');
        if (nl != std::string::npos) {
            std::string line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            return line;
        }
        const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - std::chrono::steady_clock::now());
        if (remaining.count() <= 0) return std::nullopt;
        pollfd pfd{from_child_, POLLIN, 0};
        const int rc = ::poll(&pfd, 1, static_cast<int>(remaining.count()));
        if (rc == 0) return std::nullopt;
        if (rc < 0) {
            if (errno == EINTR) continue;
            return std::nullopt;
        }
        char chunk[4096];
        const auto n = ::read(from_child_, chunk, sizeof(chunk));
        if (n <= 0) return std::nullopt;  // handler exited
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

std::string ProcSlot::handle_kv_line(const std::string& line, HandlerContext& ctx) {
    const auto word = [](const std::string& s, std::size_t& pos) {
        const auto space = s.find(' ', pos);
        std::string w = space == std::string::npos ? s.substr(pos) : s.substr(pos, space - pos);
        pos = space == std::string::npos ? s.size() : space + 1;
        return w;
    };
    try {
        std::size_t pos = 0;
        const auto head = word(line, pos);
        if (head == "KV") {
            const auto op = word(line, pos);
            if (op == "GET") {
                const auto key = line.substr(pos);
                const auto value = ctx.kv().get_opt(key);
                return value ? "OK " + util::base64_encode(*value) : "NF";
            }
            if (op == "SET") {
                const auto key = word(line, pos);
                const auto value = util::base64_decode(line.substr(pos));
                if (!value) return "ERR bad base64";
                ctx.kv().set(key, *value);
                return "OK";
            }
            if (op == "DEL") {
                const auto key = line.substr(pos);
                try {
                    ctx.kv().del(key);
                    return "OK";
                } catch (const EnokiError& e) {
                    if (e.kind() == ErrorKind::NotFound) return "NF";
                    throw;
                }
            }
            if (op == "SCAN") {
                const auto start = word(line, pos);
                const auto count = util::parse_u64(line.substr(pos));
                if (!count) return "ERR bad scan count";
                nlohmann::json arr = nlohmann::json::array();
                for (const auto& [key, value] : ctx.kv().scan(start, *count)) {
                    arr.push_back({key, util::base64_encode(value)});
                }
                return "OK " + util::base64_encode(arr.dump());
            }
            return "ERR unknown kv op";
        }
        if (head == "INVOKE") {
            const auto mode = word(line, pos);
            const auto fn = word(line, pos);
            const auto input = util::base64_decode(line.substr(pos));
            if (!input || (mode != "sync" && mode != "async")) return "ERR bad invoke line";
            if (mode == "sync") {
                return "OK " + util::base64_encode(ctx.call(fn, *input, InvokeMode::Sync));
            }
            ctx.call(fn, *input, InvokeMode::Async);
            return "OK";
        }
    } catch (const std::exception& e) {
        return std::string("ERR ") + e.what();
    }
    return "ERR bad protocol line";
}

std::string ProcSlot::run(const std::string& input, HandlerContext& ctx) {
    ensure_spawned();
    const auto deadline = std::chrono::steady_clock::now() + handler_timeout();
    if (!write_line("CALL " + util::base64_encode(input))) {
        kill_child();
        fail(ErrorKind::Internal, "handler process not accepting input");
    }
    while (true) {
        const auto line = read_line(deadline);
        if (!line) {
            kill_child();
            fail(ErrorKind::Internal, "handler process timed out or exited");
        }
        if (line->rfind("RET ", 0) == 0 || *line == "RET") {
            const auto out = util::base64_decode(line->size() > 4 ? line->substr(4) : "");
            if (!out) {
                kill_child();
                fail(ErrorKind::Internal, "handler returned bad base64");
            }
            return *out;
        }
        if (line->rfind("ERR ", 0) == 0) {
            fail(ErrorKind::Internal, "handler error: " + line->substr(4));
        }
        if (!write_line(handle_kv_line(*line, ctx))) {
            kill_child();
            fail(ErrorKind::Internal, "handler process not accepting replies");
        }
    }
}

}  // namespace

struct Deployment {
    FunctionSpec spec;
    DeploymentResult result;
    HandlerFn handler;      // in-process handlers
    std::string exec_cmd;   // subprocess handlers
    std::string kg;
    std::shared_ptr<rpc::ConnectionPool> home_pool;  // set when kv ops are remote

    std::mutex mu;
    std::condition_variable cv;
    std::condition_variable drained;
    std::deque<FunctionRuntime::Job> queue;
    bool stopping = false;
    std::size_t active = 0;
    std::vector<std::thread> workers;
    std::vector<std::unique_ptr<ProcSlot>> slots;
};

FunctionRuntime::FunctionRuntime(Deps deps) : deps_(std::move(deps)) {
    for (const auto& [name, fn] : builtins::catalog()) handlers_[name] = fn;
}

FunctionRuntime::~FunctionRuntime() { stop(); }

void FunctionRuntime::register_handler(const std::string& name, HandlerFn handler) {
    std::lock_guard lock(mu_);
    handlers_[name] = std::move(handler);
}

std::vector<std::string> FunctionRuntime::list_builtins() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> names;
    names.reserve(handlers_.size());
    for (const auto& [name, _] : handlers_) names.push_back(name);
    return names;
}

bool FunctionRuntime::has_function(const std::string& fn) const {
    std::lock_guard lock(mu_);
    return deployments_.contains(fn);
}

std::optional<FunctionSpec> FunctionRuntime::spec_of(const std::string& fn) const {
    std::lock_guard lock(mu_);
    const auto it = deployments_.find(fn);
    if (it == deployments_.end()) return std::nullopt;
    return it->second->spec;
}

std::optional<DeploymentResult> FunctionRuntime::deployment_result(const std::string& fn) const {
    std::lock_guard lock(mu_);
    const auto it = deployments_.find(fn);
    if (it == deployments_.end()) return std::nullopt;
    return it->second->result;
}

std::shared_ptr<rpc::ConnectionPool> FunctionRuntime::home_pool_for_keygroup(
    const std::string& kg) const {
    std::lock_guard lock(mu_);
    for (const auto& [_, dep] : deployments_) {
        if (dep->kg == kg && dep->home_pool) return dep->home_pool;
    }
    return nullptr;
}

std::shared_ptr<rpc::ConnectionPool> FunctionRuntime::pool_for(const std::string& addr) {
    std::lock_guard lock(mu_);
    auto& pool = pools_[addr];
    if (!pool) pool = std::make_shared<rpc::ConnectionPool>(addr, *deps_.shaper);
    return pool;
}

DeploymentResult FunctionRuntime::deploy(const FunctionSpec& spec) {
    if (spec.name.empty() || !is_token(spec.name)) {
        fail(ErrorKind::BadRequest, "bad function name: '" + spec.name + "'");
    }
    if (spec.threads < 1) fail(ErrorKind::BadRequest, "threads must be >= 1");
    {
        std::lock_guard lock(mu_);
        const auto it = deployments_.find(spec.name);
        if (it != deployments_.end()) {
            if (it->second->spec == spec) return it->second->result;  // idempotent
            fail(ErrorKind::Conflict, "function already deployed with a different spec: " + spec.name);
        }
    }

    auto dep = std::make_unique<Deployment>();
    dep->spec = spec;
    dep->kg = spec.resolved_keygroup();
    if (spec.handler.rfind("exec:", 0) == 0) {
        dep->exec_cmd = spec.handler.substr(5);
        if (dep->exec_cmd.empty()) fail(ErrorKind::BadRequest, "empty handler command");
    } else {
        std::lock_guard lock(mu_);
        const auto it = handlers_.find(spec.handler);
        if (it == handlers_.end()) {
            fail(ErrorKind::BadRequest, "unknown builtin handler: " + spec.handler);
        }
        dep->handler = it->second;
    }

    const NodeId self = deps_.store->self();
    auto record = deps_.naming->lookup_keygroup(dep->kg);
    if (!record) {
        deps_.store->create_keygroup(dep->kg);
        try {
            deps_.naming->create_keygroup(dep->kg, self);
            dep->result.created_keygroup = true;
        } catch (const EnokiError& e) {
            if (e.kind() != ErrorKind::AlreadyExists) throw;
            record = deps_.naming->lookup_keygroup(dep->kg);  // lost a create race
        }
    }
    if (record) {
        const bool member =
            std::find(record->replicas.begin(), record->replicas.end(), self) != record->replicas.end();
        if (member) {
            if (!deps_.store->has_keygroup(dep->kg)) {
                // Re-joining after restart: pull state if anyone else has it.
                Peer source{};
                for (const auto& id : record->replicas) {
                    if (id == self) continue;
                    if (const auto node = deps_.naming->lookup_node(id)) {
                        source = Peer{id, node->address};
                        break;
                    }
                }
                if (source.id.name.empty()) {
                    deps_.store->create_keygroup(dep->kg);
                } else {
                    deps_.repl->bootstrap(dep->kg, source);
                }
            }
        } else if (spec.replicate_from_existing) {
            const auto& first = record->replicas.at(0);
            const auto node = deps_.naming->lookup_node(first);
            if (!node) fail(ErrorKind::Unavailable, "first replica has no address: " + first.name);
            deps_.repl->bootstrap(dep->kg, Peer{first, node->address});
            dep->result.replicated_from = first;
        } else {
            const auto& first = record->replicas.at(0);
            const auto node = deps_.naming->lookup_node(first);
            if (!node) fail(ErrorKind::Unavailable, "home replica has no address: " + first.name);
            dep->home_pool = pool_for(node->address);
        }
    }
    if (!dep->home_pool) {
        try {
            deps_.repl->refresh_replicas(dep->kg);
        } catch (const EnokiError& e) {
            log::warn("runtime", "replica refresh at deploy failed: " + std::string(e.what()));
        }
    }

    Deployment* raw = dep.get();
    {
        std::lock_guard lock(mu_);
        if (stopping_) fail(ErrorKind::Unavailable, "runtime stopping");
        const auto [it, inserted] = deployments_.try_emplace(spec.name, std::move(dep));
        if (!inserted) {  // lost a deploy race
            if (it->second->spec == spec) return it->second->result;
            fail(ErrorKind::Conflict, "function already deployed with a different spec: " + spec.name);
        }
    }
    for (unsigned slot = 0; slot < spec.threads; ++slot) {
        if (!raw->exec_cmd.empty()) {
            raw->slots.push_back(std::make_unique<ProcSlot>(raw->exec_cmd, spec.env, spec.name));
        } else {
            raw->slots.push_back(nullptr);
        }
        raw->workers.emplace_back([this, raw, slot] { worker_loop(*raw, slot); });
    }
    log::info("runtime", "deployed " + spec.name + " (keygroup " + raw->kg +
                             (raw->home_pool ? ", remote data" : ", local data") + ")");
    return raw->result;
}

Deployment& FunctionRuntime::find(const std::string& fn) {
    std::lock_guard lock(mu_);
    const auto it = deployments_.find(fn);
    if (it == deployments_.end()) fail(ErrorKind::NotFound, "function not deployed: " + fn);
    return *it->second;
}

void FunctionRuntime::enqueue(Deployment& dep, Job job) {
    {
        std::lock_guard lock(dep.mu);
        if (dep.stopping) fail(ErrorKind::Unavailable, "function stopping: " + dep.spec.name);
        if (dep.queue.size() >= kInvokeQueueCap) {
            fail(ErrorKind::Unavailable, "invocation queue full: " + dep.spec.name);
        }
        dep.queue.push_back(std::move(job));
    }
    dep.cv.notify_one();
}

std::string FunctionRuntime::invoke_sync(const std::string& fn, const std::string& input,
                                         int depth) {
    if (depth > kMaxCallDepth) fail(ErrorKind::Internal, "call depth exceeded");
    auto& dep = find(fn);
    Job job;
    job.input = input;
    job.depth = depth;
    job.result = std::make_shared<std::promise<std::string>>();
    auto future = job.result->get_future();
    enqueue(dep, std::move(job));
    if (future.wait_for(handler_timeout()) != std::future_status::ready) {
        fail(ErrorKind::Timeout, "handler exceeded wall limit: " + fn);
    }
    return future.get();  // rethrows handler failure as EnokiError
}

void FunctionRuntime::invoke_async(const std::string& fn, const std::string& input, int depth) {
    if (depth > kMaxCallDepth) fail(ErrorKind::Internal, "call depth exceeded");
    auto& dep = find(fn);
    Job job;
    job.input = input;
    job.depth = depth;
    enqueue(dep, std::move(job));
}

session::Session FunctionRuntime::make_session(Deployment& dep) {
    if (dep.home_pool) {
        return session::Session(session::make_remote_backend(dep.home_pool, dep.kg), dep.kg);
    }
    return session::Session(session::make_local_backend(*deps_.store, *deps_.repl, dep.kg), dep.kg);
}

std::string FunctionRuntime::run_handler(Deployment& dep, unsigned slot, const Job& job,
                                         HandlerContext& ctx) {
    if (dep.handler) return dep.handler(job.input, ctx);
    return dep.slots[slot]->run(job.input, ctx);
}

void FunctionRuntime::worker_loop(Deployment& dep, unsigned slot) {
    while (true) {
        Job job;
        {
            std::unique_lock lock(dep.mu);
            dep.cv.wait(lock, [&] { return dep.stopping || !dep.queue.empty(); });
            if (dep.queue.empty()) return;
            job = std::move(dep.queue.front());
            dep.queue.pop_front();
            ++dep.active;
        }
        {
            auto session = make_session(dep);
            HandlerContext ctx(*this, dep, session, job.depth);
            try {
                std::string output = run_handler(dep, slot, job, ctx);
                if (job.result) job.result->set_value(std::move(output));
            } catch (const EnokiError& e) {
                auto mapped = e.kind() == ErrorKind::Internal
                                  ? e
                                  : EnokiError(ErrorKind::Internal, e.what());
                if (job.result) {
                    job.result->set_exception(std::make_exception_ptr(mapped));
                } else {
                    log::warn("runtime", dep.spec.name + " async handler failed: " + e.what());
                }
            } catch (const std::exception& e) {
                const EnokiError mapped(ErrorKind::Internal, e.what());
                if (job.result) {
                    job.result->set_exception(std::make_exception_ptr(mapped));
                } else {
                    log::warn("runtime", dep.spec.name + " async handler failed: " + e.what());
                }
            }
        }
        {
            std::lock_guard lock(dep.mu);
            --dep.active;
            if (dep.queue.empty() && dep.active == 0) dep.drained.notify_all();
        }
    }
}

void FunctionRuntime::stop() {
    std::vector<Deployment*> deps;
    {
        std::lock_guard lock(mu_);
        if (stopping_) return;
        stopping_ = true;
        for (auto& [_, dep] : deployments_) deps.push_back(dep.get());
    }
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
    for (auto* dep : deps) {
        std::unique_lock lock(dep->mu);
        dep->drained.wait_until(lock, deadline,
                                [&] { return dep->queue.empty() && dep->active == 0; });
        dep->stopping = true;
        dep->cv.notify_all();
    }
    for (auto* dep : deps) {
        for (auto& w : dep->workers) {
            if (w.joinable()) w.join();
        }
        dep->slots.clear();
    }
}

const std::map<std::string, std::string>& HandlerContext::env() const { return dep_.spec.env; }

const NodeId& HandlerContext::self_node() const { return runtime_.deps_.store->self(); }

std::string HandlerContext::call(const std::string& fn, const std::string& input,
                                 InvokeMode mode) {
    std::string node;
    const auto it = dep_.spec.env.find("route." + fn);
    if (it != dep_.spec.env.end()) node = it->second;
    return call_at(fn, node, input, mode);
}

std::string HandlerContext::call_at(const std::string& fn, const std::string& node_name,
                                    const std::string& input, InvokeMode mode) {
    const int next_depth = depth_ + 1;
    if (next_depth > kMaxCallDepth) fail(ErrorKind::Internal, "call depth exceeded");
    if (node_name.empty() || node_name == self_node().name) {
        if (mode == InvokeMode::Sync) return runtime_.invoke_sync(fn, input, next_depth);
        runtime_.invoke_async(fn, input, next_depth);
        return "";
    }
    const auto addr = runtime_.deps_.resolve_rpc_addr(NodeId(node_name));
    auto pool = runtime_.pool_for(addr);
    rpc::Frame req(nlohmann::json{{"type", "Invoke"},
                                  {"fn", fn},
                                  {"mode", mode == InvokeMode::Sync ? "sync" : "async"},
                                  {"depth", next_depth}},
                   input);
    auto resp = pool->call(req);
    rpc::throw_if_error(resp);
    return mode == InvokeMode::Sync ? resp.bin : std::string{};
}

}  // namespace enoki::runtime
