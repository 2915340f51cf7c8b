#pragma once

// Newline-delimited JSON wire protocol and the remote provider client.
//
//   client -> {"op":"hello","proto":1}
//   server <- {"op":"vocab","size":V,"eos":id,"meta":{"both":id,"video":id,"audio":id}}
//   client -> {"op":"logits","video":"standard"|"perturbed","audio":...,
//              "question":[ids],"prefix":[ids],"mode":"gen"|"meta"[,"prompt":p],"qid":id}
//   server <- {"op":"logits","values":[V floats]}   or   {"op":"error","code":c,"message":m}
//
// Transports: a child process over stdio pipes, or a TCP stream.

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mad/core.hpp"
#include "mad/provider.hpp"

namespace mad {

inline constexpr int kProtocolVersion = 1;

// Frames ----------------------------------------------------------------------

struct VocabFrame {
    std::size_t size = 0;
    TokenId eos = -1;
    TokenId both = -1;
    TokenId video = -1;
    TokenId audio = -1;
    std::string perturbation; // optional server-declared realization of "perturbed"
};

inline std::string hello_frame() { return nlohmann::json{{"op", "hello"}, {"proto", kProtocolVersion}}.dump(); }

inline std::string vocab_frame(const Vocabulary& vocab, const std::string& perturbation = "") {
    nlohmann::json j{{"op", "vocab"},
                     {"size", vocab.size()},
                     {"eos", vocab.eos()},
                     {"meta", {{"both", vocab.both()}, {"video", vocab.video()}, {"audio", vocab.audio()}}}};
    if (!perturbation.empty()) j["perturbation"] = perturbation;
    return j.dump();
}

namespace detail {

inline nlohmann::json parse_frame(const std::string& line) {
    try {
        nlohmann::json j = nlohmann::json::parse(line);
        require(j.is_object(), ErrorKind::Protocol, "frame is not a JSON object");
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Protocol, std::string("malformed frame: ") + e.what());
    }
}

template <typename T>
T field(const nlohmann::json& j, const char* key) {
    require(j.contains(key), ErrorKind::Protocol, std::string("frame lacks '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Protocol, std::string("bad '") + key + "': " + e.what());
    }
}

inline void throw_if_error_frame(const nlohmann::json& j) {
    if (j.value("op", "") == "error") {
        throw Error(ErrorKind::Protocol, "server error " + j.value("code", std::string("?")) + ": " +
                                             j.value("message", std::string("")));
    }
}

} // namespace detail

inline VocabFrame parse_vocab_frame(const std::string& line) {
    nlohmann::json j = detail::parse_frame(line);
    detail::throw_if_error_frame(j);
    require(detail::field<std::string>(j, "op") == "vocab", ErrorKind::Protocol, "expected a vocab frame");
    VocabFrame v;
    v.size = detail::field<std::size_t>(j, "size");
    v.eos = detail::field<TokenId>(j, "eos");
    const nlohmann::json meta = detail::field<nlohmann::json>(j, "meta");
    v.both = detail::field<TokenId>(meta, "both");
    v.video = detail::field<TokenId>(meta, "video");
    v.audio = detail::field<TokenId>(meta, "audio");
    v.perturbation = j.value("perturbation", std::string());
    return v;
}

inline std::string logits_request(ModalityConfig cfg, const Context& ctx) {
    nlohmann::json j{{"op", "logits"},
                     {"video", to_string(cfg.video)},
                     {"audio", to_string(cfg.audio)},
                     {"question", ctx.question},
                     {"prefix", ctx.prefix},
                     {"qid", ctx.question_id}};
    if (ctx.mode.kind == QueryKind::ModalityQuery) {
        j["mode"] = "meta";
        j["prompt"] = ctx.mode.prompt_id;
    } else {
        j["mode"] = "gen";
    }
    return j.dump();
}

/// Inverse of logits_request (used by servers).
inline std::pair<ModalityConfig, Context> parse_logits_request(const std::string& line) {
    nlohmann::json j = detail::parse_frame(line);
    require(detail::field<std::string>(j, "op") == "logits", ErrorKind::Protocol, "expected a logits request");
    ModalityConfig cfg{parse_modality_state(detail::field<std::string>(j, "video")),
                       parse_modality_state(detail::field<std::string>(j, "audio"))};
    Context ctx;
    ctx.question = detail::field<std::vector<TokenId>>(j, "question");
    ctx.prefix = detail::field<std::vector<TokenId>>(j, "prefix");
    ctx.question_id = j.value("qid", std::int64_t{0});
    const std::string mode = detail::field<std::string>(j, "mode");
    if (mode == "meta") {
        ctx.mode = QueryMode::modality_query(detail::field<int>(j, "prompt"));
    } else {
        require(mode == "gen", ErrorKind::Protocol, "unknown mode '" + mode + "'");
    }
    return {cfg, ctx};
}

/// Doubles are written in shortest round-trip form.
inline std::string logits_response(const LogitVector& l) {
    return nlohmann::json{{"op", "logits"}, {"values", l.vector()}}.dump();
}

inline LogitVector parse_logits_response(const std::string& line) {
    nlohmann::json j = detail::parse_frame(line);
    detail::throw_if_error_frame(j);
    require(detail::field<std::string>(j, "op") == "logits", ErrorKind::Protocol, "expected a logits frame");
    std::vector<double> values = detail::field<std::vector<double>>(j, "values");
    for (double v : values) {
        require(std::isfinite(v), ErrorKind::Protocol, "non-finite logit in response");
    }
    return LogitVector(std::move(values));
}

inline std::string error_frame(const std::string& code, const std::string& message) {
    return nlohmann::json{{"op", "error"}, {"code", code}, {"message", message}}.dump();
}

// Channels ----------------------------------------------------------------------

/// A bidirectional line stream.
class LineChannel {
public:
    virtual ~LineChannel() = default;
    virtual void write_line(const std::string& line) = 0;
    /// Blocks for at most `timeout`; throws Timeout on expiry, Transport on EOF.
    virtual std::string read_line(std::chrono::milliseconds timeout) = 0;
};

/// Line channel over a pair of file descriptors. Owns them.
class FdChannel : public LineChannel {
public:
    FdChannel(int read_fd, int write_fd) : read_fd_(read_fd), write_fd_(write_fd) {}
    ~FdChannel() override { close_fds(); }

    FdChannel(const FdChannel&) = delete;
    FdChannel& operator=(const FdChannel&) = delete;

    void write_line(const std::string& line) override {
        std::string buf = line + "\n";
        const char* p = buf.data();
        std::size_t left = buf.size();
        while (left > 0) {
            ssize_t n = ::write(write_fd_, p, left);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw Error(ErrorKind::Transport, std::string("write failed: ") + std::strerror(errno));
            }
            p += n;
            left -= static_cast<std::size_t>(n);
        }
    }

    std::string read_line(std::chrono::milliseconds timeout) override {
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        for (;;) {
            auto nl = buffer_.find('\n');
            if (nl != std::string::npos) {
                std::string line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                return line;
            }
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) {
                throw Error(ErrorKind::Timeout, "no response within " + std::to_string(timeout.count()) + " ms");
            }
            pollfd pfd{read_fd_, POLLIN, 0};
            int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
            if (rc < 0) {
                if (errno == EINTR) continue;
                throw Error(ErrorKind::Transport, std::string("poll failed: ") + std::strerror(errno));
            }
            if (rc == 0) continue;
            char chunk[65536];
            ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
            if (n < 0) {
                if (errno == EINTR || errno == EAGAIN) continue;
                throw Error(ErrorKind::Transport, std::string("read failed: ") + std::strerror(errno));
            }
            if (n == 0) {
                throw Error(ErrorKind::Transport, "peer closed the stream");
            }
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

protected:
    void close_fds() {
        if (read_fd_ >= 0) ::close(read_fd_);
        if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
        read_fd_ = write_fd_ = -1;
    }

private:
    int read_fd_;
    int write_fd_;
    std::string buffer_;
};

/// Spawns `/bin/sh -c command` and talks to it over its stdin/stdout.
class SubprocessChannel final : public FdChannel {
public:
    static std::unique_ptr<SubprocessChannel> spawn(const std::string& command) {
        int to_child[2];
        int from_child[2];
        if (::pipe(to_child) != 0 || ::pipe(from_child) != 0) {
            throw Error(ErrorKind::Transport, std::string("pipe failed: ") + std::strerror(errno));
        }
        ::signal(SIGPIPE, SIG_IGN);
        pid_t pid = ::fork();
        if (pid < 0) {
            throw Error(ErrorKind::Transport, std::string("fork failed: ") + std::strerror(errno));
        }
        if (pid == 0) {
            ::setpgid(0, 0);
            ::dup2(to_child[0], STDIN_FILENO);
            ::dup2(from_child[1], STDOUT_FILENO);
            ::close(to_child[0]);
            ::close(to_child[1]);
            ::close(from_child[0]);
            ::close(from_child[1]);
            ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
            ::_exit(127);
        }
        ::setpgid(pid, pid);
        ::close(to_child[0]);
        ::close(from_child[1]);
        ::fcntl(to_child[1], F_SETFD, FD_CLOEXEC);
        ::fcntl(from_child[0], F_SETFD, FD_CLOEXEC);
        return std::unique_ptr<SubprocessChannel>(new SubprocessChannel(from_child[0], to_child[1], pid));
    }

    ~SubprocessChannel() override {
        close_fds(); // EOF on stdin asks the child to exit
        if (pid_ > 0) {
            for (int i = 0; i < 50; ++i) {
                if (::waitpid(pid_, nullptr, WNOHANG) == pid_) {
                    ::kill(-pid_, SIGKILL);
                    return;
                }
                std::this_thread::sleep_for(std::chrono::milliseconds(10));
            }
            ::kill(-pid_, SIGKILL);
            ::waitpid(pid_, nullptr, 0);
        }
    }

private:
    SubprocessChannel(int rfd, int wfd, pid_t pid) : FdChannel(rfd, wfd), pid_(pid) {}
    pid_t pid_;
};

/// Connects to host:port.
inline std::unique_ptr<LineChannel> connect_tcp(const std::string& address) {
    const auto colon = address.rfind(':');
    require(colon != std::string::npos, ErrorKind::Configuration, "bridge address must be host:port");
    const std::string host = address.substr(0, colon);
    const std::string port = address.substr(colon + 1);
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0) {
        throw Error(ErrorKind::Transport, "cannot resolve " + address + ": " + ::gai_strerror(rc));
    }
    int fd = -1;
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) continue;
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(res);
    require(fd >= 0, ErrorKind::Transport, "cannot connect to " + address);
    ::signal(SIGPIPE, SIG_IGN);
    return std::make_unique<FdChannel>(fd, fd);
}

// Remote provider -------------------------------------------------------------------

struct RemoteOptions {
    std::chrono::milliseconds timeout{5000};
    int connect_retries = 3;
    std::chrono::milliseconds retry_backoff{100};
    /// When set, the handshake must agree with this vocabulary's size and
    /// reserved ids.
    std::optional<Vocabulary> expected_vocab;
};

/// Client for a provider behind the wire protocol. Requests on one
/// connection are serialized.
class RemoteProvider final : public LogitProvider {
public:
    using Connector = std::function<std::unique_ptr<LineChannel>()>;

    RemoteProvider(Connector connect, RemoteOptions opts = {}) : opts_(std::move(opts)) {
        std::string last;
        for (int attempt = 0; attempt <= opts_.connect_retries; ++attempt) {
            try {
                channel_ = connect();
                handshake();
                return;
            } catch (const Error& e) {
                if (e.kind() == ErrorKind::VocabMismatch || e.kind() == ErrorKind::Protocol ||
                    e.kind() == ErrorKind::Configuration) {
                    throw;
                }
                last = e.what();
                channel_.reset();
                std::this_thread::sleep_for(opts_.retry_backoff);
            }
        }
        throw Error(ErrorKind::Transport, "provider unavailable after " + std::to_string(opts_.connect_retries + 1) +
                                              " attempts: " + last);
    }

    static std::unique_ptr<RemoteProvider> spawn(const std::string& command, RemoteOptions opts = {}) {
        return std::make_unique<RemoteProvider>([command] { return SubprocessChannel::spawn(command); }, std::move(opts));
    }

    static std::unique_ptr<RemoteProvider> tcp(const std::string& address, RemoteOptions opts = {}) {
        return std::make_unique<RemoteProvider>([address] { return connect_tcp(address); }, std::move(opts));
    }

    const Vocabulary& vocabulary() const override { return vocab_; }
    const VocabFrame& handshake_info() const noexcept { return frame_; }

    /// Same contract as eval_any: generation and query mode both return V logits.
    LogitVector remote_eval(ModalityConfig cfg, const Context& ctx) { return eval_any(cfg, ctx); }

protected:
    LogitVector forward(ModalityConfig cfg, const Context& ctx) override {
        std::lock_guard<std::mutex> lock(mu_);
        require(channel_ != nullptr, ErrorKind::Transport, "connection closed");
        channel_->write_line(logits_request(cfg, ctx));
        LogitVector out = parse_logits_response(channel_->read_line(opts_.timeout));
        require(out.size() == frame_.size, ErrorKind::Protocol,
                "response carries " + std::to_string(out.size()) + " logits, handshake said " +
                    std::to_string(frame_.size));
        return out;
    }

private:
    void handshake() {
        channel_->write_line(hello_frame());
        frame_ = parse_vocab_frame(channel_->read_line(opts_.timeout));
        const std::size_t v = frame_.size;
        auto in_range = [v](TokenId id) { return id >= 0 && static_cast<std::size_t>(id) < v; };
        require(in_range(frame_.eos) && in_range(frame_.both) && in_range(frame_.video) && in_range(frame_.audio),
                ErrorKind::Protocol, "handshake ids out of range");
        if (opts_.expected_vocab) {
            const Vocabulary& e = *opts_.expected_vocab;
            require(e.size() == v, ErrorKind::VocabMismatch,
                    "vocabulary size mismatch: server " + std::to_string(v) + ", local " + std::to_string(e.size()));
            require(e.eos() == frame_.eos && e.both() == frame_.both && e.video() == frame_.video &&
                        e.audio() == frame_.audio,
                    ErrorKind::VocabMismatch, "reserved token ids differ from the local vocabulary");
            vocab_ = e;
            return;
        }
        std::vector<std::string> tokens(v);
        for (std::size_t i = 0; i < v; ++i) tokens[i] = "tok_" + std::to_string(i);
        require(frame_.eos != frame_.both && frame_.eos != frame_.video && frame_.eos != frame_.audio &&
                    frame_.both != frame_.video && frame_.both != frame_.audio && frame_.video != frame_.audio,
                ErrorKind::Protocol, "reserved token ids are not distinct");
        tokens[static_cast<std::size_t>(frame_.eos)] = std::string(Vocabulary::kEos);
        tokens[static_cast<std::size_t>(frame_.both)] = std::string(Vocabulary::kBoth);
        tokens[static_cast<std::size_t>(frame_.video)] = std::string(Vocabulary::kVideo);
        tokens[static_cast<std::size_t>(frame_.audio)] = std::string(Vocabulary::kAudio);
        vocab_ = Vocabulary(std::move(tokens));
    }

    RemoteOptions opts_;
    std::unique_ptr<LineChannel> channel_;
    VocabFrame frame_;
    Vocabulary vocab_;
    std::mutex mu_;
};

} // namespace mad
