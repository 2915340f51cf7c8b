// Reference server for the wire protocol, backed by the synthetic provider.
// Fault modes let tests exercise the client's error paths.

#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <iostream>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "mad/harness.hpp"
#include "mad/synth.hpp"
#include "mad/wire.hpp"

namespace {

struct Options {
    std::uint64_t seed = 7;
    int n_per_category = 50;
    std::string fault = "none";
    int port = 0;
};

class Server {
public:
    explicit Server(const Options& o) : opts_(o), suite_(mad::build_suite(o.n_per_category, o.seed)), spec_(suite_.model()) {}

    /// Handles one connection until EOF. Returns false to stop serving.
    void serve(mad::LineChannel& ch) {
        int malformed = 0;
        for (;;) {
            std::string line;
            try {
                line = ch.read_line(std::chrono::hours(24));
            } catch (const mad::Error&) {
                return;
            }
            if (line.empty()) continue;
            std::string reply;
            try {
                reply = respond(line);
                malformed = 0;
            } catch (const mad::Error& e) {
                if (e.kind() == mad::ErrorKind::Protocol && ++malformed >= 3) {
                    ch.write_line(mad::error_frame("malformed", "too many malformed frames, closing"));
                    return;
                }
                reply = mad::error_frame(e.kind() == mad::ErrorKind::Protocol ? "malformed" : "invalid", e.what());
            }
            if (reply.empty()) continue;
            ch.write_line(reply);
        }
    }

private:
    std::string respond(const std::string& line) {
        const nlohmann::json j = mad::detail::parse_frame(line);
        const std::string op = j.value("op", "");
        if (op == "hello") {
            if (opts_.fault == "wrong-vocab") {
                std::vector<std::string> tokens = suite_.vocab.tokens();
                tokens.push_back("extra");
                return mad::vocab_frame(mad::Vocabulary(tokens), "hard-gating");
            }
            return mad::vocab_frame(suite_.vocab, "hard-gating");
        }
        auto [cfg, ctx] = mad::parse_logits_request(line);
        if (opts_.fault == "hang") {
            std::this_thread::sleep_for(std::chrono::hours(1));
        }
        if (opts_.fault == "malformed") return "{\"op\": \"logits\", \"values\": [1.0, ";
        if (opts_.fault == "error") return mad::error_frame("backend", "model unavailable");
        std::vector<double> values = mad::synth_logits(spec_, cfg, ctx).vector();
        if (opts_.fault == "truncate") values.pop_back();
        return nlohmann::json{{"op", "logits"}, {"values", values}}.dump();
    }

    Options opts_;
    mad::Suite suite_;
    mad::SynthModelSpec spec_;
};

int serve_tcp(Server& server, int port) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd, 8) != 0) {
        std::cerr << "mock_bridge: cannot listen on port " << port << "\n";
        return 3;
    }
    for (;;) {
        int c = ::accept(fd, nullptr, nullptr);
        if (c < 0) continue;
        mad::FdChannel ch(c, c);
        server.serve(ch);
    }
}

} // namespace

int main(int argc, char** argv) {
    Options o;
    CLI::App app{"Synthetic logit provider over the wire protocol"};
    app.add_option("--seed", o.seed, "Suite seed");
    app.add_option("--n-per-category", o.n_per_category, "Suite size per category");
    app.add_option("--fault", o.fault, "Injected fault")
        ->check(CLI::IsMember({"none", "wrong-vocab", "truncate", "malformed", "hang", "error"}));
    app.add_option("--port", o.port, "Serve TCP on 127.0.0.1:port instead of stdio");
    CLI11_PARSE(app, argc, argv);

    try {
        Server server(o);
        if (o.port > 0) return serve_tcp(server, o.port);
        mad::FdChannel ch(STDIN_FILENO, STDOUT_FILENO);
        server.serve(ch);
    } catch (const mad::Error& e) {
        std::cerr << "mock_bridge: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
