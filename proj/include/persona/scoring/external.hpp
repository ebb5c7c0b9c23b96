#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <string>

#include <json.hpp>

#include "persona/errors.hpp"
#include "persona/scoring/nli.hpp"

namespace persona::scoring {

/// Child process speaking one JSON object per line over stdin/stdout:
///   request  {"premise": "...", "hypothesis": "..."}
///   reply    {"entail": x, "neutral": y, "contradict": z}
/// One process serves one caller at a time.
class ExternalNliBackend final : public NliBackend {
  public:
    explicit ExternalNliBackend(std::string command,
                                std::chrono::milliseconds timeout = std::chrono::seconds(10))
        : m_command(std::move(command)), m_timeout(timeout)
    {
        if (m_command.empty()) {
            throw ArgumentError("external backend needs a launch command");
        }
        ::signal(SIGPIPE, SIG_IGN);
        int to_child[2];
        int from_child[2];
        if (::pipe(to_child) != 0 || ::pipe(from_child) != 0) {
            throw BackendError("cannot create pipes for external backend");
        }
        m_pid = ::fork();
        if (m_pid < 0) {
            throw BackendError("cannot fork external backend");
        }
        if (m_pid == 0) {
            ::dup2(to_child[0], STDIN_FILENO);
            ::dup2(from_child[1], STDOUT_FILENO);
            ::close(to_child[0]);
            ::close(to_child[1]);
            ::close(from_child[0]);
            ::close(from_child[1]);
            ::execl("/bin/sh", "sh", "-c", m_command.c_str(), static_cast<char*>(nullptr));
            ::_exit(127);
        }
        ::close(to_child[0]);
        ::close(from_child[1]);
        m_in = to_child[1];
        m_out = from_child[0];
        ::fcntl(m_in, F_SETFD, FD_CLOEXEC);
        ::fcntl(m_out, F_SETFD, FD_CLOEXEC);
    }

    ExternalNliBackend(const ExternalNliBackend&) = delete;
    ExternalNliBackend& operator=(const ExternalNliBackend&) = delete;

    ~ExternalNliBackend() override
    {
        if (m_in >= 0) {
            ::close(m_in);
        }
        if (m_out >= 0) {
            ::close(m_out);
        }
        if (m_pid > 0) {
            int status = 0;
            if (::waitpid(m_pid, &status, WNOHANG) == 0) {
                ::kill(m_pid, SIGTERM);
                ::waitpid(m_pid, &status, 0);
            }
        }
    }

    NliVerdict verdict(const Tokens& premise, const Tokens& hypothesis) override
    {
        if (premise.empty() || hypothesis.empty()) {
            throw ArgumentError("NLI inputs must be non-empty");
        }
        nlohmann::ordered_json req;
        req["premise"] = text::join(premise);
        req["hypothesis"] = text::join(hypothesis);
        write_line(req.dump() + "\n");
        std::string reply = read_line();
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(reply);
        } catch (const nlohmann::json::exception&) {
            throw BackendError("external backend sent malformed JSON", reply);
        }
        if (!j.is_object()) {
            throw BackendError("external backend reply is not an object", reply);
        }
        for (const char* key : {"entail", "neutral", "contradict"}) {
            if (!j.contains(key) || !j[key].is_number()) {
                throw BackendError(std::string("external backend reply lacks numeric '") + key + "'", reply);
            }
        }
        double e = j["entail"].get<double>();
        double n = j["neutral"].get<double>();
        double c = j["contradict"].get<double>();
        for (double x : {e, n, c}) {
            if (!(x >= 0.0 && x <= 1.0)) {
                throw BackendError("external backend probability outside [0,1]", reply);
            }
        }
        if (std::abs(e + n + c - 1.0) > 1e-3) {
            throw BackendError("external backend probabilities do not sum to 1", reply);
        }
        return NliVerdict::normalized(e, n, c);
    }

    std::string name() const override { return "external:" + m_command; }

  private:
    void write_line(const std::string& line)
    {
        std::size_t off = 0;
        while (off < line.size()) {
            auto n = ::write(m_in, line.data() + off, line.size() - off);
            if (n < 0) {
                if (errno == EINTR) {
                    continue;
                }
                throw BackendError("external backend is not accepting input (process dead?)", m_buffer);
            }
            off += static_cast<std::size_t>(n);
        }
    }

    std::string read_line()
    {
        auto deadline = std::chrono::steady_clock::now() + m_timeout;
        while (true) {
            auto nl = m_buffer.find('\n');
            if (nl != std::string::npos) {
                std::string line = m_buffer.substr(0, nl);
                m_buffer.erase(0, nl + 1);
                return line;
            }
            auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                deadline - std::chrono::steady_clock::now());
            if (left.count() <= 0) {
                throw BackendError("external backend reply timed out", m_buffer);
            }
            pollfd pfd{m_out, POLLIN, 0};
            int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
            if (rc < 0) {
                if (errno == EINTR) {
                    continue;
                }
                throw BackendError("poll on external backend failed", m_buffer);
            }
            if (rc == 0) {
                throw BackendError("external backend reply timed out", m_buffer);
            }
            char chunk[4096];
            auto n = ::read(m_out, chunk, sizeof chunk);
            if (n < 0) {
                if (errno == EINTR) {
                    continue;
                }
                throw BackendError("read from external backend failed", m_buffer);
            }
            if (n == 0) {
                throw BackendError("external backend exited", m_buffer);
            }
            m_buffer.append(chunk, static_cast<std::size_t>(n));
        }
    }

    std::string m_command;
    std::chrono::milliseconds m_timeout;
    pid_t m_pid = -1;
    int m_in = -1;
    int m_out = -1;
    std::string m_buffer;
};

}  // namespace persona::scoring
