#pragma once

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "semir/common.hpp"

namespace semir::detail {

/// A bidirectional, newline-delimited byte channel to either a child process
/// (its stdin/stdout) or a TCP peer. Reads and writes honour a deadline.
class LineChannel {
public:
    LineChannel() = default;
    LineChannel(const LineChannel&) = delete;
    LineChannel& operator=(const LineChannel&) = delete;
    LineChannel(LineChannel&& o) noexcept { *this = std::move(o); }
    LineChannel& operator=(LineChannel&& o) noexcept {
        if (this != &o) {
            close();
            in_fd_ = std::exchange(o.in_fd_, -1);
            out_fd_ = std::exchange(o.out_fd_, -1);
            child_ = std::exchange(o.child_, -1);
            buffer_ = std::move(o.buffer_);
        }
        return *this;
    }
    ~LineChannel() { close(); }

    /// Runs `command` through /bin/sh with piped stdin/stdout.
    static LineChannel spawn(const std::string& command) {
        ignore_sigpipe();
        int to_child[2];
        int from_child[2];
        if (::pipe(to_child) != 0 || ::pipe(from_child) != 0) {
            throw TransportError("pipe() failed: " + std::string(std::strerror(errno)));
        }
        const pid_t pid = ::fork();
        if (pid < 0) {
            throw TransportError("fork() failed: " + std::string(std::strerror(errno)));
        }
        if (pid == 0) {
            ::dup2(to_child[0], STDIN_FILENO);
            ::dup2(from_child[1], STDOUT_FILENO);
            ::close(to_child[0]);
            ::close(to_child[1]);
            ::close(from_child[0]);
            ::close(from_child[1]);
            ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
            ::_exit(127);
        }
        ::close(to_child[0]);
        ::close(from_child[1]);
        LineChannel ch;
        ch.out_fd_ = to_child[1];
        ch.in_fd_ = from_child[0];
        ch.child_ = pid;
        ::fcntl(ch.out_fd_, F_SETFD, FD_CLOEXEC);
        ::fcntl(ch.in_fd_, F_SETFD, FD_CLOEXEC);
        return ch;
    }

    static LineChannel connect_tcp(const std::string& host, const std::string& port) {
        ignore_sigpipe();
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        if (int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0) {
            throw TransportError("cannot resolve " + host + ":" + port + ": " + ::gai_strerror(rc));
        }
        int fd = -1;
        for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
            fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
            if (fd < 0) {
                continue;
            }
            if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
                break;
            }
            ::close(fd);
            fd = -1;
        }
        ::freeaddrinfo(res);
        if (fd < 0) {
            throw TransportError("cannot connect to " + host + ":" + port);
        }
        LineChannel ch;
        ch.in_fd_ = fd;
        ch.out_fd_ = ::dup(fd);
        return ch;
    }

    bool is_open() const { return in_fd_ >= 0 && out_fd_ >= 0; }

    using Clock = std::chrono::steady_clock;

    /// Writes everything, draining the peer's output into the line buffer
    /// meanwhile so neither side can block on a full pipe.
    void write_all(std::string_view data, Clock::time_point deadline) {
        while (!data.empty()) {
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
            if (left.count() <= 0) {
                throw TransportError("scorer timed out");
            }
            pollfd fds[2] = {{out_fd_, POLLOUT, 0}, {in_fd_, POLLIN, 0}};
            const int rc = ::poll(fds, 2, static_cast<int>(left.count()));
            if (rc < 0) {
                if (errno == EINTR) {
                    continue;
                }
                throw TransportError("poll failed: " + std::string(std::strerror(errno)));
            }
            if (fds[1].revents & (POLLIN | POLLHUP)) {
                fill(deadline);
            }
            if (fds[0].revents & (POLLERR | POLLHUP)) {
                throw TransportError("scorer closed its input");
            }
            if (fds[0].revents & POLLOUT) {
                // POLLOUT guarantees room for PIPE_BUF bytes, so this never blocks.
                const ssize_t n = ::write(out_fd_, data.data(), std::min<std::size_t>(data.size(), 512));
                if (n < 0) {
                    if (errno == EINTR || errno == EAGAIN) {
                        continue;
                    }
                    throw TransportError("write to scorer failed: " + std::string(std::strerror(errno)));
                }
                data.remove_prefix(static_cast<std::size_t>(n));
            }
        }
    }

    /// Returns true when a complete line is buffered without blocking.
    bool poll_line(std::string& line) {
        auto nl = buffer_.find('\n');
        if (nl == std::string::npos) {
            return false;
        }
        line = buffer_.substr(0, nl);
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        buffer_.erase(0, nl + 1);
        return true;
    }

    std::string read_line(Clock::time_point deadline) {
        std::string line;
        while (!poll_line(line)) {
            fill(deadline);
        }
        return line;
    }

    /// Reads whatever is available (blocking until at least one byte or the
    /// deadline).
    void fill(Clock::time_point deadline) {
        wait_ready(in_fd_, POLLIN, deadline);
        char buf[4096];
        const ssize_t n = ::read(in_fd_, buf, sizeof buf);
        if (n < 0) {
            if (errno == EINTR || errno == EAGAIN) {
                return;
            }
            throw TransportError("read from scorer failed: " + std::string(std::strerror(errno)));
        }
        if (n == 0) {
            throw TransportError("scorer closed the connection");
        }
        buffer_.append(buf, static_cast<std::size_t>(n));
    }

    int in_fd() const { return in_fd_; }
    int out_fd() const { return out_fd_; }

    void close() {
        if (out_fd_ >= 0) {
            ::close(out_fd_);
            out_fd_ = -1;
        }
        if (in_fd_ >= 0) {
            ::close(in_fd_);
            in_fd_ = -1;
        }
        if (child_ > 0) {
            int status = 0;
            if (::waitpid(child_, &status, WNOHANG) == 0) {
                ::kill(child_, SIGTERM);
                ::waitpid(child_, &status, 0);
            }
            child_ = -1;
        }
        buffer_.clear();
    }

private:
    static void ignore_sigpipe() { ::signal(SIGPIPE, SIG_IGN); }

    static void wait_ready(int fd, short events, Clock::time_point deadline) {
        for (;;) {
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
            if (left.count() <= 0) {
                throw TransportError("scorer timed out");
            }
            pollfd p{fd, events, 0};
            const int rc = ::poll(&p, 1, static_cast<int>(left.count()));
            if (rc > 0) {
                return;
            }
            if (rc < 0 && errno != EINTR) {
                throw TransportError("poll failed: " + std::string(std::strerror(errno)));
            }
        }
    }

    int in_fd_ = -1;
    int out_fd_ = -1;
    pid_t child_ = -1;
    std::string buffer_;
};

}  // namespace semir::detail
