// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#include "retrans/sandbox.hpp"

#include <cerrno>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <vector>

#include <fcntl.h>
#include <sys/resource.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

namespace retrans {

const char* stage_name(ReexecStage s) {
    switch (s) {
    case ReexecStage::None: return "none";
    case ReexecStage::Compile: return "compile";
    case ReexecStage::Timeout: return "timeout";
    case ReexecStage::Memory: return "memory";
    case ReexecStage::Crash: return "crash";
    case ReexecStage::Mismatch: return "mismatch";
    }
    return "?";
}

namespace {

std::vector<std::string> split_command(const std::string& tmpl) {
    std::vector<std::string> out;
    std::istringstream ss(tmpl);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

void substitute(std::string& tok, const std::string& key, const std::string& value) {
    for (size_t pos = tok.find(key); pos != std::string::npos; pos = tok.find(key, pos))
        tok.replace(pos, key.size(), value), pos += value.size();
}

std::vector<std::string> build_argv(const SandboxConfig& cfg, const std::string& src,
                                    const std::string& out) {
    if (cfg.compile_command.find("{src}") == std::string::npos ||
        cfg.compile_command.find("{out}") == std::string::npos)
        throw std::invalid_argument(
            "compile command template must contain {src} and {out}: " + cfg.compile_command);
    auto argv = split_command(cfg.compile_command);
    if (argv.empty()) throw std::invalid_argument("empty compile command template");
    for (auto& tok : argv) {
        substitute(tok, "{src}", src);
        substitute(tok, "{out}", out);
    }
    return argv;
}

bool resolves_on_path(const std::string& name) {
    if (name.find('/') != std::string::npos) return access(name.c_str(), X_OK) == 0;
    const char* path = std::getenv("PATH");
    if (!path) return false;
    std::istringstream ss(path);
    std::string dir;
    while (std::getline(ss, dir, ':')) {
        if (dir.empty()) continue;
        std::string full = dir + "/" + name;
        if (access(full.c_str(), X_OK) == 0) return true;
    }
    return false;
}

struct SpawnLimits {
    double wall_sec = 30.0;
    uint64_t address_space = 0; // 0 = unlimited
    bool limit_cpu = false;
};

struct SpawnOutcome {
    bool exec_failed = false;
    int exec_errno = 0;
    bool timed_out = false;
    int status = 0;     // raw waitpid status
    long maxrss_kb = 0; // from wait4 rusage
    std::string captured; // stderr, truncated
};

// fork/exec with rlimits in the child and a wall-clock watchdog in the
// parent. Child stdout/stderr go to /dev/null unless capture_stderr.
SpawnOutcome spawn_limited(const std::vector<std::string>& argv, const std::string& workdir,
                           const SpawnLimits& lim, bool capture_stderr) {
    int errpipe[2] = {-1, -1};  // exec-failure reporting
    int cappipe[2] = {-1, -1};  // stderr capture
    if (pipe(errpipe) != 0) throw std::runtime_error("pipe() failed");
    if (capture_stderr && pipe(cappipe) != 0) throw std::runtime_error("pipe() failed");
    fcntl(errpipe[1], F_SETFD, FD_CLOEXEC);

    pid_t pid = fork();
    if (pid < 0) throw std::runtime_error("fork() failed");

    if (pid == 0) {
        close(errpipe[0]);
        if (capture_stderr) close(cappipe[0]);
        if (!workdir.empty() && chdir(workdir.c_str()) != 0) _exit(127);

        int devnull = open("/dev/null", O_RDWR);
        if (devnull >= 0) {
            dup2(devnull, STDIN_FILENO);
            dup2(devnull, STDOUT_FILENO);
            if (!capture_stderr) dup2(devnull, STDERR_FILENO);
        }
        if (capture_stderr) dup2(cappipe[1], STDERR_FILENO);

        if (lim.address_space > 0) {
            rlimit rl{lim.address_space, lim.address_space};
            setrlimit(RLIMIT_AS, &rl);
        }
        if (lim.limit_cpu) {
            rlim_t secs = rlim_t(std::ceil(lim.wall_sec)) + 1;
            rlimit rl{secs, secs + 1};
            setrlimit(RLIMIT_CPU, &rl);
        }
        rlimit core{0, 0};
        setrlimit(RLIMIT_CORE, &core);

        std::vector<char*> cargv;
        for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
        cargv.push_back(nullptr);
        execvp(cargv[0], cargv.data());
        int err = errno;
        ssize_t ignored = write(errpipe[1], &err, sizeof err);
        (void)ignored;
        _exit(127);
    }

    close(errpipe[1]);
    if (capture_stderr) {
        close(cappipe[1]);
        fcntl(cappipe[0], F_SETFL, O_NONBLOCK);
    }

    SpawnOutcome out;
    // Drain stderr without blocking so a chatty child never wedges against a
    // full pipe while we wait for it.
    auto drain = [&] {
        if (!capture_stderr) return;
        char buf[4096];
        ssize_t n;
        while ((n = read(cappipe[0], buf, sizeof buf)) > 0) {
            size_t room = out.captured.size() < 8192 ? 8192 - out.captured.size() : 0;
            out.captured.append(buf, std::min(size_t(n), room));
        }
    };

    auto deadline = std::chrono::steady_clock::now() +
                    std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                        std::chrono::duration<double>(lim.wall_sec));
    rusage usage{};
    for (;;) {
        drain();
        int status = 0;
        pid_t r = wait4(pid, &status, WNOHANG, &usage);
        if (r == pid) {
            out.status = status;
            break;
        }
        if (r < 0) throw std::runtime_error("wait4() failed");
        if (std::chrono::steady_clock::now() >= deadline) {
            out.timed_out = true;
            kill(pid, SIGKILL);
            wait4(pid, &out.status, 0, &usage);
            break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    drain();
    if (capture_stderr) close(cappipe[0]);
    out.maxrss_kb = usage.ru_maxrss;

    int err = 0;
    if (read(errpipe[0], &err, sizeof err) == sizeof err) {
        out.exec_failed = true;
        out.exec_errno = err;
    }
    close(errpipe[0]);
    return out;
}

class TempDir {
public:
    TempDir() {
        const char* base = std::getenv("TMPDIR");
        std::string tmpl = std::string(base && *base ? base : "/tmp") + "/retrans-sbx-XXXXXX";
        std::vector<char> buf(tmpl.begin(), tmpl.end());
        buf.push_back('\0');
        if (!mkdtemp(buf.data())) throw std::runtime_error("mkdtemp() failed");
        path_ = buf.data();
    }
    ~TempDir() {
        // Best-effort cleanup of the two well-known entries plus the dir.
        unlink((path_ + "/prog.c").c_str());
        unlink((path_ + "/prog.bin").c_str());
        rmdir(path_.c_str());
    }
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

std::string describe_signal(int sig) {
    const char* s = strsignal(sig);
    return "signal " + std::to_string(sig) + (s ? std::string(" (") + s + ")" : "");
}

} // namespace

bool compiler_available(const SandboxConfig& cfg) {
    auto argv = build_argv(cfg, "x.c", "x.bin");
    return resolves_on_path(argv[0]);
}

ReexecResult reexecutability(const std::string& source, const SandboxConfig& cfg,
                             std::optional<int> expected_exit) {
    ReexecResult res;
    if (!compiler_available(cfg)) {
        res.env_unavailable = true;
        res.detail = "compiler not resolvable: " + split_command(cfg.compile_command)[0];
        return res;
    }

    TempDir dir;
    std::string src_path = dir.path() + "/prog.c";
    std::string bin_path = dir.path() + "/prog.bin";
    {
        std::ofstream src(src_path, std::ios::binary);
        src << source;
        if (!src) throw std::runtime_error("cannot write " + src_path);
    }

    // Compile. The compiler gets a generous fixed wall limit and no address
    // cap; the paper's limits apply to the produced program.
    auto cargv = build_argv(cfg, src_path, bin_path);
    SpawnLimits climits;
    climits.wall_sec = std::max(30.0, cfg.time_limit_sec);
    SpawnOutcome comp = spawn_limited(cargv, "", climits, true);
    bool compile_ok = !comp.exec_failed && !comp.timed_out && WIFEXITED(comp.status) &&
                      WEXITSTATUS(comp.status) == 0;
    if (!compile_ok) {
        res.score = 0;
        res.stage = ReexecStage::Compile;
        res.detail = comp.exec_failed
                         ? std::string("compiler exec failed: ") + strerror(comp.exec_errno)
                         : comp.captured.substr(0, 512);
        return res;
    }

    SpawnLimits rlimits;
    rlimits.wall_sec = cfg.time_limit_sec;
    rlimits.address_space = cfg.memory_limit_bytes;
    rlimits.limit_cpu = true;
    SpawnOutcome run = spawn_limited({bin_path}, dir.path(), rlimits, false);

    if (run.exec_failed) {
        res.score = 0;
        res.stage = run.exec_errno == ENOMEM ? ReexecStage::Memory : ReexecStage::Crash;
        res.detail = std::string("exec failed: ") + strerror(run.exec_errno);
        return res;
    }
    uint64_t maxrss_bytes = uint64_t(run.maxrss_kb) * 1024;
    if (run.timed_out ||
        (WIFSIGNALED(run.status) && WTERMSIG(run.status) == SIGXCPU)) {
        res.score = 0;
        res.stage = ReexecStage::Timeout;
        res.detail = "exceeded time limit of " + std::to_string(cfg.time_limit_sec) + "s";
        return res;
    }
    if (WIFSIGNALED(run.status)) {
        res.score = 0;
        // Deaths at or near the address-space cap are attributed to it.
        bool near_cap = maxrss_bytes >= cfg.memory_limit_bytes / 5 * 4;
        res.stage = near_cap ? ReexecStage::Memory : ReexecStage::Crash;
        res.detail = describe_signal(WTERMSIG(run.status)) +
                     ", maxrss " + std::to_string(maxrss_bytes) + " bytes";
        return res;
    }
    res.exit_code = WEXITSTATUS(run.status);
    if (expected_exit && res.exit_code != *expected_exit) {
        res.score = 0;
        res.stage = ReexecStage::Mismatch;
        res.detail = "exit code " + std::to_string(res.exit_code) + ", expected " +
                     std::to_string(*expected_exit);
        return res;
    }
    res.score = 1;
    res.stage = ReexecStage::None;
    return res;
}

} // namespace retrans
