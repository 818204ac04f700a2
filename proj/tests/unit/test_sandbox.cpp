// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "retrans/sandbox.hpp"

using namespace retrans;

namespace {

bool have_gcc() { return compiler_available(SandboxConfig{}); }

SandboxConfig fast_sandbox() {
    SandboxConfig cfg;
    cfg.time_limit_sec = 2.0;
    return cfg;
}

} // namespace

TEST_CASE("template validation requires both placeholders") {
    SandboxConfig bad;
    bad.compile_command = "gcc -O2 -o out.bin";
    CHECK_THROWS(compiler_available(bad));
    SandboxConfig missing;
    missing.compile_command = "definitely-not-a-compiler-9z -o {out} {src}";
    CHECK(!compiler_available(missing));
}

TEST_CASE("a missing compiler is reported as environment-unavailable, not zero") {
    SandboxConfig cfg = fast_sandbox();
    cfg.compile_command = "definitely-not-a-compiler-9z -o {out} {src}";
    ReexecResult r = reexecutability("int main(){return 0;}", cfg);
    CHECK(r.env_unavailable);
    CHECK(r.score == 0);
    CHECK(r.stage == ReexecStage::None);
}

TEST_CASE("known-good source scores one") {
    if (!have_gcc()) { MESSAGE("gcc unavailable; skipping"); return; }
    ReexecResult r = reexecutability("int main(){return 0;}", fast_sandbox());
    CHECK(r.score == 1);
    CHECK(r.stage == ReexecStage::None);
    CHECK(r.exit_code == 0);
}

TEST_CASE("syntax errors fail at the compile stage") {
    if (!have_gcc()) { MESSAGE("gcc unavailable; skipping"); return; }
    ReexecResult r = reexecutability("int main({", fast_sandbox());
    CHECK(r.score == 0);
    CHECK(r.stage == ReexecStage::Compile);
}

TEST_CASE("infinite loops are cut off at the time limit") {
    if (!have_gcc()) { MESSAGE("gcc unavailable; skipping"); return; }
    SandboxConfig cfg;
    cfg.time_limit_sec = 1.0;
    ReexecResult r = reexecutability("int main(){for(;;);}", cfg);
    CHECK(r.score == 0);
    CHECK(r.stage == ReexecStage::Timeout);
}

TEST_CASE("allocation beyond the address-space limit is tagged memory") {
    if (!have_gcc()) { MESSAGE("gcc unavailable; skipping"); return; }
    SandboxConfig cfg = fast_sandbox();
    cfg.memory_limit_bytes = 64ull * 1024 * 1024;
    const char* hog =
        "#include <stdlib.h>\n#include <string.h>\n"
        "int main(){for(;;){char*p=malloc(1<<20);if(!p)abort();memset(p,1,1<<20);}}";
    ReexecResult r = reexecutability(hog, cfg);
    CHECK(r.score == 0);
    CHECK(r.stage == ReexecStage::Memory);
}

TEST_CASE("crashes are tagged crash") {
    if (!have_gcc()) { MESSAGE("gcc unavailable; skipping"); return; }
    ReexecResult r = reexecutability(
        "int main(){volatile int*p=0;return *p;}", fast_sandbox());
    CHECK(r.score == 0);
    CHECK(r.stage == ReexecStage::Crash);
}

TEST_CASE("exit codes only matter when an expectation is given") {
    if (!have_gcc()) { MESSAGE("gcc unavailable; skipping"); return; }
    // Non-zero exit without an expectation still runs successfully.
    ReexecResult free_run = reexecutability("int main(){return 7;}", fast_sandbox());
    CHECK(free_run.score == 1);
    CHECK(free_run.exit_code == 7);

    ReexecResult match = reexecutability("int main(){return 7;}", fast_sandbox(), 7);
    CHECK(match.score == 1);

    ReexecResult mismatch = reexecutability("int main(){return 7;}", fast_sandbox(), 8);
    CHECK(mismatch.score == 0);
    CHECK(mismatch.stage == ReexecStage::Mismatch);
}

TEST_CASE("success is monotone in the resource limits") {
    if (!have_gcc()) { MESSAGE("gcc unavailable; skipping"); return; }
    const char* prog = "int main(){int s=0;for(int i=0;i<1000;i++)s+=i;return s%7;}";
    SandboxConfig tight;
    tight.time_limit_sec = 1.0;
    tight.memory_limit_bytes = 64ull * 1024 * 1024;
    SandboxConfig loose;
    loose.time_limit_sec = 5.0;
    loose.memory_limit_bytes = 256ull * 1024 * 1024;
    ReexecResult a = reexecutability(prog, tight);
    REQUIRE(a.score == 1);
    ReexecResult b = reexecutability(prog, loose);
    CHECK(b.score == 1);
}
