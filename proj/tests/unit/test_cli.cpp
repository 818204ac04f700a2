// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "../support.hpp"

using test_support::CliResult;
using test_support::TempDir;
using test_support::run_cli;
using test_support::slurp;
using test_support::spit;

namespace {

size_t count_lines(const std::string& text) {
    size_t n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

} // namespace

TEST_CASE("gen writes two samples per program, deterministically") {
    TempDir dir;
    std::string a = dir.file("a.jsonl"), b = dir.file("b.jsonl");
    CliResult r1 = run_cli("gen --n 5 --seed 9 --out " + a);
    REQUIRE(r1.exit_code == 0);
    CHECK(count_lines(slurp(a)) == 10);

    CliResult r2 = run_cli("gen --n 5 --seed 9 --out " + b);
    REQUIRE(r2.exit_code == 0);
    CHECK(slurp(a) == slurp(b));

    CHECK(run_cli("gen --n 0 --seed 1 --out " + dir.file("z.jsonl")).exit_code == 1);
    // A manifest lands alongside the output.
    CHECK(!slurp(a + ".manifest.json").empty());
}

TEST_CASE("ingest validates and missing files map to the data exit code") {
    TempDir dir;
    std::string c = dir.file("c.jsonl");
    REQUIRE(run_cli("gen --n 2 --seed 1 --out " + c).exit_code == 0);
    CliResult ok = run_cli("ingest --in " + c);
    CHECK(ok.exit_code == 0);
    CHECK(ok.output.find("samples: 4") != std::string::npos);

    CliResult missing = run_cli("ingest --in " + dir.file("nope.jsonl"));
    CHECK(missing.exit_code == 2);
    CHECK(missing.output.find("nope.jsonl") != std::string::npos);

    spit(c, "{broken\n");
    CHECK(run_cli("ingest --in " + c).exit_code == 2);
}

TEST_CASE("usage errors exit 1") {
    CHECK(run_cli("translate --task bogus --backbone x --in -").exit_code == 1);
    CHECK(run_cli("definitely-not-a-subcommand").exit_code == 1);
    CHECK(run_cli("eval").exit_code == 1); // missing required options
}

TEST_CASE("tokenize reports vocab, counts and filtering") {
    TempDir dir;
    std::string vocab = dir.file("vocab.json");
    CliResult r = run_cli("tokenize --vocab-out " + vocab);
    CHECK(r.exit_code == 0);
    CHECK(!slurp(vocab).empty());

    std::string text = dir.file("in.s");
    spit(text, "mov r0, 1\nret r0");
    CliResult counted = run_cli("tokenize --in " + text + " --role asm");
    CHECK(counted.exit_code == 0);
    CHECK(counted.output.find("tokens:") != std::string::npos);

    std::string corpus = dir.file("c.jsonl");
    REQUIRE(run_cli("gen --n 3 --seed 2 --out " + corpus).exit_code == 0);
    CliResult filtered = run_cli("tokenize --corpus " + corpus + " --max-context 64");
    CHECK(filtered.exit_code == 0);
    CHECK(filtered.output.find("kept:") != std::string::npos);
}

TEST_CASE("the full tiny pipeline runs end to end") {
    TempDir dir;
    std::string corpus = dir.file("c.jsonl");
    std::string model = dir.file("m.ckpt");
    std::string adapt = dir.file("a.ckpt");
    std::string text = dir.file("in.s");
    std::string report = dir.file("r.json");

    REQUIRE(run_cli("gen --n 4 --seed 3 --out " + corpus).exit_code == 0);
    std::string small = " --d-model 16 --n-layers 1 --n-heads 2 --d-ff 32 --max-context 192";
    REQUIRE(run_cli("pretrain --corpus " + corpus + " --out " + model + small +
                    " --steps 2 --batch-size 2 --accum 1 --seed 4")
                .exit_code == 0);
    REQUIRE(run_cli("finetune --strategy ma --backbone " + model + " --data " + corpus +
                    " --out " + adapt + " --steps 2 --batch-size 2 --accum 1 --seed 5")
                .exit_code == 0);

    spit(text, "mov r0, 4\nret r0");
    CliResult tr = run_cli("translate --task asm2src --in " + text + " --backbone " + model +
                           " --adaptation " + adapt + " --max-new 8");
    CHECK(tr.exit_code == 0);

    CliResult ev = run_cli("eval --data " + corpus + " --backbone " + model +
                           " --adaptation " + adapt +
                           " --metrics edit --report-json " + report);
    CHECK(ev.exit_code == 0);
    CHECK(slurp(report).find("schema_version") != std::string::npos);

    CliResult cp = run_cli("compare-ppl --corpus " + corpus + " --backbone " + model +
                           " --adaptation " + adapt);
    CHECK(cp.exit_code == 0);
    CHECK(cp.output.find("ppl_base") != std::string::npos);
}

TEST_CASE("strategy checkpoints carry the right adaptation structure") {
    TempDir dir;
    std::string corpus = dir.file("c.jsonl");
    std::string model = dir.file("m.ckpt");
    REQUIRE(run_cli("gen --n 3 --seed 6 --out " + corpus).exit_code == 0);
    std::string small = " --d-model 16 --n-layers 1 --n-heads 2 --d-ff 32 --max-context 192";
    REQUIRE(run_cli("pretrain --corpus " + corpus + " --out " + model + small +
                    " --steps 1 --batch-size 2 --accum 1")
                .exit_code == 0);

    std::string ma = dir.file("ma.ckpt"), s2s = dir.file("s2s.ckpt");
    REQUIRE(run_cli("finetune --strategy ma --backbone " + model + " --data " + corpus +
                    " --out " + ma + " --steps 1 --batch-size 2 --accum 1")
                .exit_code == 0);
    REQUIRE(run_cli("finetune --strategy s2s --backbone " + model + " --data " + corpus +
                    " --out " + s2s + " --steps 1 --batch-size 2 --accum 1")
                .exit_code == 0);
    std::string ma_bytes = slurp(ma);
    CHECK(ma_bytes.find("\"adapter.asm2src.layer0.down\"") != std::string::npos);
    CHECK(ma_bytes.find("\"adapter.src2asm.layer0.down\"") != std::string::npos);
    CHECK(ma_bytes.find("prefix.") == std::string::npos);
    std::string s2s_bytes = slurp(s2s);
    CHECK(s2s_bytes.find("\"prefix.asm2src\"") != std::string::npos);
    CHECK(s2s_bytes.find("\"prefix.src2asm\"") != std::string::npos);
    CHECK(s2s_bytes.find("adapter.") == std::string::npos);
}

TEST_CASE("mismatched backbone and adaptation checkpoints are rejected") {
    TempDir dir;
    std::string corpus = dir.file("c.jsonl");
    REQUIRE(run_cli("gen --n 2 --seed 21 --out " + corpus).exit_code == 0);

    std::string small = " --d-model 16 --n-layers 1 --n-heads 2 --d-ff 32 --max-context 192";
    std::string wide = " --d-model 32 --n-layers 1 --n-heads 2 --d-ff 32 --max-context 192";
    std::string m16 = dir.file("m16.ckpt"), m32 = dir.file("m32.ckpt");
    REQUIRE(run_cli("pretrain --corpus " + corpus + " --out " + m16 + small +
                    " --steps 1 --batch-size 2 --accum 1").exit_code == 0);
    REQUIRE(run_cli("pretrain --corpus " + corpus + " --out " + m32 + wide +
                    " --steps 1 --batch-size 2 --accum 1").exit_code == 0);

    std::string adapt = dir.file("a16.ckpt");
    REQUIRE(run_cli("finetune --strategy ma --backbone " + m16 + " --data " + corpus +
                    " --out " + adapt + " --steps 1 --batch-size 2 --accum 1")
                .exit_code == 0);

    std::string in = dir.file("in.s");
    spit(in, "ret r0");
    CliResult r = run_cli("translate --task asm2src --in " + in + " --backbone " + m32 +
                          " --adaptation " + adapt);
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("d_model") != std::string::npos);
}

TEST_CASE("translate refuses over-length inputs citing the context rule") {
    TempDir dir;
    std::string corpus = dir.file("c.jsonl");
    std::string model = dir.file("m.ckpt");
    REQUIRE(run_cli("gen --n 2 --seed 7 --out " + corpus).exit_code == 0);
    REQUIRE(run_cli("pretrain --corpus " + corpus + " --out " + model +
                    " --d-model 16 --n-layers 1 --n-heads 2 --d-ff 32 --max-context 192" +
                    " --steps 1 --batch-size 2 --accum 1")
                .exit_code == 0);

    std::string text = dir.file("long.s");
    spit(text, std::string(4000, 'x'));
    CliResult r = run_cli("translate --task asm2src --in " + text + " --backbone " + model);
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("context limit") != std::string::npos);
    CHECK(r.output.find("192") != std::string::npos);
}

TEST_CASE("eval with an unavailable compiler exits with the environment code") {
    TempDir dir;
    std::string corpus = dir.file("c.jsonl");
    std::string model = dir.file("m.ckpt");
    REQUIRE(run_cli("gen --n 2 --seed 8 --out " + corpus).exit_code == 0);
    REQUIRE(run_cli("pretrain --corpus " + corpus + " --out " + model +
                    " --d-model 16 --n-layers 1 --n-heads 2 --d-ff 32 --max-context 192" +
                    " --steps 1 --batch-size 2 --accum 1")
                .exit_code == 0);
    CliResult r = run_cli("eval --data " + corpus + " --backbone " + model +
                          " --metrics reexec --compiler " +
                          "'definitely-not-a-compiler-9z -o {out} {src}'");
    CHECK(r.exit_code == 3);
}

TEST_CASE("training config files are honored with flag precedence") {
    TempDir dir;
    std::string corpus = dir.file("c.jsonl");
    REQUIRE(run_cli("gen --n 2 --seed 11 --out " + corpus).exit_code == 0);

    std::string cfg = dir.file("train.json");
    spit(cfg, R"({"max_steps": 3, "batch_size": 2, "grad_accum_steps": 1,)"
              R"( "learning_rate": 0.001, "seed": 12})");
    std::string m1 = dir.file("m1.ckpt"), m2 = dir.file("m2.ckpt"), m3 = dir.file("m3.ckpt");
    std::string sizes = " --d-model 16 --n-layers 1 --n-heads 2 --d-ff 32 --max-context 192";

    // Config file alone, then the same settings spelled as flags: identical.
    REQUIRE(run_cli("pretrain --corpus " + corpus + " --config " + cfg + sizes +
                    " --out " + m1).exit_code == 0);
    REQUIRE(run_cli("pretrain --corpus " + corpus + sizes +
                    " --steps 3 --batch-size 2 --accum 1 --lr 0.001 --seed 12 --out " + m2)
                .exit_code == 0);
    CHECK(slurp(m1) == slurp(m2));

    // A flag overrides the config file value.
    REQUIRE(run_cli("pretrain --corpus " + corpus + " --config " + cfg + sizes +
                    " --steps 0 --out " + m3).exit_code == 0);
    CHECK(slurp(m3) != slurp(m1));
}

TEST_CASE("save-every writes intermediate checkpoints") {
    TempDir dir;
    std::string corpus = dir.file("c.jsonl");
    REQUIRE(run_cli("gen --n 2 --seed 13 --out " + corpus).exit_code == 0);
    std::string model = dir.file("m.ckpt");
    REQUIRE(run_cli("pretrain --corpus " + corpus + " --out " + model +
                    " --d-model 16 --n-layers 1 --n-heads 2 --d-ff 32 --max-context 192"
                    " --steps 4 --batch-size 2 --accum 1 --save-every 2")
                .exit_code == 0);
    CHECK(!slurp(model + ".step2").empty());
    CHECK(!slurp(model + ".step4").empty());
}

TEST_CASE("pretrain with zero steps still writes a loadable checkpoint") {
    TempDir dir;
    std::string corpus = dir.file("c.jsonl");
    REQUIRE(run_cli("gen --n 2 --seed 9 --out " + corpus).exit_code == 0);
    std::string m1 = dir.file("m1.ckpt"), m2 = dir.file("m2.ckpt");
    std::string args = "pretrain --corpus " + corpus +
                       " --d-model 16 --n-layers 1 --n-heads 2 --d-ff 32 --max-context 192"
                       " --steps 0 --seed 10 --out ";
    REQUIRE(run_cli(args + m1).exit_code == 0);
    REQUIRE(run_cli(args + m2).exit_code == 0);
    CHECK(slurp(m1) == slurp(m2)); // initialization is seed-deterministic
}
