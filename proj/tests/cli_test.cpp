#include <doctest.h>

#include <sstream>

#include "imgforge/cli.hpp"
#include "imgforge/dry_run_executor.hpp"
#include "oracle/mbr_oracle.hpp"
#include "support.hpp"

using namespace imgforge;
using testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run cli(std::vector<std::string> args, std::map<std::string, std::string> env = {},
        CliHooks hooks = {}) {
  std::ostringstream out, err;
  hooks.out = &out;
  hooks.err = &err;
  if (!env.count("PATH")) env["PATH"] = "/usr/bin:/bin";
  Run r;
  r.code = run_cli(args, env, hooks);
  r.out = out.str();
  r.err = err.str();
  return r;
}

struct Project {
  TempDir dir;
  Project() {
    oracle::write_image(dir / "base.img", oracle::kImageBytes, oracle::kDiskId,
                        oracle::two_partitions());
    testing::write_file(dir / "key.pub", "ssh-ed25519 AAAA\n");
    testing::write_file(dir / "box.Pifile",
                        "FROM base.img\nPUMP 16M\nRUN echo hi\nINSTALL 600 key.pub /root/k\n");
  }
  std::string path(const char* name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("missing Pifile exits 1 and names the file") {
  TempDir dir;
  auto r = cli({(dir / "nope.Pifile").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("nope.Pifile") != std::string::npos);
}

TEST_CASE("usage errors exit 1, help exits 0") {
  CHECK(cli({}).code == 1);
  CHECK(cli({"a.Pifile", "--bogus"}).code == 1);
  auto help = cli({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("--dry-run") != std::string::npos);
  auto bad_env = cli({"a.Pifile", "--env", "NOEQUALS"});
  CHECK(bad_env.code == 1);
  CHECK(bad_env.err.find("NAME=VALUE") != std::string::npos);
}

TEST_CASE("dry run writes only the log") {
  Project p;
  auto before = testing::tree(p.dir.path());
  auto hash = oracle::whole_file_hash(p.dir / "base.img");
  auto log = p.dir / "plan.log";
  auto r = cli({"--dry-run", log.string(), "--emulator", "/usr/bin/qemu-arm-static",
                p.path("box.Pifile")});
  CHECK(r.code == 0);
  CHECK(r.err.empty());
  auto after = testing::tree(p.dir.path());
  CHECK(after == before + "plan.log " + std::to_string(fs::file_size(log)) + "\n");
  CHECK(oracle::whole_file_hash(p.dir / "base.img") == hash);

  auto records = parse_action_log(testing::read_file(log));
  REQUIRE(records.size() > 5);
  CHECK(records[0].kind == "copy");
  CHECK(records.back().kind == "loop-detach");
  CHECK(r.out.find("[setup] box.Pifile:1 FROM base.img") != std::string::npos);
  CHECK(r.out.find("[chroot] box.Pifile:3 RUN echo hi") != std::string::npos);
  CHECK(r.out.find("image ") == std::string::npos);
}

TEST_CASE("verbosity") {
  Project p;
  auto log = (p.dir / "plan.log").string();
  auto quiet = cli({"-q", "--dry-run", log, p.path("box.Pifile")});
  CHECK(quiet.code == 0);
  CHECK(quiet.out.empty());
  auto verbose = cli({"-v", "--dry-run", log, p.path("box.Pifile")});
  CHECK(verbose.out.find("[chroot] teardown") != std::string::npos);
  CHECK(verbose.out.find("guest commands: 1") != std::string::npos);
  CHECK(verbose.out.find("took") != std::string::npos);
}

TEST_CASE("variables from the environment and --env") {
  Project p;
  testing::write_file(p.dir / "vars.Pifile", "FROM $BASE\nRUN echo $WHO\n");
  auto log = p.dir / "plan.log";
  auto r = cli({"--dry-run", log.string(), "--env", "WHO=override", p.path("vars.Pifile")},
               {{"BASE", "base.img"}, {"WHO", "env"}});
  REQUIRE(r.code == 0);
  auto text = testing::read_file(log);
  CHECK(text.find("command=echo override") != std::string::npos);
}

TEST_CASE("exit codes by error class") {
  Project p;
  auto log = (p.dir / "plan.log").string();

  testing::write_file(p.dir / "static.Pifile", "FROM base.img\nFLY away\n");
  auto st = cli({"--dry-run", log, p.path("static.Pifile")});
  CHECK(st.code == 1);
  CHECK(st.err.find("static.Pifile:2") != std::string::npos);

  testing::write_file(p.dir / "nosrc.Pifile", "RUN true\n");
  CHECK(cli({"--dry-run", log, p.path("nosrc.Pifile")}).code == 1);

  testing::write_file(p.dir / "pump.Pifile", "FROM base.img 1\nPUMP 1M\n");
  auto dyn = cli({"--dry-run", log, p.path("pump.Pifile")});
  CHECK(dyn.code == 2);
  CHECK(dyn.err.find("pump.Pifile:2") != std::string::npos);

  testing::write_file(p.dir / "url.Pifile", "FROM https://example.invalid/x.img\n");
  auto env = cli({"--dry-run", log, "--offline", "--cache", p.path("cache"), p.path("url.Pifile")});
  CHECK(env.code == 3);
}

TEST_CASE("a failing command gives exit 2 and a complete log") {
  Project p;
  auto log = p.dir / "plan.log";
  CliHooks hooks;
  hooks.make_executor = [](const CliConfig&) {
    auto dry = std::make_unique<DryRunExecutor>();
    dry->fail_when([](const Action& a) -> std::optional<int> {
      if (a.kind == ActionKind::GuestExec) return 42;
      return std::nullopt;
    });
    return dry;
  };
  auto r = cli({"--dry-run", log.string(), p.path("box.Pifile")}, {}, hooks);
  CHECK(r.code == 2);
  CHECK(r.out.find("[chroot] box.Pifile:3 failed (exit status 42):") != std::string::npos);
  CHECK(r.err.find("box.Pifile:3") != std::string::npos);
  auto records = parse_action_log(testing::read_file(log));
  CHECK(records.back().kind == "loop-detach");
}

TEST_CASE("block device destinations need confirmation") {
  Project p;
  if (!fs::exists("/dev/loop0")) return;
  testing::write_file(p.dir / "dev.Pifile", "FROM base.img\nTO /dev/loop0\n");
  auto r = cli({p.path("dev.Pifile")});
  CHECK(r.code == 1);
  CHECK(r.err.find("--inplace-device") != std::string::npos);
}

TEST_CASE("render_log") {
  PipelineEvent e;
  e.type = PipelineEvent::Type::Command;
  e.stage = Stage::Chroot;
  e.origin = SourceLine{"/w/box.Pifile", 8, "RUN x"};
  e.message = "RUN x";
  CHECK(render_log(e) == "[chroot] box.Pifile:8 RUN x");
  e.type = PipelineEvent::Type::Failure;
  e.status = 100;
  e.message = "boom";
  CHECK(render_log(e) == "[chroot] box.Pifile:8 failed (exit status 100): boom");
  e.type = PipelineEvent::Type::Warning;
  e.status.reset();
  e.origin.reset();
  e.stage = Stage::Setup;
  CHECK(render_log(e) == "[setup] warning: boom");
  e.type = PipelineEvent::Type::Output;
  CHECK(render_log(e) == "    boom");
}
