#include <doctest.h>

#include "imgforge/plan.hpp"
#include "support.hpp"

using namespace imgforge;
namespace fs = std::filesystem;

namespace {

const fs::path kPifile = "/work/example.Pifile";

// Everything under /work exists as a regular file, /dev/sd* are devices.
PathStatus fake_probe(const fs::path& p) {
  auto s = p.string();
  if (s.rfind("/dev/sd", 0) == 0) return PathStatus::BlockDevice;
  if (s.rfind("/work/", 0) == 0 && s.find("missing") == std::string::npos) {
    return PathStatus::RegularFile;
  }
  return PathStatus::Missing;
}

ExecutionPlan plan_of(const std::string& text) {
  auto pifile = parse_pifile_text(text, kPifile, {});
  return build_plan(pifile, PlanDefaults{fake_probe, std::nullopt});
}

ErrorCode plan_error(const std::string& text) {
  try {
    plan_of(text);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoFailure;
}

}  // namespace

TEST_CASE("assign_stages on the sensorbox Pifile") {
  auto p = parse_pifile(testing::data_dir() / "fixtures/sensorbox.Pifile", {});
  auto staged = assign_stages(p);
  auto kinds = [&](Stage s) {
    std::vector<CommandKind> k;
    for (const auto& c : staged[s]) k.push_back(c.kind);
    return k;
  };
  CHECK(kinds(Stage::Setup) == std::vector{CommandKind::From, CommandKind::To});
  CHECK(kinds(Stage::Prepare) == std::vector{CommandKind::Pump});
  CHECK(kinds(Stage::Chroot) ==
        std::vector{CommandKind::Run, CommandKind::Run, CommandKind::Install});
}

TEST_CASE("assign_stages edge cases") {
  auto empty = assign_stages(Pifile{});
  for (auto s : {Stage::Setup, Stage::Prepare, Stage::Chroot}) CHECK(empty[s].empty());

  auto p = parse_pifile_text("RUN x\nFROM a.img\nHOST y\nPATH /opt\n", kPifile, {});
  auto staged = assign_stages(p);
  // oracle: filter by kind, keeping order
  std::vector<Command> setup, chroot;
  for (const auto& c : p.commands) {
    if (c.kind == CommandKind::From) setup.push_back(c);
    if (c.kind == CommandKind::Run || c.kind == CommandKind::Host || c.kind == CommandKind::Path) {
      chroot.push_back(c);
    }
  }
  CHECK(staged[Stage::Setup] == setup);
  CHECK(staged[Stage::Chroot] == chroot);
  CHECK(staged[Stage::Prepare].empty());
}

TEST_CASE("default destination is named after the Pifile") {
  auto plan = plan_of("FROM base.img\n");
  CHECK(plan.destination.path == "/work/example.img");
  CHECK_FALSE(plan.inplace);
  CHECK(plan.partition_index == 2);
  CHECK(plan.source.kind == SourceKind::LocalFile);
  CHECK(plan.source.locator == "/work/base.img");
  CHECK(plan.work_dir == "/work/.imgforge/example");
}

TEST_CASE("INPLACE") {
  auto plan = plan_of("INPLACE x.img\n");
  CHECK(plan.inplace);
  CHECK(plan.source.locator == "/work/x.img");
  CHECK(plan.destination.path == "/work/x.img");

  auto dev = plan_of("INPLACE /dev/sdc\n");
  CHECK(dev.destination.is_device);
  CHECK(dev.source.kind == SourceKind::BlockDevice);
}

TEST_CASE("FROM with partition and TO") {
  auto plan = plan_of("FROM a.img 1\nTO b.img\n");
  CHECK(plan.partition_index == 1);
  CHECK(plan.destination.path == "/work/b.img");

  auto dev = plan_of("FROM a.img\nTO /dev/sdc\n");
  CHECK(dev.destination.is_device);

  auto same = plan_of("FROM a.img\nTO a.img\n");
  CHECK(same.inplace);
}

TEST_CASE("URL sources are not probed") {
  auto plan = plan_of("FROM https://example.org/raspbian.zip\n");
  CHECK(plan.source.kind == SourceKind::Url);
  CHECK(plan.source.locator == "https://example.org/raspbian.zip");
}

TEST_CASE("plan errors") {
  CHECK(plan_error("RUN true\n") == ErrorCode::MissingSource);
  CHECK(plan_error("") == ErrorCode::MissingSource);
  CHECK(plan_error("FROM a.img\nFROM b.img\n") == ErrorCode::ConflictingSource);
  CHECK(plan_error("FROM a.img\nINPLACE b.img\n") == ErrorCode::ConflictingSource);
  CHECK(plan_error("INPLACE b.img\nTO c.img\n") == ErrorCode::ConflictingSource);
  CHECK(plan_error("INPLACE http://x/y.img\n") == ErrorCode::ConflictingSource);
  CHECK(plan_error("FROM a.img 0\n") == ErrorCode::InvalidPartitionIndex);
  CHECK(plan_error("FROM a.img two\n") == ErrorCode::InvalidPartitionIndex);
  CHECK(plan_error("FROM missing.img\n") == ErrorCode::SourceNotFound);
  CHECK(plan_error("FROM a.img\nPUMP 10Q\n") == ErrorCode::MalformedSize);
}

TEST_CASE("PUMP amounts add up and PATH keeps order") {
  auto plan = plan_of("FROM a.img\nPUMP 100M\nPUMP 1k\nPATH /opt/a\nPATH /opt/b\n");
  CHECK(plan.pump_bytes == 104857600ull + 1024);
  CHECK(plan.path_extensions == std::vector<std::string>{"/opt/a", "/opt/b"});
}

TEST_CASE("last TO wins with a warning") {
  auto plan = plan_of("FROM a.img\nTO b.img\nTO c.img\n");
  CHECK(plan.destination.path == "/work/c.img");
  REQUIRE(plan.warnings.size() == 1);
  CHECK(plan.warnings[0].find("TO") != std::string::npos);
}

TEST_CASE("build_plan is idempotent") {
  auto text = "FROM a.img 1\nTO b.img\nPUMP 1M\nRUN x\nINSTALL a b\n";
  CHECK(plan_of(text) == plan_of(text));
}

TEST_CASE("validate_plan") {
  CHECK(validate_plan(plan_of("FROM a.img\n"), fake_probe) ==
        std::vector<std::string>{"no guest modifications"});
  CHECK(validate_plan(plan_of("FROM a.img\nRUN true\nINSTALL key.pub /root/k\n"), fake_probe)
            .empty());

  auto deferred = validate_plan(
      plan_of("FROM a.img\nHOST make -C src out/tool\nINSTALL missing/out/tool /usr/bin/tool\n"),
      fake_probe);
  REQUIRE(deferred.size() == 1);
  CHECK(deferred[0].find("deferred existence") != std::string::npos);

  // same commands, HOST after INSTALL: nothing can produce the file in time
  auto absent = validate_plan(
      plan_of("FROM a.img\nINSTALL missing/out/tool /usr/bin/tool\nHOST make -C src out/tool\n"),
      fake_probe);
  REQUIRE(absent.size() == 1);
  CHECK(absent[0].find("deferred") == std::string::npos);
  CHECK(absent[0].find("does not exist") != std::string::npos);

  auto pump_dev = validate_plan(plan_of("INPLACE /dev/sdc\nPUMP 1M\nRUN true\n"), fake_probe);
  REQUIRE(pump_dev.size() == 1);
  CHECK(pump_dev[0].find("PUMP") != std::string::npos);
}

TEST_CASE("stage_name") {
  CHECK(stage_name(Stage::Setup) == "setup");
  CHECK(stage_name(Stage::Prepare) == "prepare");
  CHECK(stage_name(Stage::Chroot) == "chroot");
}
