#include <doctest.h>

#include <set>

#include "imgforge/action.hpp"
#include "imgforge/image.hpp"

using namespace imgforge;

TEST_CASE("escape and unescape") {
  CHECK(escape_value("a\tb\nc\\d\re") == "a\\tb\\nc\\\\d\\re");
  for (std::string v : {"", "plain", "tab\there", "\n\n", "\\", "\\t literally", "end\\"}) {
    CAPTURE(v);
    CHECK(unescape_value(escape_value(v)) == v);
    CHECK(escape_value(v).find_first_of("\t\n\r") == std::string::npos);
  }
}

TEST_CASE("every kind has a distinct name that parses back") {
  std::set<std::string_view> names;
  for (auto kind : kAllActionKinds) {
    auto name = action_kind_name(kind);
    CHECK(parse_action_kind(name) == kind);
    CHECK(names.insert(name).second);
    CHECK(name != "failed");
  }
  CHECK(names.size() == 16);
  CHECK_FALSE(parse_action_kind("failed"));
  CHECK_FALSE(parse_action_kind("Copy"));
}

TEST_CASE("format and parse round trip") {
  auto a = actions::guest_exec("/w/root", "/opt/bin:/usr/bin", "tee /etc/x",
                               std::string("line one\n\tline two\n"));
  a.ordinal = 7;
  auto line = format_action(a);
  CHECK(line.find('\n') == std::string::npos);
  CHECK(line.rfind("7\tguest-exec\t", 0) == 0);
  auto records = parse_action_log(line + "\n" + format_failure(8, 7, 1) + "\n");
  REQUIRE(records.size() == 2);
  CHECK(to_action(records[0]) == a);
  CHECK(records[1].kind == "failed");
  CHECK(records[1].fields == Fields{{"of", "7"}, {"status", "1"}});
  CHECK_FALSE(to_action(records[1]));
}

TEST_CASE("constructors") {
  PartitionEntry e{2, false, 0x83, 532480, 3620864};
  auto t = actions::table_write("/w/a.img", e);
  CHECK(t.at("partition") == "2");
  CHECK(t.at("lba_start") == "532480");
  CHECK(t.at("lba_size") == "3620864");
  auto r = actions::fs_resize("/w/a.img", e);
  CHECK(r.at("offset") == "272629760");
  CHECK(r.at("size") == "1853882368");
  CHECK(actions::copy_in("a", "/r/b", 0600u).at("mode") == "600");
  CHECK(actions::copy_in("a", "/r/b", 04755u).at("mode") == "4755");
  CHECK_FALSE(actions::copy_in("a", "/r/b", std::nullopt).find("mode"));
  CHECK_FALSE(actions::host_exec("/w", "make", std::nullopt).find("stdin"));
  CHECK_THROWS_AS(actions::grow("/w/a.img", 5).at("nope"), std::out_of_range);
}

TEST_CASE("malformed log lines") {
  CHECK_THROWS_AS(parse_action_log("x\tcopy\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_action_log("1\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_action_log("1\tteleport\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_action_log("1\tcopy\tsrc\n"), std::invalid_argument);
  CHECK(parse_action_log("").empty());
  CHECK(parse_action_log("\n\n").empty());
}
