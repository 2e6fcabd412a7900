#include "gsopt/config.hpp"

#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

using namespace gsopt;

TEST_SUITE("config") {

TEST_CASE("every registry key has a typed default that parses") {
    const auto& reg = Config::registry();
    CHECK(reg.size() >= 50);
    std::set<std::string> seen;
    const Config cfg = Config::defaults();
    for (const ConfigEntry& e : reg) {
        CHECK(seen.insert(e.key).second);  // no duplicate keys
        CHECK(!e.help.empty());
        switch (e.type) {
        case ConfigType::Int:
            CHECK_NOTHROW(cfg.get_int(e.key));
            break;
        case ConfigType::Double:
            CHECK_NOTHROW(cfg.get_double(e.key));
            break;
        case ConfigType::Bool:
            CHECK_NOTHROW(cfg.get_bool(e.key));
            break;
        case ConfigType::String:
            CHECK_NOTHROW(cfg.get_string(e.key));
            break;
        }
    }
}

TEST_CASE("defaults carry the documented schedule") {
    const Config cfg = Config::defaults();
    CHECK(cfg.get_int("stage2.steps") == 3000);
    CHECK(cfg.get_int("stage3.steps") == 5000);
    CHECK(cfg.get_int("stage2.densify_from") == 300);
    CHECK(cfg.get_int("stage2.densify_until") == 1500);
    CHECK(cfg.get_int("stage2.densify_every") == 100);
    CHECK(cfg.get_int("stage2.sugar_from") == 1500);
    CHECK(cfg.get_double("stage2.prune_opacity") == 0.05);
    CHECK(cfg.get_double("guidance.t_lo") == 0.02);
    CHECK(cfg.get_double("guidance.t_hi") == 0.98);
    CHECK(cfg.get_bool("parallel") == true);
    CHECK(cfg.get_string("guidance.provider") == "echo");
}

TEST_CASE("unknown keys are rejected with a nearby suggestion") {
    Config cfg = Config::defaults();
    CHECK_THROWS_AS(cfg.set("stage2.stepz", "10"), ContractError);
    try {
        cfg.set("stage2.stepz", "10");
    } catch (const ContractError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("stage2.steps") != std::string::npos);
    }
    CHECK(Config::suggest("guidance.scal") == "guidance.scale");
    CHECK(Config::suggest("rnder.width") == "render.width");
}

TEST_CASE("values are type checked when set and when read") {
    Config cfg = Config::defaults();
    CHECK_THROWS_AS(cfg.set("stage2.steps", "soon"), ContractError);
    CHECK_THROWS_AS(cfg.set("stage2.steps", "3.5"), ContractError);
    CHECK_THROWS_AS(cfg.set("opt.lr_color", "fast"), ContractError);
    CHECK_THROWS_AS(cfg.set("parallel", "maybe"), ContractError);
    CHECK_NOTHROW(cfg.set("stage2.steps", "42"));
    CHECK(cfg.get_int("stage2.steps") == 42);
    // An int is a valid double literal.
    CHECK_NOTHROW(cfg.set("opt.lr_color", "1"));
    CHECK(cfg.get_double("opt.lr_color") == 1.0);
    // Reading a key through the wrong type raises.
    CHECK_THROWS_AS(cfg.get_double("guidance.provider"), ContractError);
    CHECK_THROWS_AS(cfg.get_int("opt.lr_color"), ContractError);
}

TEST_CASE("bool parsing accepts true/false and 0/1 only") {
    Config cfg = Config::defaults();
    for (const char* yes : {"true", "1"}) {
        cfg.set("parallel", yes);
        CHECK(cfg.get_bool("parallel") == true);
    }
    for (const char* no : {"false", "0"}) {
        cfg.set("parallel", no);
        CHECK(cfg.get_bool("parallel") == false);
    }
    CHECK_THROWS_AS(cfg.set("parallel", "yes"), ContractError);
    CHECK_THROWS_AS(cfg.set("parallel", "on"), ContractError);
}

TEST_CASE("apply_line parses key = value with comments") {
    Config cfg = Config::defaults();
    cfg.apply_line("stage2.steps = 77");
    CHECK(cfg.get_int("stage2.steps") == 77);
    cfg.apply_line("  render.width=48  # inline comment");
    CHECK(cfg.get_int("render.width") == 48);
    CHECK_THROWS_AS(cfg.apply_line("no equals sign here", "test"), ContractError);
    CHECK_THROWS_AS(cfg.apply_line("= 3", "test"), ContractError);
}

TEST_CASE("from_file overlays the defaults") {
    const std::string path = "config_test.cfg";
    {
        std::ofstream out(path);
        out << "# comment line\n";
        out << "\n";
        out << "stage2.steps = 123\n";
        out << "guidance.provider = pull   # trailing comment\n";
        out << "opt.lr_color = 3e-3\n";
    }
    const Config cfg = Config::from_file(path);
    std::remove(path.c_str());
    CHECK(cfg.get_int("stage2.steps") == 123);
    CHECK(cfg.get_string("guidance.provider") == "pull");
    CHECK(cfg.get_double("opt.lr_color") == 3e-3);
    // Untouched keys keep their defaults.
    CHECK(cfg.get_int("stage3.steps") == 5000);

    CHECK_THROWS_AS(Config::from_file("no_such_config_file.cfg"), IoError);
}

TEST_CASE("to_string lists every key once") {
    const Config cfg = Config::defaults();
    const std::string listing = cfg.to_string();
    std::istringstream in(listing);
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            CHECK(line.find(" = ") != std::string::npos);
            ++lines;
        }
    }
    CHECK(lines == Config::registry().size());
}

} // TEST_SUITE
