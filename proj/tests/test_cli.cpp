#include "fixtures.hpp"

#include "testing.hpp"

#include <cstdlib>
#include <fstream>
#include <string>
#include <sys/wait.h>

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(CASCADE_MATCH_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("exit codes") {
    const auto dir = cascade_match::fixture::scratch("cli");
    const std::string d = dir.string();
    CHECK(run("") == 2);
    CHECK(run("frobnicate") == 2);
    CHECK(run("gen-data --out " + d + "/c --pairs 4 --width 64 --height 64") == 0);
    CHECK(std::filesystem::exists(dir / "c" / "pair_00003.json"));
    CHECK(run("gen-data --out " + d + "/c --pairs 4 --mode sideways") == 2);
    CHECK(run("gen-data --out " + d + "/c --image-dir " + d + "/nowhere") == 2);
    CHECK(run("eval-homography --corpus " + d + "/c --inject-gt --split all --out " + d + "/r.json") == 0);
    CHECK(std::filesystem::exists(dir / "r.json"));
    CHECK(run("eval-homography --corpus " + d + "/c --inject-gt --detector nms --nms-kernel 4") == 2);
    CHECK(run("eval-homography --corpus " + d + "/c --inject-gt --detector harris") == 2);
    CHECK(run("eval-homography --corpus " + d + "/missing --inject-gt") == 2);
    CHECK(run("eval-homography --config " + d + "/nope.json") == 2);
    {
        std::ofstream(dir / "bad.json") << R"({"data": {"pairs": 3}, "colour": "blue"})";
    }
    CHECK(run("gen-data --config " + d + "/bad.json") == 2);
    {
        std::ofstream(dir / "ok.json") << R"({"seed": 3, "data": {"pairs": 2, "width": 64, "height": 64}})";
    }
    CHECK(run("gen-data --config " + d + "/ok.json --out " + d + "/c2") == 0);
    CHECK(std::filesystem::exists(dir / "c2" / "pair_00001.json"));
    CHECK(!std::filesystem::exists(dir / "c2" / "pair_00002.json"));
    CHECK(run("grad-check --op focal") == 0);
    CHECK(run("grad-check --op nonsense") == 2);
    // a checkpoint directory whose weights are unreadable is a runtime failure
    std::filesystem::create_directories(dir / "ck");
    {
        std::ofstream(dir / "ck" / "manifest.json") << R"({"format": "cascade_match.checkpoint", "version": 1})";
        std::ofstream(dir / "ck" / "weights.bin") << "junk";
    }
    const int rc = run("match --checkpoint " + d + "/ck --pair-dir " + d + "/c --pair pair_00000");
    CHECK((rc == 2 || rc == 3));
    std::filesystem::remove_all(dir);
}
