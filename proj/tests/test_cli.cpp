#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "cpfc/cli.hpp"
#include "cpfc/io.hpp"
#include "fleets.hpp"

using namespace cpfc;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

struct Workspace {
  fs::path dir;
  std::string ders;
  std::string cp;

  Workspace() {
    dir = fs::temp_directory_path() / "cpfc_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    ders = (dir / "ders.csv").string();
    save_der_csv(fleets::small(), ders);
    cp = (dir / "cp.json").string();
  }
  std::string path(const char* name) const { return (dir / name).string(); }
};

Workspace& ws() {
  static Workspace w;
  return w;
}

const std::string& tuned_cp() {
  static const std::string cp = [] {
    const auto r = cli({"tune", "--ders", ws().ders, "--out", ws().cp, "--no-timestamp", "-q"});
    REQUIRE(r.code == 0);
    return ws().cp;
  }();
  return cp;
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(cli({}).code == kExitInvalid);
  CHECK(cli({"frobnicate"}).code == kExitInvalid);
  CHECK(cli({"tune", "--out", "x.json"}).code == kExitInvalid);
  CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("overrides are validated before any work") {
  const auto r = cli({"tune", "--ders", ws().ders, "--out", ws().path("never.json"), "--fine", "0.05"});
  CHECK(r.code == kExitInvalid);
  CHECK_FALSE(fs::exists(ws().path("never.json")));
}

TEST_CASE("malformed inputs name file, line and field") {
  const auto bad = ws().path("bad.csv");
  write_text_file(bad, "name,kind,p_inst_w,t_delay_s,t_rise_s\nA,WT,1e6,0.01,fast\n");
  const auto r = cli({"margins", "--ders", bad, "--mask", "1", "--kp", "1e-7", "--ki", "1e-7"});
  CHECK(r.code == kExitInvalid);
  CHECK(r.err.find("bad.csv:2") != std::string::npos);
  CHECK(r.err.find("t_rise_s") != std::string::npos);
}

TEST_CASE("tune is idempotent") {
  const std::string first = read_text_file(tuned_cp());
  const auto again = ws().path("cp2.json");
  REQUIRE(cli({"tune", "--ders", ws().ders, "--out", again, "--no-timestamp", "-q", "--threads", "2"}).code == 0);
  CHECK(read_text_file(again) == first);
  CHECK(first.find("\"created\"") == std::string::npos);
  REQUIRE(cli({"tune", "--ders", ws().ders, "--out", again, "-q"}).code == 0);
  CHECK(read_text_file(again).find("\"created\"") != std::string::npos);
}

TEST_CASE("impossible thresholds exit with 2") {
  const auto r = cli({"tune", "--ders", ws().ders, "--out", ws().path("none.json"), "--disk", "2.5", "-q"});
  CHECK(r.code == kExitInfeasible);
}

TEST_CASE("analyze writes both sweeps") {
  const auto st = ws().path("static.json");
  REQUIRE(cli({"tune-static", "--ders", ws().ders, "--out", st, "--no-timestamp", "-q"}).code == 0);
  const auto out = ws().path("analysis");
  const auto r = cli({"analyze", "--ders", ws().ders, "--cp", tuned_cp(), "--static", st, "--out-dir", out});
  CHECK(r.code == 0);
  CHECK(fs::exists(fs::path(out) / "sweep_adaptive.csv"));
  CHECK(fs::exists(fs::path(out) / "sweep_static.csv"));
  CHECK(r.out.find("adaptive: masks 7, unstable 0") != std::string::npos);
}

TEST_CASE("a table for another DER set is rejected") {
  const auto other = ws().path("other.csv");
  write_text_file(other, "name,kind,p_inst_w,t_delay_s,t_rise_s\nA,WT,1e6,0.01,0.5\nB,PV,1e5,0.01,0.1\nC,PV,1e5,0.01,0.2\n");
  const auto r = cli({"analyze", "--ders", other, "--cp", tuned_cp(), "--out-dir", ws().path("x")});
  CHECK(r.code == kExitInvalid);
  CHECK(r.err.find("different DER set") != std::string::npos);
}

TEST_CASE("margins and simulate") {
  const auto m = cli({"margins", "--ders", ws().ders, "--mask", "7", "--kp", "1e-8", "--ki", "1e-7"});
  CHECK(m.code == 0);
  CHECK(m.out.find("disk_margin ") != std::string::npos);
  CHECK(m.out.find("overshoot_pct ") != std::string::npos);
  CHECK(cli({"margins", "--ders", ws().ders, "--mask", "8", "--kp", "1e-8", "--ki", "1e-7"}).code == kExitInvalid);

  const auto sc = ws().path("scenario.json");
  write_text_file(sc, R"({"duration_s": 30, "ref_steps": [[1, 5e5]], "avail_events": [[0, 7], [15, 3]]})");
  const auto trace = ws().path("trace.csv");
  const auto r = cli({"simulate", "--ders", ws().ders, "--cp", tuned_cp(), "--scenario", sc, "--out", trace});
  CHECK(r.code == 0);
  CHECK(read_text_file(trace).rfind("t,p_ref,", 0) == 0);

  write_text_file(sc, R"({"duration_s": "long"})");
  const auto bad = cli({"simulate", "--ders", ws().ders, "--cp", tuned_cp(), "--scenario", sc, "--out", trace});
  CHECK(bad.code == kExitInvalid);
  CHECK(bad.err.find("duration_s") != std::string::npos);
}

TEST_CASE("uncertainty writes grid and summary") {
  const auto out = ws().path("unc.csv");
  const auto r = cli({"uncertainty", "--ders", ws().ders, "--cp", tuned_cp(), "--model", "pt2", "--out", out});
  CHECK(r.code == 0);
  const auto text = read_text_file(out);
  CHECK(text.rfind("b,stable,", 0) == 0);
  CHECK(text.find("\npt2,") != std::string::npos);
  CHECK(cli({"uncertainty", "--ders", ws().ders, "--cp", tuned_cp(), "--model", "pt3", "--out", out}).code ==
        kExitInvalid);
}
