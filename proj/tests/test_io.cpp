#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include "fmd/io.hpp"

using namespace fmd;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = FMD_CONFIG_DIR;

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("fmd_test_io_" + std::to_string(::getpid())) / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

struct RunResult {
  int status = -1;
  std::string out;
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(FMD_CLI_PATH) + " " + args + " 2>/dev/null";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  while (const std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) r.out.append(buf.data(), n);
  const int st = pclose(pipe);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

// Expects `fn` to throw ConfigError whose message contains every fragment.
template <class Fn>
void expect_config_error(Fn&& fn, std::initializer_list<const char*> fragments) {
  try {
    fn();
    ADD_FAILURE() << "expected ConfigError";
  } catch (const ConfigError& e) {
    for (const char* f : fragments) EXPECT_NE(std::string(e.what()).find(f), std::string::npos) << e.what();
  }
}

Json shipped(const std::string& name) { return Json::parse(slurp(kConfigs / (name + ".json"))); }

struct Ppm {
  int w = 0;
  int h = 0;
  std::string px;
  std::array<int, 3> at(int x, int y) const {
    const std::size_t i = 3 * (static_cast<std::size_t>(y) * w + x);
    return {static_cast<unsigned char>(px[i]), static_cast<unsigned char>(px[i + 1]),
            static_cast<unsigned char>(px[i + 2])};
  }
};

Ppm read_ppm(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string magic;
  int maxval = 0;
  Ppm img;
  in >> magic >> img.w >> img.h >> maxval;
  in.get();
  img.px.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  EXPECT_EQ(magic, "P6");
  EXPECT_EQ(img.px.size(), 3u * img.w * img.h);
  return img;
}

}  // namespace

TEST(Config, RoundTripIsByteIdentical) {
  const fs::path dir = scratch("roundtrip");
  for (const auto& name : example_names()) {
    const std::string original = slurp(kConfigs / (name + ".json"));
    save_config(load_config(kConfigs / (name + ".json")), dir / "a.json");
    EXPECT_EQ(slurp(dir / "a.json"), original) << name;
    save_config(load_config(dir / "a.json"), dir / "b.json");
    EXPECT_EQ(slurp(dir / "b.json"), original) << name;
  }
  // Full-precision floats survive the trip.
  ProblemConfig cfg = config_for_example(example_arc(0.1 + 0.2, 0.3, 2.9), "pdhg", 64, 1.0 / 3.0);
  save_config(cfg, dir / "c.json");
  const ProblemConfig back = load_config(dir / "c.json");
  EXPECT_EQ(back.lambda0, 1.0 / 3.0);
  EXPECT_EQ(back.sources, cfg.sources);
}

TEST(Config, ShippedNonconvexHasTwoAtoms) {
  const ProblemConfig cfg = load_config(kConfigs / "nonconvex.json");
  const SourceMeasure Q = cfg.measure();
  ASSERT_EQ(Q.components.size(), 2u);
  for (const auto& c : Q.components) EXPECT_TRUE(std::holds_alternative<Atom>(c));
  EXPECT_FALSE(Q.domain.contains({-0.9, 0.1}));
}

TEST(Config, Rejections) {
  Json j = shipped("nonconvex");
  j["lambda0"] = -1.0;
  expect_config_error([&] { config_from_json(j); }, {"lambda0", "positive"});

  j = shipped("nonconvex");
  j["sources"] = Json::array({Json{{"type", "atom"}, {"at", {-0.5, 0.5}}, {"weight", 0.75}}});
  expect_config_error([&] { config_from_json(j); }, {"sources", "0.75"});

  j = shipped("nonconvex");
  j["solver"]["speed"] = 3;
  expect_config_error([&] { config_from_json(j); }, {"speed"});

  j = shipped("nonconvex");
  j["solver"]["backend"] = "simplex";
  expect_config_error([&] { config_from_json(j); }, {"backend", "simplex"});

  j = shipped("nonconvex");
  j["sources"][0]["at"] = {3.0, 3.0};
  j["sources"][1]["at"] = {3.0, 3.5};
  expect_config_error([&] { config_from_json(j); }, {"sources[0]", "outside"});

  expect_config_error([] { parse_config("{\n  \"lambda0\": 1.0,\n  \"domain\": ]\n}"); }, {"line 3", "column 13"});
  expect_config_error([] { load_config("/nonexistent/config.json"); }, {"cannot read"});
}

TEST(Solve, BrothersPdhgValue) {
  const SolveOutcome out = solve_problem(load_config(kConfigs / "brothers.json"));
  EXPECT_NEAR(out.report.value_Q1 / 3.771236, 1.0, 0.02);
  EXPECT_TRUE(out.report.converged);
  EXPECT_EQ(out.exit_code, kExitOk);
}

TEST(Solve, NonconvexVisibilityExact) {
  const SolveOutcome out = solve_problem(load_config(kConfigs / "nonconvex.json"));
  EXPECT_NEAR(out.report.value_Q1, 1.414214, 1e-6);
  EXPECT_NEAR(out.report.value_Q1, std::sqrt(2.0), 1e-9);
  EXPECT_NEAR(out.report.trace_total, 1.0, 1e-12);
}

TEST(Solve, SegmentsCompliance) {
  const SolveOutcome out = solve_problem(load_config(kConfigs / "segments.json"));
  EXPECT_NEAR(out.report.Y / 32.0, 1.0, 0.02);
}

TEST(Solve, ReportKeysAndFieldHeaders) {
  const fs::path dir = scratch("fields");
  ProblemConfig cfg = load_config(kConfigs / "diagonals.json");
  cfg.solver.resolution = 32;
  run_solve(cfg, dir);
  const Json report = Json::parse(slurp(dir / "report.json"));
  for (const char* key : {"value_Q1", "Y", "gap", "residual_div", "trace_total", "rank_one_max_violation",
                          "flux_mismatch", "support_defect", "iterations", "backend", "resolution", "wall_time"}) {
    EXPECT_TRUE(report.contains(key)) << key;
  }
  const auto first_line = [&](const char* f) {
    std::ifstream in(dir / f);
    std::string line;
    std::getline(in, line);
    return line;
  };
  EXPECT_EQ(first_line("u.csv"), "x,y,u");
  EXPECT_EQ(first_line("p.csv"), "x,y,p1,p2");
  EXPECT_EQ(first_line("tensor.csv"), "x,y,rho,n1,n2");
  // No temporaries left behind by the atomic writes.
  for (const auto& e : fs::directory_iterator(dir)) EXPECT_EQ(e.path().string().find(".tmp"), std::string::npos);
}

TEST(Solve, ReportsAreDeterministic) {
  ProblemConfig cfg = load_config(kConfigs / "arc.json");
  cfg.solver.resolution = 48;
  for (const char* backend : {"pdhg", "flow-grid"}) {
    cfg.solver.backend = backend;
    Json a = solve_problem(cfg).report.to_json();
    Json b = solve_problem(cfg).report.to_json();
    a.erase("wall_time");
    b.erase("wall_time");
    EXPECT_EQ(canonical_json(a), canonical_json(b)) << backend;
  }
}

TEST(Verify, NonconvexVisibilityRowsPass) {
  const VerifyTable t = run_verify("nonconvex", "flow-visibility", 0, 1e-9);
  ASSERT_FALSE(t.rows.empty());
  EXPECT_EQ(t.rows[0].name, "value");
  EXPECT_TRUE(t.rows[0].pass);
  EXPECT_TRUE(t.all_pass());
}

TEST(Verify, DiagonalsCoarseValue) {
  const VerifyTable t = run_verify("diagonals", "pdhg", 64, 0.10);
  EXPECT_TRUE(t.rows[0].pass) << t.to_csv();
}

TEST(Verify, UnknownExampleListsNames) {
  try {
    run_verify("bogus", "pdhg", 32, 0.1);
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("brothers"), std::string::npos);
  }
}

TEST(Cli, ExitStatusContract) {
  const fs::path dir = scratch("cli");
  ProblemConfig cfg = load_config(kConfigs / "arc.json");
  cfg.solver.resolution = 32;
  save_config(cfg, dir / "ok.json");
  EXPECT_EQ(run_cli("solve " + (dir / "ok.json").string() + " --out " + (dir / "ok").string()).status, 0);
  EXPECT_TRUE(fs::exists(dir / "ok" / "report.json"));

  cfg.solver.max_iter = 3;
  save_config(cfg, dir / "stall.json");
  EXPECT_EQ(run_cli("solve " + (dir / "stall.json").string() + " --out " + (dir / "stall").string()).status, 2);

  spit(dir / "bad.json", "{ \"lambda0\": -1 }");
  EXPECT_EQ(run_cli("solve " + (dir / "bad.json").string() + " --out " + (dir / "bad").string()).status, 1);
  EXPECT_EQ(run_cli("solve " + (dir / "missing.json").string()).status, 1);
  EXPECT_EQ(run_cli("verify bogus").status, 1);
  EXPECT_EQ(run_cli("frobnicate").status, 1);

  const RunResult v = run_cli("verify nonconvex --backend flow-visibility --tol 1e-9");
  EXPECT_EQ(v.status, 0);
  EXPECT_TRUE(std::regex_search(v.out, std::regex("(^|\n)value,[^\n]*,pass\n"))) << v.out;
}

TEST(Plot, ZeroFluxGivesBlankDensity) {
  const fs::path dir = scratch("blank");
  std::string u = "x,y,u\n";
  std::string p = "x,y,p1,p2\n";
  std::string t = "x,y,rho,n1,n2\n";
  for (int j = 0; j < 8; ++j) {
    for (int i = 0; i < 8; ++i) {
      const std::string xy = std::to_string(i * 0.125) + ',' + std::to_string(j * 0.125) + ',';
      u += xy + "0\n";
      p += xy + "0,0\n";
      t += xy + "0,0,0\n";
    }
  }
  spit(dir / "u.csv", u);
  spit(dir / "p.csv", p);
  spit(dir / "tensor.csv", t);
  emit_plots(dir, dir);
  const Ppm img = read_ppm(dir / "density.ppm");
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) ASSERT_EQ(img.at(x, y), (std::array<int, 3>{255, 255, 255}));
  }
  EXPECT_EQ(slurp(dir / "glyphs.svg").find("<line"), std::string::npos);
}

TEST(Plot, MissingFieldsListed) {
  const fs::path dir = scratch("missing");
  spit(dir / "u.csv", "x,y,u\n0,0,0\n");
  try {
    emit_plots(dir, dir);
    FAIL() << "expected rejection";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("p.csv, tensor.csv"), std::string::npos) << e.what();
  }
}

TEST(Plot, DeterministicAndDiagonalsGlyphsVertical) {
  const fs::path dir = scratch("diag");
  ProblemConfig cfg = load_config(kConfigs / "diagonals.json");
  cfg.solver.resolution = 64;
  run_solve(cfg, dir);
  emit_plots(dir, dir / "a");
  emit_plots(dir, dir / "b");
  for (const char* f : {"u.ppm", "density.ppm", "glyphs.svg"}) EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;

  // Glyph blocks strictly inside {|x2| < |x1|}: the screen is 32 blocks over [-1, 1]^2.
  const std::string svg = slurp(dir / "a" / "glyphs.svg");
  const std::regex line(R"re(<line x1="([-0-9.]+)" y1="([-0-9.]+)" x2="([-0-9.]+)" y2="([-0-9.]+)")re");
  int inside = 0;
  int vertical = 0;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), line); it != std::sregex_iterator(); ++it) {
    const double x1 = std::stod((*it)[1]);
    const double y1 = std::stod((*it)[2]);
    const double x2 = std::stod((*it)[3]);
    const double y2 = std::stod((*it)[4]);
    const double cx = 0.5 * (x1 + x2) / (32 * 16.0) * 2.0 - 1.0;
    const double cy = 1.0 - 0.5 * (y1 + y2) / (32 * 16.0) * 2.0;
    if (std::abs(cy) > std::abs(cx) - 0.15) continue;
    ++inside;
    if (std::abs(x2 - x1) <= 0.05 * std::abs(y2 - y1)) ++vertical;
  }
  EXPECT_GT(inside, 100);
  EXPECT_EQ(vertical, inside);
}

TEST(Plot, BrothersDensityFadesInCentralSquare) {
  const fs::path dir = scratch("brothers");
  run_solve(load_config(kConfigs / "brothers.json"), dir);
  emit_plots(dir, dir);
  const Ppm img = read_ppm(dir / "density.ppm");
  // Inverse of the white-orange-dark red map: blue falls first, then red.
  const auto level = [&](int x, int y) {
    const auto c = img.at(x, y);
    return c[2] > 60 ? (255.0 - c[2]) / 390.0 : 0.5 + (253.0 - c[0]) / 338.0;
  };
  double peak = 0.0;
  double central = 0.0;
  int n = 0;
  const double c = std::sqrt(2.0) / 2.0;
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      const double v = level(x, y);
      peak = std::max(peak, v);
      const double px = -1.0 + 2.0 * (x + 0.5) / img.w;
      const double py = 1.0 - 2.0 * (y + 0.5) / img.h;
      if (std::max(std::abs(px), std::abs(py)) < c) {
        central += v;
        ++n;
      }
    }
  }
  EXPECT_LT(central / n, 0.01 * peak);
}
