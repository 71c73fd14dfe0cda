#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "saelab/metrics.hpp"
#include "saelab/report.hpp"
#include "saelab/svg.hpp"

using namespace saelab;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

MetricsReport sample_report(uint64_t seed) {
  MetricsReport r;
  r.explained_variance = 0.875 + 1e-3 * static_cast<double>(seed);
  r.cosine_sim = 0.93;
  r.mean_l0 = 12.5;
  r.mean_l1 = 3.25;
  r.mean_l1_over_sqrt_l2 = 1.75;
  r.mean_hoyer = 0.625;
  r.mmcs = 0.9912345678901234;
  r.l1_coef = 0.003f;
  r.seed = seed;
  r.layer = 2;
  r.variant = "step0";
  return r;
}

}  // namespace

TEST_CASE("jsonl append and read round-trip") {
  const auto dir = fresh_dir("saelab_test_reporting_jsonl");
  const auto path = (dir / "records.jsonl").string();

  append_jsonl(path, {{"id", 0}, {"value", 1.5}});
  append_jsonl(path, {{"id", 1}, {"value", -2.0}, {"tag", "x"}});

  const auto records = read_jsonl(path);
  REQUIRE(records.size() == 2);
  CHECK(records[0].at("id").get<int>() == 0);
  CHECK(records[0].at("value").get<double>() == 1.5);
  CHECK(records[1].at("tag").get<std::string>() == "x");
}

TEST_CASE("jsonl reader skips blank lines and reports bad line numbers") {
  const auto dir = fresh_dir("saelab_test_reporting_jsonl_bad");
  {
    std::ofstream out(dir / "mixed.jsonl", std::ios::binary);
    out << "{\"ok\": 1}\n\n   \n{\"ok\": 2}\n";
  }
  const auto records = read_jsonl((dir / "mixed.jsonl").string());
  REQUIRE(records.size() == 2);
  CHECK(records[1].at("ok").get<int>() == 2);

  {
    std::ofstream out(dir / "broken.jsonl", std::ios::binary);
    out << "{\"ok\": 1}\n{not json\n";
  }
  try {
    read_jsonl((dir / "broken.jsonl").string());
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line == 2);
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  CHECK_THROWS_AS(read_jsonl((dir / "missing.jsonl").string()), ParseError);
}

TEST_CASE("metrics round-trip through jsonl and csv") {
  const auto dir = fresh_dir("saelab_test_reporting_metrics");
  std::vector<MetricsReport> reports = {sample_report(0), sample_report(1)};
  reports[1].variant = "control";
  reports[1].mmcs.reset();
  reports[1].ce_loss_score = 0.25;
  reports[1].token_entropy = 1.125;
  reports[1].l1_coef.reset();
  reports[1].k = 16;

  const auto jsonl_path = (dir / "reports.jsonl").string();
  save_metrics_jsonl(jsonl_path, reports);
  const auto loaded = load_metrics_jsonl(jsonl_path);
  REQUIRE(loaded.size() == 2);
  for (size_t i = 0; i < 2; ++i) {
    CHECK(loaded[i].to_json() == reports[i].to_json());
  }

  const auto csv_path = (dir / "reports.csv").string();
  save_metrics_csv(csv_path, reports);
  const std::string csv = slurp(csv_path);
  CHECK(csv.rfind(metrics_csv_header() + "\n", 0) == 0);
  CHECK(csv.find("control") != std::string::npos);
  // %.17g keeps doubles exact through text.
  CHECK(csv.find("0.875") != std::string::npos);
}

TEST_CASE("manifest lists sorted hashed files and excludes itself") {
  const auto dir = fresh_dir("saelab_test_reporting_manifest");
  {
    std::ofstream(dir / "b.txt", std::ios::binary) << "beta";
    fs::create_directories(dir / "sub");
    std::ofstream(dir / "sub" / "a.txt", std::ios::binary) << "alpha";
    std::ofstream(dir / "a.txt", std::ios::binary) << "";
  }
  const auto manifest = write_manifest(dir.string());
  REQUIRE(fs::exists(dir / "manifest.json"));

  const auto& files = manifest.at("files");
  REQUIRE(files.size() == 3);
  CHECK(files[0].at("path") == "a.txt");
  CHECK(files[1].at("path") == "b.txt");
  CHECK(files[2].at("path") == "sub/a.txt");
  CHECK(files[0].at("bytes").get<size_t>() == 0);
  CHECK(files[1].at("bytes").get<size_t>() == 4);
  CHECK(files[1].at("fnv1a64").get<std::string>() == to_hex(fnv1a64(std::string("beta"))));

  // Re-running over unchanged content reproduces the manifest byte for byte,
  // and the manifest itself never shows up as an entry.
  const std::string first = slurp(dir / "manifest.json");
  const auto again = write_manifest(dir.string());
  CHECK(slurp(dir / "manifest.json") == first);
  CHECK(again == manifest);
  for (const auto& f : again.at("files"))
    CHECK(f.at("path").get<std::string>().find("manifest") == std::string::npos);
}

TEST_CASE("svg rendering is deterministic") {
  Panel panel;
  panel.title = "frontier";
  panel.x_label = "sparsity";
  panel.y_label = "explained variance";
  Series s;
  s.label = "superposed";
  s.x = {1.0, 2.0, 3.0};
  s.y = {0.9, 0.8, 0.6};
  s.y_err = {0.01, 0.02, 0.01};
  panel.series.push_back(s);

  const std::string a = render_svg(panel);
  const std::string b = render_svg(panel);
  CHECK(a == b);
  CHECK(a.rfind("<svg", 0) == 0);
  CHECK(a.find("</svg>") != std::string::npos);
  CHECK(a.find("polyline") != std::string::npos);  // connected frontier line
  CHECK(a.find("circle") != std::string::npos);
  CHECK(a.find("superposed") != std::string::npos);  // legend entry

  // A pure point cloud renders no polyline.
  panel.series[0].line = false;
  panel.series[0].y_err.clear();
  const std::string scatter = render_svg(panel);
  CHECK(scatter.find("polyline") == std::string::npos);
}

TEST_CASE("svg rejects empty input") {
  CHECK_THROWS_AS(render_svg(std::vector<Panel>{}), InvalidArgument);
  Panel empty_panel;
  empty_panel.title = "empty";
  CHECK_THROWS_AS(render_svg(empty_panel), InvalidArgument);
  Panel nan_only;
  Series s;
  s.x = {1.0};
  s.y = {std::numeric_limits<double>::quiet_NaN()};
  nan_only.series.push_back(s);
  CHECK_THROWS_AS(render_svg(nan_only), InvalidArgument);
}

TEST_CASE("svg escapes markup in labels") {
  Panel panel;
  panel.title = "a<b & c>d";
  Series s;
  s.label = "x<y";
  s.x = {0.0, 1.0};
  s.y = {0.0, 1.0};
  panel.series.push_back(s);
  const std::string svg = render_svg(panel);
  CHECK(svg.find("a&lt;b &amp; c&gt;d") != std::string::npos);
  CHECK(svg.find("x&lt;y") != std::string::npos);
  CHECK(svg.find("a<b") == std::string::npos);
}

TEST_CASE("svg log axis puts ticks at powers of ten") {
  Panel panel;
  panel.log_x = true;
  Series s;
  s.x = {0.001, 0.01, 0.1, 1.0, 10.0};
  s.y = {0.1, 0.2, 0.3, 0.4, 0.5};
  panel.series.push_back(s);
  const std::string svg = render_svg(panel);
  CHECK(svg.find(">0.001<") != std::string::npos);
  CHECK(svg.find(">0.1<") != std::string::npos);
  CHECK(svg.find(">10<") != std::string::npos);
  Series bad;
  bad.x = {0.0};
  bad.y = {1.0};
  panel.series.push_back(bad);
  CHECK_THROWS_AS(render_svg(panel), InvalidArgument);  // log axis needs x > 0
}

TEST_CASE("svg roc panel draws the chance diagonal and multi-panel grids tile") {
  Panel roc;
  roc.title = "roc";
  roc.diagonal = true;
  Series s;
  s.x = {0.0, 0.5, 1.0};
  s.y = {0.0, 0.9, 1.0};
  roc.series.push_back(s);
  const std::string one = render_svg(roc);
  CHECK(one.find("stroke-dasharray") != std::string::npos);

  const std::string grid = render_svg(std::vector<Panel>{roc, roc, roc}, 2);
  CHECK(grid.find("translate(0.00 0.00)") != std::string::npos);
  CHECK(grid.find("translate(440.00 0.00)") != std::string::npos);
  CHECK(grid.find("translate(0.00 330.00)") != std::string::npos);
  CHECK(grid.find("width=\"880.00\"") != std::string::npos);
  CHECK(grid.find("height=\"660.00\"") != std::string::npos);
}

TEST_CASE("save_svg writes the exact bytes") {
  const auto dir = fresh_dir("saelab_test_reporting_svg");
  Panel panel;
  Series s;
  s.x = {0.0, 1.0};
  s.y = {1.0, 0.0};
  panel.series.push_back(s);
  const std::string svg = render_svg(panel);
  const auto path = (dir / "plot.svg").string();
  save_svg(path, svg);
  CHECK(slurp(path) == svg);
}
