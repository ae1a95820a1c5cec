#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "meacorr/csv_io.hpp"
#include "meacorr/scenario.hpp"

using namespace meacorr;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/meacorr_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
  void write(const std::string& text) {
    std::ofstream out(path);
    out << text;
  }
};

}  // namespace

TEST_CASE("round trip: write then read reproduces the panel") {
  ProxyPanel panel = generate_panel(studies::study1().cfg, 300, 9);
  TempFile f("roundtrip.csv");
  write_panel_csv(f.path, panel);
  ProxyPanel back = read_panel_csv(f.path);
  CHECK(back.n == panel.n);
  CHECK(back.k == panel.k);
  CHECK(back.p == panel.p);
  CHECK((back.observed == panel.observed).all());
  CHECK((back.y - panel.y).lpNorm<Eigen::Infinity>() == 0.0);
  for (int j = 0; j < panel.k; ++j)
    for (int i = 0; i < panel.n; ++i)
      if (panel.observed(i, j))
        CHECK(back.proxies[j].row(i) == panel.proxies[j].row(i));
}

TEST_CASE("one empty proxy cell becomes one masked entry") {
  TempFile f("mask.csv");
  f.write(
      "id,y,x1,x2\n"
      "1,0.5,1.0,2.0\n"
      "2,1.5,,2.5\n"
      "3,0.25,0.75,1.25\n");
  ProxyPanel panel = read_panel_csv(f.path);
  CHECK(panel.n == 3);
  CHECK(panel.k == 2);
  int masked = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) masked += !panel.observed(i, j);
  CHECK(masked == 1);
  CHECK(!panel.observed(1, 0));
}

TEST_CASE("framingham schema applies log(x - 50)") {
  TempFile f("fram.csv");
  f.write(
      "id,chd,age,smoke,chol,sbp21,sbp22,sbp31,sbp32\n"
      "1,0,45,1,210,130,128,131,127\n"
      "2,1,52,0,190,142,139,,136\n");
  ProxyPanel panel = read_panel_csv(f.path, PanelSchema::framingham());
  CHECK(panel.k == 4);
  CHECK(panel.q == 3);
  CHECK(panel.proxies[0](0, 0) == doctest::Approx(std::log(130.0 - 50.0)));
  CHECK(panel.proxies[3](1, 0) == doctest::Approx(std::log(136.0 - 50.0)));
  CHECK(!panel.observed(1, 2));
}

TEST_CASE("a row with every proxy empty is rejected") {
  TempFile f("empty.csv");
  f.write(
      "id,y,x1,x2\n"
      "1,0.5,1.0,2.0\n"
      "2,1.5,,\n");
  CHECK_THROWS_AS(read_panel_csv(f.path), DataError);
}

TEST_CASE("malformed rows report the line number") {
  TempFile f("bad.csv");
  f.write(
      "id,y,x1,x2\n"
      "1,0.5,1.0,2.0\n"
      "2,1.5,3.0\n");
  try {
    read_panel_csv(f.path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }

  TempFile g("badnum.csv");
  g.write(
      "id,y,x1,x2\n"
      "1,abc,1.0,2.0\n");
  CHECK_THROWS_AS(read_panel_csv(g.path), ParseError);
}

TEST_CASE("vector proxies use x{j}_{c} columns") {
  TempFile f("vec.csv");
  f.write(
      "id,y,x1_1,x1_2,x2_1,x2_2\n"
      "1,0.5,1,2,3,4\n"
      "2,0.25,5,6,7,8\n");
  ProxyPanel panel = read_panel_csv(f.path);
  CHECK(panel.k == 2);
  CHECK(panel.p == 2);
  CHECK(panel.proxies[1](1, 0) == 7.0);
  CHECK(panel.proxies[0](0, 1) == 2.0);
}
