#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "qalopt/csv_io.hpp"
#include "qalopt/simgen.hpp"

using namespace qalopt;

namespace {

std::pair<std::string, std::string> to_strings(const Panel& panel) {
  std::ostringstream p, s;
  write_panel_csv(panel, p, s);
  return {p.str(), s.str()};
}

}  // namespace

TEST_CASE("panel CSV round trip is byte-exact") {
  const SimConfig cfg = SimConfig::landmark_design(1, 6, 60, 19);
  const Panel panel = generate_panel(cfg, 19);
  auto [pcsv, scsv] = to_strings(panel);

  std::istringstream pin(pcsv), sin(scsv);
  const Panel back = read_panel_csv(pin, sin);
  auto [pcsv2, scsv2] = to_strings(back);
  CHECK(pcsv == pcsv2);
  CHECK(scsv == scsv2);

  SECTION("landmark grid is reconstructed") {
    CHECK(back.landmarks.K == panel.landmarks.K);
    CHECK(back.landmarks.times == panel.landmarks.times);
    CHECK(back.covariate_names == panel.covariate_names);
    CHECK(back.n() == panel.n());
  }
  SECTION("trajectories survive the round trip") {
    for (std::size_t i = 0; i < panel.n(); ++i) {
      const auto& a = panel.subjects[i];
      const auto& b = back.subjects[i];
      CHECK(a.id == b.id);
      CHECK(a.z == b.z);
      CHECK(a.a == b.a);
      CHECK(a.q == b.q);
      CHECK(a.event_time == b.event_time);
      CHECK(a.censor_time == b.censor_time);
      CHECK(a.event_observed == b.event_observed);
    }
  }
}

TEST_CASE("CSV layout") {
  Panel panel;
  panel.landmarks.K = 1;
  panel.landmarks.gap = 10.0;
  panel.landmarks.times = {0.0, 10.0};
  panel.landmarks.tau = 10.0;
  panel.covariate_names = {"z1", "z2"};
  SubjectTrajectory s;
  s.id = "a";
  s.z = {{0.25, 0.5}};
  s.a = {0};
  s.q = {1.0};
  s.event_time = 4.0;
  s.event_observed = true;
  panel.subjects.push_back(s);

  auto [pcsv, scsv] = to_strings(panel);
  CHECK(pcsv ==
        "subject_id,j,landmark_time,z1,z2,a,y,q\n"
        "a,0,0,0.25,0.5,0,1,1\n"
        "a,1,1e+01,,,,0,\n");
  CHECK(scsv ==
        "subject_id,event_time,censor_time,event_observed\n"
        "a,4,inf,1\n");

  SECTION("comma in a subject id is rejected") {
    panel.subjects[0].id = "a,b";
    std::ostringstream p, q;
    CHECK_THROWS_AS(write_panel_csv(panel, p, q), CsvError);
  }
}

TEST_CASE("malformed input is reported with context") {
  const std::string good_panel =
      "subject_id,j,landmark_time,z1,a,y,q\n"
      "a,0,0,0.5,0,1,1\n"
      "a,1,10,,,0,\n";
  const std::string good_subjects =
      "subject_id,event_time,censor_time,event_observed\n"
      "a,4,inf,1\n";

  auto parse = [](const std::string& p, const std::string& s) {
    std::istringstream pin(p), sin(s);
    return read_panel_csv(pin, sin);
  };

  SECTION("well-formed input parses") {
    const Panel panel = parse(good_panel, good_subjects);
    CHECK(panel.n() == 1);
    CHECK(panel.landmarks.K == 1);
    CHECK(std::isinf(panel.subjects[0].censor_time));
  }
  SECTION("empty panel") {
    CHECK_THROWS_WITH(parse("", good_subjects),
                      Catch::Matchers::ContainsSubstring("empty panel"));
  }
  SECTION("bad header") {
    CHECK_THROWS_WITH(parse("id,j,t,z,a,y,q\na,0,0,1,0,1,1\n", good_subjects),
                      Catch::Matchers::ContainsSubstring("header"));
  }
  SECTION("wrong cell count") {
    CHECK_THROWS_WITH(
        parse("subject_id,j,landmark_time,z1,a,y,q\na,0,0,1,0,1\n",
              good_subjects),
        Catch::Matchers::ContainsSubstring("expected 7 cells"));
  }
  SECTION("non-contiguous at-risk rows") {
    const std::string gap =
        "subject_id,j,landmark_time,z1,a,y,q\n"
        "a,0,0,0.5,0,1,1\n"
        "a,1,10,,,0,\n"
        "a,2,20,0.5,0,1,1\n";
    CHECK_THROWS_WITH(parse(gap, good_subjects),
                      Catch::Matchers::ContainsSubstring("non-contiguous"));
  }
  SECTION("inconsistent landmark times") {
    const std::string clash =
        "subject_id,j,landmark_time,z1,a,y,q\n"
        "a,0,0,0.5,0,1,1\n"
        "a,1,10,,,0,\n"
        "b,0,0,0.5,0,1,1\n"
        "b,1,12,,,0,\n";
    const std::string two =
        "subject_id,event_time,censor_time,event_observed\n"
        "a,4,inf,1\nb,4,inf,1\n";
    CHECK_THROWS_WITH(parse(clash, two),
                      Catch::Matchers::ContainsSubstring("disagrees"));
  }
  SECTION("unknown subject in the scalar file") {
    const std::string stranger =
        "subject_id,event_time,censor_time,event_observed\n"
        "zz,4,inf,1\n";
    CHECK_THROWS_WITH(parse(good_panel, stranger),
                      Catch::Matchers::ContainsSubstring("unknown subject"));
  }
  SECTION("missing subject coverage") {
    const std::string empty_subjects =
        "subject_id,event_time,censor_time,event_observed\n";
    CHECK_THROWS_WITH(parse(good_panel, empty_subjects),
                      Catch::Matchers::ContainsSubstring("covers 0 of 1"));
  }
  SECTION("unparseable time") {
    const std::string bad_time =
        "subject_id,event_time,censor_time,event_observed\n"
        "a,soon,inf,1\n";
    CHECK_THROWS_WITH(parse(good_panel, bad_time),
                      Catch::Matchers::ContainsSubstring("unparseable"));
  }
}

TEST_CASE("survival curves serialize to plot-ready CSV") {
  SurvCurve curve;
  curve.grid = {0.0, 2.5};
  curve.S = {1.0, 0.5};
  curve.effective_n = {12.0, 9.5};
  CHECK(curve_csv(curve) ==
        "x,S,effective_n\n"
        "0,1,12\n"
        "2.5,0.5,9.5\n");
}
