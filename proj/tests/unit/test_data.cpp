// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "petfuse/data.hpp"
#include "petfuse/error.hpp"

using namespace petfuse;

namespace {

Sample make_sample(const std::string& id, const std::string& patient) {
  Sample s;
  s.id = id;
  s.patient_id = patient;
  s.text = "text " + id;
  s.labels.assign(kNumLabels, 0);
  return s;
}

std::string manifest_line(const std::string& labels, const std::string& extra = "") {
  return R"({"id":"a","patient_id":"p","text":"t","labels":)" + labels + extra + "}";
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("largest-remainder allocation") {
    CHECK(allocate_patients(10, SplitSpec{}) == std::array<std::size_t, 3>{7, 2, 1});
    CHECK(allocate_patients(3, SplitSpec{}) == std::array<std::size_t, 3>{1, 1, 1});
    CHECK_THROWS_AS(allocate_patients(2, SplitSpec{}), InputError);
    SplitSpec bad;
    bad.train = 0.8;
    CHECK_THROWS_AS(allocate_patients(10, bad), ConfigError);
    // Reference split sizes expressed as fractions of the corpus.
    CHECK(std::round(2695.0 / 3851 * 10000) / 100 == doctest::Approx(69.98));
    CHECK(std::round(577.0 / 3851 * 10000) / 100 == doctest::Approx(14.98));
    CHECK(std::round(579.0 / 3851 * 10000) / 100 == doctest::Approx(15.04));
    for (std::size_t p = 3; p < 400; ++p) {
      const auto c = allocate_patients(p, SplitSpec{});
      CHECK(c[0] + c[1] + c[2] == p);
      // Below 7 patients a 15% split can round to zero and borrows a patient.
      if (p < 7) continue;
      const std::array<double, 3> f = {0.7, 0.15, 0.15};
      for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(static_cast<double>(c[i]) - f[i] * static_cast<double>(p)) <= 1.0);
    }
  }

  TEST_CASE("a patient's samples stay together") {
    std::vector<Sample> samples;
    for (int i = 0; i < 5; ++i) samples.push_back(make_sample("x" + std::to_string(i), "solo"));
    samples.push_back(make_sample("y", "other1"));
    samples.push_back(make_sample("z", "other2"));
    const auto s = split_patients(samples, SplitSpec{});
    std::size_t holding = 0;
    for (const auto* part : {&s.train, &s.val, &s.test}) {
      std::size_t solo = 0;
      for (auto i : *part) solo += samples[i].patient_id == "solo";
      CHECK((solo == 0 || solo == 5));
      holding += solo == 5;
    }
    CHECK(holding == 1);
  }

  TEST_CASE("splits are patient-disjoint for any dataset and seed") {
    Rng r(41);
    for (int trial = 0; trial < 60; ++trial) {
      GeneratorConfig g;
      g.patients = 3 + r.below(60);
      g.vision_features = false;
      g.max_studies_per_patient = 1 + r.below(3);
      g.seed = r.next_u64();
      const auto samples = generate_synthetic(g);
      SplitSpec spec;
      spec.seed = r.next_u64();
      const auto s = split_patients(samples, spec);
      std::array<std::set<std::string>, 3> pats;
      std::size_t total = 0;
      const std::array<const std::vector<std::size_t>*, 3> parts = {&s.train, &s.val, &s.test};
      for (std::size_t k = 0; k < 3; ++k) {
        for (auto i : *parts[k]) pats[k].insert(samples[i].patient_id);
        total += parts[k]->size();
        CHECK_FALSE(parts[k]->empty());
      }
      CHECK(total == samples.size());
      for (std::size_t a = 0; a < 3; ++a) {
        for (std::size_t b = a + 1; b < 3; ++b) {
          for (const auto& p : pats[a]) CHECK(pats[b].count(p) == 0);
        }
      }
    }
  }

  TEST_CASE("generator prevalence and determinism") {
    GeneratorConfig g;
    g.patients = 10000;
    g.max_studies_per_patient = 1;
    g.vision_features = false;
    g.seed = 3;
    const auto samples = generate_synthetic(g);
    REQUIRE(samples.size() == 10000);
    double eff = 0;
    for (const auto& s : samples) eff += s.labels[2];
    const double p = 0.231;
    const double sigma = std::sqrt(p * (1 - p) / 10000.0);
    CHECK(std::abs(eff / 10000.0 - p) < 3 * sigma);

    GeneratorConfig small;
    small.patients = 20;
    small.seed = 9;
    std::ostringstream a, b;
    write_manifest(a, generate_synthetic(small));
    write_manifest(b, generate_synthetic(small));
    CHECK(a.str() == b.str());
    small.seed = 10;
    std::ostringstream c;
    write_manifest(c, generate_synthetic(small));
    CHECK(a.str() != c.str());

    GeneratorConfig bad;
    bad.prevalence[0] = 0.0;
    CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
    bad.prevalence[0] = 1.0;
    CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
  }

  TEST_CASE("vision signal follows the plan") {
    GeneratorConfig g;
    g.patients = 400;
    g.plan = SignalPlan::uniform(Channel::none);
    g.plan.channels[2] = Channel::vision;
    g.vision_signal = 3.0;
    const auto samples = generate_synthetic(g);
    // Mean feature vectors of positives and negatives differ by the planted
    // shift, whose squared length is vision_signal^2.
    std::vector<double> mp(2048, 0.0), mn(2048, 0.0);
    double np = 0, nn = 0;
    for (const auto& s : samples) {
      auto& m = s.labels[2] ? mp : mn;
      (s.labels[2] ? np : nn) += 1;
      for (std::size_t d = 0; d < 2048; ++d) m[d] += s.vision_features[d];
    }
    double proj = 0;
    for (std::size_t d = 0; d < 2048; ++d) {
      const double diff = mp[d] / np - mn[d] / nn;
      proj += diff * diff;
    }
    // Noise adds about 2048 * (1/np + 1/nn) to the squared distance.
    const double noise = 2048.0 * (1.0 / np + 1.0 / nn);
    CHECK(proj - noise == doctest::Approx(9.0).epsilon(0.5));
  }

  TEST_CASE("manifest parsing and round trip") {
    const std::string labels14 = "[0,1,0,0,0,0,0,0,0,0,0,0,0,1]";
    std::istringstream ok(manifest_line(labels14) + "\n" +
                          R"({"id":"b","patient_id":"p","text":"u","labels":)" + labels14 + "}\n\n" +
                          R"({"id":"c","patient_id":"q","text":"v","labels":)" + labels14 +
                          R"(,"vision_features":[0.5,1.5]})" + "\n");
    const auto samples = parse_manifest(ok);
    REQUIRE(samples.size() == 3);
    CHECK(samples[2].vision_features == std::vector<double>{0.5, 1.5});

    std::istringstream short_labels(manifest_line(labels14) + "\n" +
                                    R"({"id":"b","patient_id":"p","text":"u","labels":[0,0,0,0,0,0,0,0,0,0,0,0,0]})");
    try {
      parse_manifest(short_labels);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
    std::istringstream bad_feature(manifest_line(labels14, R"(,"vision_features":[1,"x"])"));
    CHECK_THROWS_AS(parse_manifest(bad_feature), ParseError);
    std::istringstream missing(R"({"id":"a","text":"t","labels":)" + labels14 + "}");
    CHECK_THROWS_AS(parse_manifest(missing), ParseError);
    std::istringstream junk("{not json");
    CHECK_THROWS_AS(parse_manifest(junk), ParseError);
    std::istringstream unknown(manifest_line(labels14, R"(,"image":"x.png")"));
    CHECK_THROWS_AS(parse_manifest(unknown), ParseError);

    GeneratorConfig g;
    g.patients = 5;
    const auto gen = generate_synthetic(g);
    std::ostringstream out;
    write_manifest(out, gen);
    std::istringstream back(out.str());
    const auto again = parse_manifest(back);
    REQUIRE(again.size() == gen.size());
    for (std::size_t i = 0; i < gen.size(); ++i) {
      CHECK(again[i].id == gen[i].id);
      CHECK(again[i].text == gen[i].text);
      CHECK(again[i].labels == gen[i].labels);
      CHECK(again[i].vision_features == gen[i].vision_features);
    }
    std::ostringstream out2;
    write_manifest(out2, again);
    CHECK(out2.str() == out.str());
  }
}
