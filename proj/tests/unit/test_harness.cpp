// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "petfuse/error.hpp"
#include "petfuse/harness.hpp"
#include "petfuse/rng.hpp"

using namespace petfuse;
using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t trainable_for(ArmKind kind) {
  const auto cfg = build_arm(kind, AppConfig{});
  return count_params(make_model(cfg, Vocabulary{})->graph()).trainable;
}

std::vector<Sample> small_dataset() {
  GeneratorConfig g;
  g.patients = 60;
  g.seed = 3;
  return generate_synthetic(g);
}

json small_plan_json() {
  return json::parse(R"({
    "config": {"train": {"max_epochs": 2, "batch": 8, "accumulation": 1, "lr": 0.001}},
    "seeds": [1, 2],
    "arms": [
      {"name": "vision", "kind": "vision_only"},
      {"name": "matched", "kind": "budget_matched"},
      {"name": "pet", "kind": "full_pet"},
      {"name": "broken", "kind": "full_pet", "config": {"pet": {"policy": "lora"}}}
    ]})");
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("budget search under the pinned rule") {
    const auto r = search_fusion_budget(1'055'744, FusionConfig{});
    CHECK(r.best.shared_dim == 278);
    CHECK(r.best.head_hidden == 139);
    CHECK(r.best.params == 1'055'288);
    CHECK(std::abs(r.relative_diff) <= 0.01);
    CHECK(r.nearest.front().params == r.best.params);
    CHECK(budget_head_hidden(1) == 14);
    CHECK(budget_head_hidden(280) == 140);
    CHECK(budget_head_hidden(279) == 140);
    // Same inputs, same answer.
    CHECK(search_fusion_budget(1'055'744, FusionConfig{}).best.shared_dim == 278);
  }

  TEST_CASE("budget search is monotone in the target") {
    Rng rng(2024);
    for (int i = 0; i < 200; ++i) {
      const std::uint64_t a = 10'000 + rng.below(3'000'000);
      const std::uint64_t b = a + rng.below(500'000);
      const auto da = search_fusion_budget(a, FusionConfig{}, 1e9).best.shared_dim;
      const auto db = search_fusion_budget(b, FusionConfig{}, 1e9).best.shared_dim;
      CHECK(db >= da);
    }
  }

  TEST_CASE("budget search failure names the nearest candidates") {
    try {
      search_fusion_budget(100, FusionConfig{});
      FAIL("expected SearchError");
    } catch (const SearchError& e) {
      CHECK(std::string(e.what()).find("d=1/h=14") != std::string::npos);
    }
    CHECK_THROWS_AS(search_fusion_budget(0, FusionConfig{}), ConfigError);
  }

  TEST_CASE("arm parameter counts") {
    CHECK(trainable_for(ArmKind::vision_only) == 1'055'744);
    CHECK(trainable_for(ArmKind::full_pet) == 2'362'880);
    const auto matched = trainable_for(ArmKind::budget_matched);
    CHECK(std::abs(static_cast<double>(matched) - 1'055'744.0) / 1'055'744.0 <= 0.01);

    const auto ft = build_arm(ArmKind::full_finetune, AppConfig{});
    CHECK(ft.model.declared_total_params == 0);
    const auto model = make_model(ft, Vocabulary{});
    const auto report = count_params(model->graph());
    CHECK(report.trainable == report.total);
    CHECK(report.total > 2'362'880);
  }

  TEST_CASE("efficiency oracles") {
    CHECK(auroc_per_million(0.9079, 2'370'000) == 383);
    CHECK(auroc_per_million(0.770, 94'300'000) == 8);
    CHECK(auroc_per_million(0.6527, 1'055'744) == 616);
    CHECK_FALSE(auroc_per_million(0.9, 0).has_value());
    // The exact fusion count 2,362,880 rounds to 2.36M, not 2.37M.
    CHECK(auroc_per_million(0.9079, 2'362'880) == 385);

    const std::vector<SummaryRow> rows = {
        {"Vision-Only", 1, 0.6527, 0.2, 0.1, 1'055'744, 1'055'744, 1.12},
        {"Frozen", 1, 0.9079, 0.4, 0.1, 2'370'000, 94'300'000, 2.51},
        {"Full", 1, 0.7701, 0.3, 0.1, 94'300'000, 94'300'000, 100.0},
        {"Empty", 1, 0.5, 0.1, 0.1, 0, 10, 0.0},
    };
    const auto table = efficiency_table(rows);
    REQUIRE(table.size() == 4);
    CHECK(*table[1].auroc_per_million == 383);
    CHECK(*table[1].efficiency_ratio == doctest::Approx(0.62).epsilon(0.01));
    CHECK(*table[2].efficiency_ratio == doctest::Approx(0.013).epsilon(0.05));
    CHECK_FALSE(table[3].auroc_per_million.has_value());
    CHECK_FALSE(table[3].efficiency_ratio.has_value());
    CHECK(table[1].rank == 1);
    CHECK(table[2].rank == 2);
    CHECK(table[0].rank == 3);
  }

  TEST_CASE("efficiency rows average seeds") {
    const std::vector<SummaryRow> rows = {{"a", 1, 0.6, 0.1, 0.1, 1'000'000, 0, 0}, {"a", 2, 0.8, 0.1, 0.1, 1'000'000, 0, 0}};
    const auto table = efficiency_table(rows);
    REQUIRE(table.size() == 1);
    CHECK(table[0].auroc == doctest::Approx(0.7));
    CHECK(*table[0].auroc_per_million == 700);
  }

  TEST_CASE("plan validation happens before training") {
    CHECK_THROWS_AS(plan_from_json(json::parse(R"({"arms": [{"kind": "full_pet"}]})")), ConfigError);
    CHECK_THROWS_AS(plan_from_json(json::parse(R"({"seeds": [1], "arms": []})")), ConfigError);
    CHECK_THROWS_AS(plan_from_json(json::parse(R"({"seeds": [1], "arms": [{"kind": "full_pet"}, {"kind": "full_pet"}]})")),
                    ConfigError);
    CHECK_THROWS_AS(plan_from_json(json::parse(R"({"seeds": [1], "arms": [{"kind": "prefix"}]})")), ConfigError);
    CHECK_THROWS_AS(plan_from_json(json::parse(R"({"seeds": [1], "arms": [{"kind": "full_pet", "name": "../x"}]})")),
                    ConfigError);
    CHECK_THROWS_AS(plan_from_json(json::parse(R"({"seeds": [1], "extra": 1, "arms": [{"kind": "full_pet"}]})")),
                    ConfigError);
    CHECK_THROWS_AS(
        plan_from_json(json::parse(R"({"seeds": [1], "arms": [{"kind": "full_pet", "config": {"trian": {}}}]})")),
        ConfigError);
    const auto plan = plan_from_json(json::parse(R"({"seeds": [4, 5], "arms": [{"kind": "vision_only"}]})"));
    CHECK(plan.arms[0].name == "vision_only");
    CHECK(plan.arms[0].seeds == std::vector<std::uint64_t>{4, 5});
    CHECK(plan_from_json(to_json(plan)).arms[0].seeds == plan.arms[0].seeds);
  }

  TEST_CASE("the shipped plan covers every arm kind") {
    const auto plan = load_plan(std::filesystem::path(PETFUSE_SOURCE_DIR) / "configs" / "plan.json");
    REQUIRE(plan.arms.size() == 4);
    CHECK(plan.arms[0].kind == ArmKind::vision_only);
    CHECK(plan.arms[1].kind == ArmKind::budget_matched);
    CHECK(plan.arms[2].kind == ArmKind::full_pet);
    CHECK(plan.arms[3].kind == ArmKind::full_finetune);
    for (const auto& a : plan.arms) CHECK(a.seeds == std::vector<std::uint64_t>{1, 2, 3});
  }

  TEST_CASE("summary CSV round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "petfuse_summary_rt";
    std::filesystem::create_directories(dir);
    const std::vector<SummaryRow> rows = {{"a", 3, 0.75, std::nullopt, 0.125, 10, 20, 50.0},
                                          {"b", 4, std::nullopt, 0.5, 0.0, 0, 5, 0.0}};
    write_summary_csv(dir / "s.csv", rows);
    const auto back = read_summary_csv(dir / "s.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[0].auroc_macro == 0.75);
    CHECK_FALSE(back[0].auprc_macro.has_value());
    CHECK_FALSE(back[1].auroc_macro.has_value());
    CHECK(back[1].total_params == 5);
    std::ofstream(dir / "bad.csv") << summary_csv_header() << "\na,1,x,,0,0,0,0\n";
    CHECK_THROWS_AS(read_summary_csv(dir / "bad.csv"), ParseError);
  }

  TEST_CASE("a plan runs every arm, isolates failures and recomputes deltas from disk") {
    const auto samples = small_dataset();
    const auto plan = plan_from_json(small_plan_json());
    const auto dir = std::filesystem::temp_directory_path() / "petfuse_plan_a";
    std::filesystem::remove_all(dir);
    const auto result = run_plan(plan, samples, dir);

    // The LoRA arm needs encoder hooks, which precomputed features lack.
    REQUIRE(result.failures.size() == 2);
    CHECK(result.failures[0].arm == "broken");
    CHECK(result.failures[0].error.find("precomputed") != std::string::npos);
    REQUIRE(result.rows.size() == 6);
    CHECK(result.rows[0].seed == 1);
    CHECK(result.rows[1].seed == 2);
    CHECK(result.rows[0].auroc_macro != result.rows[1].auroc_macro);

    for (const char* f : {"plan.json", "summary.csv", "per_label.csv", "attribution.json", "efficiency.csv",
                          "vision.csv", "matched.csv", "pet.csv", "broken.csv", "pet/seed1/history.csv",
                          "pet/seed1/config.json", "pet/seed1/report.json", "pet/seed1/model.ckpt"}) {
      CHECK_MESSAGE(std::filesystem::exists(dir / f), f);
    }

    // Deltas from the stored per-arm CSVs match attribution.json exactly.
    std::vector<SummaryRow> rows;
    for (const char* arm : {"vision", "matched", "pet", "broken"}) {
      const auto part = read_summary_csv(dir / (std::string(arm) + ".csv"));
      rows.insert(rows.end(), part.begin(), part.end());
    }
    const auto again = attribute(plan, rows);
    const auto stored = json::parse(slurp(dir / "attribution.json"));
    CHECK(stored.at("fusion_effect").get<double>() == *again.fusion_effect);
    CHECK(stored.at("scaling_effect").get<double>() == *again.scaling_effect);
    CHECK(stored.at("multimodal_gain").get<double>() == *again.multimodal_gain);
    CHECK(*again.fusion_effect + *again.scaling_effect == doctest::Approx(*again.multimodal_gain).epsilon(1e-12));

    // Same plan again, with two workers: byte-identical artifacts.
    const auto dir_b = std::filesystem::temp_directory_path() / "petfuse_plan_b";
    std::filesystem::remove_all(dir_b);
    run_plan(plan, samples, dir_b, 2);
    for (const char* f : {"summary.csv", "per_label.csv", "attribution.json", "efficiency.csv",
                          "pet/seed2/report.json", "pet/seed2/model.ckpt"}) {
      CHECK_MESSAGE(slurp(dir / f) == slurp(dir_b / f), f);
    }

    const auto md = regenerate_report(dir);
    CHECK(md.find("| pet |") != std::string::npos);
    CHECK(md.find("broken seed 1") != std::string::npos);
    CHECK(md == regenerate_report(dir_b));
  }
}
