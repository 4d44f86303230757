#include <filesystem>
#include <sstream>

#include "doctest.h"

#include "dagfss/calibration.hpp"
#include "dagfss/experiment.hpp"
#include "dagfss/rng.hpp"

using namespace dagfss;

namespace {

ExperimentConfig small_config() {
    ExperimentConfig c;
    c.graph.p = 40;
    c.graph.clusters = 4;
    c.graph.p_in = 0.6;
    c.graph.p_out = 0.05;
    c.graph.seed = 3;
    c.K = 2;
    c.T = 1100;
    c.t_r = 1000;
    c.burn_in = 700;
    c.window = 40;
    c.sigma2 = 1.0;
    c.delta = 2.0;
    c.seed = 11;
    return c;
}

} // namespace

TEST_CASE("counter-based rng") {
    CHECK(uniform_at(1, 2, 3) == uniform_at(1, 2, 3));
    CHECK(uniform_at(1, 2, 3) != uniform_at(1, 2, 4));
    CHECK(uniform_at(1, 2, 3) != uniform_at(1, 3, 3));
    CHECK(derive_seed(5, 1) != derive_seed(5, 2));
    double sum = 0.0;
    double sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double g = gaussian_at(9, 0, static_cast<std::uint64_t>(i));
        sum += g;
        sq += g * g;
        const double u = uniform_at(9, 1, static_cast<std::uint64_t>(i));
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
    CHECK(std::abs(sum / n) < 5.0 / std::sqrt(n));
    CHECK(std::abs(sq / n - 1.0) < 5.0 * std::sqrt(2.0 / n));
    CounterRng r(9, 0);
    CHECK(r.gaussian() == gaussian_at(9, 0, 0));
    CHECK(r.position() == 1);
}

TEST_CASE("generate_clustered_graph") {
    CHECK_THROWS_WITH_AS(generate_clustered_graph(8, 2, 1.0, 0.0, 1), doctest::Contains("connected"), std::runtime_error);
    const auto a = generate_clustered_graph(8, 2, 1.0, 0.25, 4);
    const auto b = generate_clustered_graph(8, 2, 1.0, 0.25, 4);
    REQUIRE(a.graph.edge_count() == b.graph.edge_count());
    for (std::size_t k = 0; k < a.graph.edge_count(); ++k) {
        CHECK(a.graph.edges()[k].i == b.graph.edges()[k].i);
        CHECK(a.graph.edges()[k].j == b.graph.edges()[k].j);
    }
    CHECK(a.labels == std::vector<int>{0, 0, 0, 0, 1, 1, 1, 1});
    CHECK_THROWS_AS(generate_clustered_graph(8, 2, 0.2, 0.3, 1), std::invalid_argument);

    // Sizes differ by at most one.
    const auto c = generate_clustered_graph(10, 3, 0.9, 0.2, 2);
    std::vector<int> counts(3, 0);
    for (int l : c.labels) ++counts[static_cast<std::size_t>(l)];
    CHECK(*std::max_element(counts.begin(), counts.end()) - *std::min_element(counts.begin(), counts.end()) <= 1);

    // Default experiment graph: expected size close to the published 2508 edges.
    const ExperimentConfig def;
    const double expected = expected_edge_count(def.graph.p, def.graph.clusters, def.graph.p_in, def.graph.p_out);
    CHECK(std::abs(expected - 2508.0) / 2508.0 < 0.02);
    const auto big = generate_clustered_graph(def.graph.p, def.graph.clusters, def.graph.p_in, def.graph.p_out, def.graph.seed);
    CHECK(std::abs(static_cast<double>(big.graph.edge_count()) - 2508.0) / 2508.0 < 0.1);
}

TEST_CASE("graph JSON round trip") {
    const auto g = generate_clustered_graph(12, 3, 0.8, 0.2, 1);
    const nlohmann::json j = graph_to_json(g.graph, &g.labels);
    const ClusteredGraph back = graph_from_json(j);
    CHECK(back.labels == g.labels);
    CHECK(back.graph.edge_count() == g.graph.edge_count());
    nlohmann::json bad = j;
    bad["labels"].push_back(0);
    CHECK_THROWS_AS(graph_from_json(bad), GraphError);
}

TEST_CASE("synthesize_signal") {
    const std::vector<int> labels{0, 0, 1, 1, 2};
    const auto flat = synthesize_signal(labels, 0.0, {10, 0.0, 1}, 20, 1);
    for (const auto& y : flat) CHECK(y == Eigen::Vector<double, 5>(0, 0, 1, 1, 2));
    const auto step = synthesize_signal(labels, 0.0, {5, 0.5, 1}, 10, 1);
    for (int t = 0; t < 10; ++t) {
        const double extra = t >= 5 ? 0.5 : 0.0;
        CHECK(step[static_cast<std::size_t>(t)](2) == 1.0 + extra);
        CHECK(step[static_cast<std::size_t>(t)](3) == 1.0 + extra);
        CHECK(step[static_cast<std::size_t>(t)](0) == 0.0);
    }
    CHECK_THROWS_AS(synthesize_signal(labels, 1.0, {5, 0.5, 3}, 10, 1), std::invalid_argument);
    const auto n1 = synthesize_signal(labels, 7.0, {5, 0.5, 0}, 10, 4, 2);
    const auto n2 = synthesize_signal(labels, 7.0, {5, 0.5, 0}, 10, 4, 2);
    const auto n3 = synthesize_signal(labels, 7.0, {5, 0.5, 0}, 10, 4, 3);
    CHECK(n1[7] == n2[7]);
    CHECK(n1[7] != n3[7]);
}

TEST_CASE("stream formats round trip") {
    const std::vector<int> labels{0, 1, 1};
    const auto y = synthesize_signal(labels, 2.0, {3, 1.0, 1}, 6, 8);
    const auto dir = std::filesystem::temp_directory_path() / "dagfss_stream_test";
    std::filesystem::create_directories(dir);
    for (const char* name : {"s.csv", "s.bin"}) {
        write_stream(dir / name, y);
        const auto back = read_stream(dir / name);
        REQUIRE(back.size() == y.size());
        for (std::size_t t = 0; t < y.size(); ++t) CHECK(back[t] == y[t]);
    }
    std::stringstream ragged("1,2,3\n4,5\n");
    CHECK_THROWS_WITH_AS(read_stream_csv(ragged), doctest::Contains("line 2"), std::runtime_error);
    std::stringstream junk("XXXX");
    CHECK_THROWS_AS(read_stream_binary(junk), std::runtime_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("config JSON and validation") {
    ExperimentConfig c = small_config();
    nlohmann::json j = c;
    const ExperimentConfig back = j.get<ExperimentConfig>();
    CHECK(nlohmann::json(back) == j);
    j["bogus"] = 1;
    CHECK_THROWS_WITH_AS(j.get<ExperimentConfig>(), doctest::Contains("bogus"), std::invalid_argument);
    ExperimentConfig bad = c;
    bad.t_r = bad.T;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = c;
    bad.lambda_slow = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    const ExperimentConfig partial = nlohmann::json{{"sigma2", 3.0}}.get<ExperimentConfig>();
    CHECK(partial.sigma2 == 3.0);
    CHECK(partial.gamma == 0.3);
}

TEST_CASE("harness runs on a small graph") {
    const ExperimentSetup s = prepare_experiment(small_config());
    CHECK(s.design.stability.stable);
    CHECK(s.calibration.size() == all_detectors.size());

    SUBCASE("roc") {
        const RocResult r = run_roc(s, 8, 8);
        for (const RocCurve& c : r.curves) {
            CHECK(c.h0_scores.size() == 8);
            double last_pfa = -1.0;
            double last_pd = -1.0;
            for (const RocPoint& p : c.points) {
                CHECK(p.pfa >= 0.0);
                CHECK(p.pd <= 1.0);
                CHECK(p.pfa >= last_pfa);
                CHECK(p.pd >= last_pd);
                last_pfa = p.pfa;
                last_pd = p.pd;
            }
            CHECK(c.points.back().pfa == 1.0);
        }
        std::ostringstream out;
        write_roc_csv(out, r);
        CHECK(out.str().rfind("detector,scale,pfa,pd\n", 0) == 0);
    }
    SUBCASE("noiseless step is always detected") {
        ExperimentConfig c = small_config();
        c.sigma2 = 1e-12;
        const ExperimentSetup quiet = prepare_experiment(c);
        const RocResult r = run_roc(quiet, 3, 3, {0.5});
        for (const RocCurve& curve : r.curves) CHECK(curve.points.front().pd == 1.0);
    }
    SUBCASE("delay") {
        const DelayResult d = run_delay(s, 4);
        CHECK(d.records.size() == 4 * all_detectors.size());
        for (const auto& [det, q] : d.summary) CHECK(q.size() == 4);
        CHECK(d.summary.at(Detector::CoherentSum)[0] > 0.0);
        ExperimentConfig c = small_config();
        c.delta = 0.0;
        c.alpha = 1e-6;
        const DelayResult none = run_delay(prepare_experiment(c), 2);
        for (const DelayRecord& rec : none.records) {
            if (rec.false_alarms_before_change == 0) CHECK(rec.censored);
        }
    }
    SUBCASE("localization") {
        ExperimentConfig c = small_config();
        c.delta = 1.0;
        const LocalizationResult l = run_localization(prepare_experiment(c), 4);
        CHECK(l.mean_precision > 0.9);
        CHECK(l.mean_recall > 0.9);
        std::ostringstream out;
        write_localization_csv(out, s, l.runs.front());
        const std::string text = out.str();
        CHECK(std::count(text.begin(), text.end(), '\n') == 41);
    }
}

TEST_CASE("validation of the memoryless case") {
    const auto cg = generate_clustered_graph(10, 2, 0.7, 0.2, 1);
    ArmaFilter f;
    f.taps = {{0.0, 1.5}};
    ValidationOptions o;
    o.samples = 20000;
    o.chains = 500;
    o.burn_in = 300;
    o.spacing = 60;
    const ValidationResult r = run_validation(cg.graph, f, 2.0, 0.01, 0.1, 3, o);
    CHECK(r.samples == 20000);
    CHECK((r.q_inf - 4.5 * Eigen::MatrixXd::Identity(10, 10)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(r.q_error < 0.05);
    CHECK(r.r_error < 0.05);
    CHECK(r.q_pass);
    CHECK(r.r_pass);
    CHECK((r.r_colored - r.r_inf).cwiseAbs().maxCoeff() < 1e-12);

    // Equal rates make d identically zero.
    const ValidationResult z = run_validation(cg.graph, f, 2.0, 0.1, 0.1, 3, o);
    CHECK(z.r_inf.norm() < 1e-14);
    CHECK(z.r_sample.norm() < 1e-20);
}
