#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <sstream>
#include <string>

#include "card/analysis.hpp"
#include "card/sim.hpp"

using namespace card;

namespace {
EdgeProbMatrix load_fixture(const std::string& name) {
    std::ifstream in(std::string(CARD_DATA_DIR) + "/" + name);
    REQUIRE(in.good());
    return parse_matrix(in).matrix;
}

// Reference r/p values below were computed independently with
// scipy.stats.pearsonr over the same entry selections and frozen here.
struct Oracle {
    const char* other;
    PairSelection sel;
    double r;
    double p;
    int pairs;
};
}  // namespace

TEST_CASE("topology statistics summarize off-diagonal mass") {
    EdgeProbMatrix m1 = load_fixture("topology_gpt4o_mini_google.txt");
    TopologyStats st = stats(m1, 0.5);
    CHECK(st.mean_offdiag == Catch::Approx(0.4195).margin(1e-12));
    CHECK(st.density_at_tau == Catch::Approx(6.0 / 20.0).margin(1e-12));
    CHECK(st.per_edge.s(0, 2) == 0.88);

    EdgeProbMatrix zero(3, Eigen::MatrixXd::Zero(3, 3));
    TopologyStats zs = stats(zero, 0.5);
    CHECK(zs.mean_offdiag == 0.0);
    CHECK(zs.density_at_tau == 0.0);

    EdgeProbMatrix single(1, Eigen::MatrixXd::Zero(1, 1));
    TopologyStats ss = stats(single, 0.5);
    CHECK(ss.mean_offdiag == 0.0);

    CHECK_THROWS_AS(stats(m1, 0.0), InvalidThreshold);
    CHECK_THROWS_AS(stats(m1, 1.0), InvalidThreshold);
}

TEST_CASE("pearson matches the independent reference for every selection") {
    EdgeProbMatrix m1 = load_fixture("topology_gpt4o_mini_google.txt");
    EdgeProbMatrix m2 = load_fixture("topology_gpt4o_google.txt");
    EdgeProbMatrix m3 = load_fixture("topology_gpt4o_mini_wiki.txt");
    EdgeProbMatrix m4 = load_fixture("topology_llama3_70b_wiki.txt");
    auto pick = [&](const char* name) -> const EdgeProbMatrix& {
        if (std::string(name) == "m2") return m2;
        if (std::string(name) == "m3") return m3;
        return m4;
    };

    const Oracle oracles[] = {
        {"m2", PairSelection::off_diagonal, 0.518410655106, 0.0191936127399, 20},
        {"m3", PairSelection::off_diagonal, 0.991265671969, 2.72226070228e-17, 20},
        {"m4", PairSelection::off_diagonal, 0.943242846902, 4.71981559911e-10, 20},
        {"m2", PairSelection::full_matrix, 0.68215303365, 0.000172680939782, 25},
        {"m3", PairSelection::full_matrix, 0.993760035941, 2.04027694978e-23, 25},
        {"m4", PairSelection::full_matrix, 0.962315909388, 1.67618607631e-14, 25},
        {"m2", PairSelection::upper_no_first, 0.320428867528, 0.535806661085, 6},
        {"m3", PairSelection::upper_no_first, 0.979739362083, 0.000611581743665, 6},
        {"m4", PairSelection::upper_no_first, 0.77892951703, 0.0679061418256, 6},
    };
    for (const Oracle& o : oracles) {
        CAPTURE(o.other, to_string(o.sel));
        PearsonResult pr = pearson(m1, pick(o.other), o.sel);
        CHECK(pr.pairs == o.pairs);
        CHECK(pr.r == Catch::Approx(o.r).epsilon(1e-9));
        CHECK(pr.p == Catch::Approx(o.p).epsilon(1e-9));
    }
}

TEST_CASE("pearson basic properties") {
    EdgeProbMatrix m1 = load_fixture("topology_gpt4o_mini_google.txt");
    EdgeProbMatrix m2 = load_fixture("topology_gpt4o_google.txt");

    SECTION("self correlation is exactly 1 with p 0") {
        PearsonResult pr = pearson(m1, m1);
        CHECK(pr.r == 1.0);
        CHECK(pr.p == 0.0);
    }
    SECTION("symmetry in the arguments") {
        PearsonResult ab = pearson(m1, m2);
        PearsonResult ba = pearson(m2, m1);
        CHECK(ab.r == Catch::Approx(ba.r).margin(1e-15));
        CHECK(ab.p == Catch::Approx(ba.p).margin(1e-15));
    }
    SECTION("invariance under positive affine maps") {
        Eigen::MatrixXd scaled = 0.3 * m2.s + Eigen::MatrixXd::Constant(5, 5, 0.2);
        for (int i = 0; i < 5; ++i) scaled(i, i) = 0.0;
        PearsonResult orig = pearson(m1, m2);
        PearsonResult aff = pearson(m1, EdgeProbMatrix(5, scaled));
        CHECK(aff.r == Catch::Approx(orig.r).margin(1e-12));
    }
    SECTION("constant input is rejected") {
        Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(5, 5, 0.5);
        for (int i = 0; i < 5; ++i) flat(i, i) = 0.0;
        // Diagonal zeros give full_matrix some variance; off-diagonal has none.
        CHECK_THROWS_AS(pearson(m1, EdgeProbMatrix(5, flat), PairSelection::off_diagonal),
                        DegenerateVariance);
    }
    SECTION("too few paired entries") {
        EdgeProbMatrix a(2, (Eigen::MatrixXd(2, 2) << 0, 0.3, 0.6, 0).finished());
        CHECK_THROWS_AS(pearson(a, a, PairSelection::off_diagonal), ValidationError);
        EdgeProbMatrix b(3, (Eigen::MatrixXd(3, 3) << 0, .1, .2, .3, 0, .4, .5, .6, 0).finished());
        CHECK_THROWS_AS(pearson(b, b, PairSelection::upper_no_first), ValidationError);
    }
    SECTION("size mismatch") {
        EdgeProbMatrix small(3, Eigen::MatrixXd::Zero(3, 3));
        CHECK_THROWS_AS(pearson(m1, small), ShapeMismatch);
    }
}

TEST_CASE("qualitative labels use fixed thresholds") {
    CHECK(std::string(strength_label(0.1)) == "Weak");
    CHECK(std::string(strength_label(-0.39)) == "Weak");
    CHECK(std::string(strength_label(0.4)) == "Moderate");
    CHECK(std::string(strength_label(0.69)) == "Moderate");
    CHECK(std::string(strength_label(-0.7)) == "Strong");
    CHECK(std::string(strength_label(0.89)) == "Strong");
    CHECK(std::string(strength_label(0.9)) == "Very strong");
    CHECK(std::string(strength_label(1.0)) == "Very strong");

    CHECK(std::string(significance_label(0.01)) == "Yes");
    CHECK(std::string(significance_label(0.049)) == "Yes");
    CHECK(std::string(significance_label(0.05)) == "Marginal");
    CHECK(std::string(significance_label(0.099)) == "Marginal");
    CHECK(std::string(significance_label(0.1)) == "No");
    CHECK(std::string(significance_label(0.9)) == "No");
}

TEST_CASE("selection names round-trip to stable strings") {
    CHECK(std::string(to_string(PairSelection::off_diagonal)) == "off-diagonal");
    CHECK(std::string(to_string(PairSelection::full_matrix)) == "full-matrix");
    CHECK(std::string(to_string(PairSelection::upper_no_first)) == "upper-no-first");
}

TEST_CASE("adaptation re-runs generation without touching parameters") {
    Roster roster = sim_roster();
    GeneratorParams params = init_params(GeneratorDims{}, 77);
    AnchorTopology anchor{AnchorKind::fully_connected, static_cast<int>(roster.size())};
    Query query{"probe", "Which data structure offers amortized O(1) appends?", ""};

    ConditionSet weak;
    weak.global = {{"model_quality", 0.35}, {"tool_quality", 0.7},
                   {"input_price", 2.0}, {"output_price", 4.4}};
    ConditionSet strong = weak;
    strong.global.push_back({"model_quality", 0.85});  // later entries shadow

    std::ostringstream before;
    save_checkpoint(params, before);

    CommTopology t1 = adapt(params, roster, weak, query, anchor, 0.5);
    CommTopology t2 = adapt(params, roster, weak, query, anchor, 0.5);
    CHECK(t1.edges == t2.edges);
    CHECK(t1.schedule == t2.schedule);

    // A changed condition channel must reach the score matrix.
    EdgeProbMatrix s_weak = generate(roster, weak, query, anchor, params, 0.5).s;
    EdgeProbMatrix s_strong = generate(roster, strong, query, anchor, params, 0.5).s;
    CHECK((s_weak.s - s_strong.s).cwiseAbs().maxCoeff() > 0.0);

    std::ostringstream after;
    save_checkpoint(params, after);
    CHECK(before.str() == after.str());
}

TEST_CASE("reports render both human and machine formats") {
    std::vector<NamedMatrix> mats{
        {"mini-google", load_fixture("topology_gpt4o_mini_google.txt")},
        {"mini-wiki", load_fixture("topology_gpt4o_mini_wiki.txt")},
    };

    std::ostringstream text;
    write_report_text(mats, 0.5, PairSelection::off_diagonal, text);
    CHECK(text.str().find("mini-google") != std::string::npos);
    CHECK(text.str().find("Very strong") != std::string::npos);
    CHECK(text.str().find("Comparison") != std::string::npos);

    std::ostringstream machine;
    write_report_machine(mats, 0.5, PairSelection::off_diagonal, machine);
    std::istringstream lines(machine.str());
    std::string line;
    std::getline(lines, line);
    CHECK(line == "matrix,mean_offdiag,density_at_tau");
    std::getline(lines, line);
    CHECK(line == "mini-google,0.419500,0.300000");
    std::getline(lines, line);  // mini-wiki stats
    std::getline(lines, line);  // blank separator
    CHECK(line.empty());
    std::getline(lines, line);
    CHECK(line == "a,b,selection,pairs,r,p,strength,significant");
    std::getline(lines, line);
    CHECK(line.find("mini-google,mini-wiki,off-diagonal,20,0.991266,") == 0);
    CHECK(line.find(",Very strong,Yes") != std::string::npos);

    std::vector<NamedMatrix> one{mats[0]};
    CHECK_THROWS_AS(write_report_text(one, 0.5, PairSelection::off_diagonal, text),
                    ValidationError);
    CHECK_THROWS_AS(write_report_machine(one, 0.5, PairSelection::off_diagonal, machine),
                    ValidationError);
}
