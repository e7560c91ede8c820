// card — condition-aware communication topology toolkit.
//
// Subcommands:
//   generate   build a topology for one query from a manifest (+ checkpoint)
//   train      optimize generator parameters against the simulated environment
//   adapt      re-generate under changed conditions without touching weights
//   simulate   score a fixed topology on a simulated scenario
//   report     compare saved probability matrices (stats + correlations)
//
// Exit codes: 0 success, 1 internal error, 2 parse/usage error,
// 3 validation error, 4 numeric error. CARD_SEED overrides the default seed;
// CARD_OUT_DIR prefixes relative output paths.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "card/analysis.hpp"
#include "card/manifest.hpp"
#include "card/sim.hpp"
#include "card/training.hpp"

namespace {

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) throw card::ParseError("cannot open file: " + path);
    return in;
}

std::string out_path(const std::string& path) {
    const char* dir = std::getenv("CARD_OUT_DIR");
    if (!dir || !*dir || path.empty() || path.front() == '/') return path;
    return std::string(dir) + "/" + path;
}

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path);
    if (!out.good()) throw card::ParseError("cannot open file for writing: " + path);
    return out;
}

std::string matrix_name(const std::string& path) {
    std::size_t slash = path.find_last_of('/');
    std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    std::size_t dot = base.find_last_of('.');
    return dot == std::string::npos || dot == 0 ? base : base.substr(0, dot);
}

std::vector<std::string> roster_labels(const card::Roster& roster) {
    std::vector<std::string> labels;
    labels.reserve(roster.size());
    for (const auto& a : roster) labels.push_back(a.id);
    return labels;
}

// key=value overrides for `adapt`; bare decimals become scalars, anything
// else a categorical label.
void apply_overrides(card::ConditionSet& conditions, const std::vector<std::string>& sets) {
    for (const std::string& raw : sets) {
        std::size_t eq = raw.find('=');
        if (eq == std::string::npos || eq == 0)
            throw card::ParseError("override '" + raw + "' is not key=value");
        card::ConditionFeature f;
        f.name = raw.substr(0, eq);
        std::string value = raw.substr(eq + 1);
        double v = 0.0;
        if (card::detail::parse_decimal(value, v)) f.value = v;
        else f.value = value;
        conditions.global.push_back(std::move(f));  // later entries shadow
    }
}

std::string checkpoint_digest(const card::GeneratorParams& params) {
    std::ostringstream bytes;
    card::save_checkpoint(params, bytes);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(card::fnv1a64(bytes.str())));
    return buf;
}

void print_topology(std::ostream& out, const card::GenerationResult& result,
                    const card::Roster& roster) {
    card::write_matrix_grid(result.s, roster_labels(roster), out);
    out << "\nedges (" << result.topology.edges.size() << "):\n";
    for (const auto& e : result.topology.edges) {
        char line[160];
        std::snprintf(line, sizeof(line), "  %s -> %s  p=%.4f\n",
                      roster[static_cast<std::size_t>(e.from)].id.c_str(),
                      roster[static_cast<std::size_t>(e.to)].id.c_str(), e.prob);
        out << line;
    }
    out << "schedule:";
    for (int agent : result.topology.schedule)
        out << ' ' << roster[static_cast<std::size_t>(agent)].id;
    out << '\n';
}

// Mean soft cost (probability-weighted edge cost) over a configuration set.
double mean_soft_cost(const card::GeneratorParams& params, const card::Roster& roster,
                      const std::vector<std::pair<card::Query, card::ConditionSet>>& pairs,
                      const card::CostModel& cm, card::AnchorKind anchor_kind) {
    card::AnchorTopology anchor{anchor_kind, static_cast<int>(roster.size())};
    std::map<std::string, card::Embedding> cache;
    double total = 0.0;
    for (const auto& [query, conditions] : pairs) {
        card::detail::PairInputs in =
            card::detail::embed_pair(roster, conditions, query, params.embedder, cache);
        card::ForwardCache fwd = card::forward_s(params, in.x_p, in.x_c, in.q, anchor);
        total += card::soft_cost(fwd.s, card::edge_cost_matrix(roster, conditions, cm));
    }
    return total / static_cast<double>(pairs.size());
}

int cmd_generate(const std::string& manifest_path, const std::string& checkpoint_path,
                 const std::string& query_text, const std::string& query_id, double tau,
                 const std::string& anchor_name, std::uint64_t seed, const std::string& out_file) {
    std::ifstream min = open_input(manifest_path);
    card::Manifest manifest = card::parse_manifest(min);

    card::GeneratorParams params;
    if (!checkpoint_path.empty()) {
        std::ifstream cin_ = open_input(checkpoint_path);
        params = card::load_checkpoint(cin_);
    } else {
        params = card::init_params(card::GeneratorDims{}, seed);
    }

    card::AnchorTopology anchor{card::anchor_kind_from_string(anchor_name),
                                static_cast<int>(manifest.roster.size())};
    card::Query query{query_id, query_text, ""};
    card::GenerationResult result =
        card::generate(manifest.roster, manifest.conditions, query, anchor, params, tau);

    std::cout << "topology for query '" << query_id << "' (tau=" << tau
              << ", anchor=" << card::to_string(anchor.kind)
              << ", agents=" << manifest.roster.size() << ")\n\n";
    print_topology(std::cout, result, manifest.roster);
    if (!out_file.empty()) {
        std::ofstream out = open_output(out_path(out_file));
        card::write_matrix_machine(result.s, out);
        std::cout << "wrote probability matrix to " << out_path(out_file) << '\n';
    }
    return 0;
}

int cmd_train(const std::string& scenario, card::TrainConfig cfg, const std::string& anchor_name,
              const std::string& aggregation_name, int eval_reps,
              const std::string& checkpoint_file, const std::string& metrics_file) {
    cfg.anchor = card::anchor_kind_from_string(anchor_name);
    cfg.aggregation = card::aggregation_from_string(aggregation_name);
    if (eval_reps < 1) throw card::ValidationError("eval-reps must be >= 1");

    card::ConfigSet set = card::make_config_set(scenario);
    card::UtilityFn env = card::make_sim_utility(set.roster, cfg.k_rounds, cfg.aggregation);
    card::CostModel cm;  // prices come from the scenario condition features

    card::GeneratorParams params = card::init_params(card::GeneratorDims{}, cfg.seed);
    const std::uint64_t eval_seed = 999;
    double u_before = card::evaluate_mean_utility(params, set.roster, set.pairs, env, cfg.tau,
                                                  cfg.anchor, eval_reps, eval_seed);
    double c_before = mean_soft_cost(params, set.roster, set.pairs, cm, cfg.anchor);

    card::TrainHistory history = card::train(params, set.roster, set.pairs, env, cfg, cm);

    double u_after = card::evaluate_mean_utility(params, set.roster, set.pairs, env, cfg.tau,
                                                 cfg.anchor, eval_reps, eval_seed);
    double c_after = mean_soft_cost(params, set.roster, set.pairs, cm, cfg.anchor);

    std::ofstream cp = open_output(out_path(checkpoint_file));
    card::save_checkpoint(params, cp);
    std::ofstream mf = open_output(out_path(metrics_file));
    card::write_metrics_csv(history, mf);

    char line[240];
    std::snprintf(line, sizeof(line),
                  "scenario=%s steps=%d beta=%g lr=%g samples=%d batch=%d tau=%g seed=%llu\n",
                  scenario.c_str(), cfg.steps, cfg.beta, cfg.lr, cfg.samples_per_step,
                  cfg.batch_size, cfg.tau, static_cast<unsigned long long>(cfg.seed));
    std::cout << line;
    std::snprintf(line, sizeof(line), "untrained: mean_utility=%.4f soft_cost=%.6f\n", u_before,
                  c_before);
    std::cout << line;
    std::snprintf(line, sizeof(line), "trained:   mean_utility=%.4f soft_cost=%.6f\n", u_after,
                  c_after);
    std::cout << line;
    std::cout << "wrote checkpoint to " << out_path(checkpoint_file) << " and metrics to "
              << out_path(metrics_file) << '\n';
    return 0;
}

int cmd_adapt(const std::string& checkpoint_path, const std::string& manifest_path,
              const std::string& query_text, const std::string& query_id, double tau,
              const std::string& anchor_name, const std::vector<std::string>& sets) {
    std::ifstream cin_ = open_input(checkpoint_path);
    card::GeneratorParams params = card::load_checkpoint(cin_);
    std::ifstream min = open_input(manifest_path);
    card::Manifest manifest = card::parse_manifest(min);

    std::string digest_before = checkpoint_digest(params);

    card::AnchorTopology anchor{card::anchor_kind_from_string(anchor_name),
                                static_cast<int>(manifest.roster.size())};
    card::Query query{query_id, query_text, ""};

    card::ConditionSet adapted = manifest.conditions;
    apply_overrides(adapted, sets);

    card::GenerationResult before =
        card::generate(manifest.roster, manifest.conditions, query, anchor, params, tau);
    card::GenerationResult after =
        card::generate(manifest.roster, adapted, query, anchor, params, tau);

    std::cout << "before (manifest conditions):\n";
    print_topology(std::cout, before, manifest.roster);
    std::cout << "\nafter (" << sets.size() << " override" << (sets.size() == 1 ? "" : "s")
              << "):\n";
    print_topology(std::cout, after, manifest.roster);

    int changed = 0;
    std::ostringstream deltas;
    for (int i = 0; i < before.s.n; ++i)
        for (int j = 0; j < before.s.n; ++j) {
            double d = after.s.s(i, j) - before.s.s(i, j);
            if (i == j || std::abs(d) <= 1e-9) continue;
            ++changed;
            char line[200];
            std::snprintf(line, sizeof(line), "  %s -> %s: %.4f -> %.4f (delta %+.4f)\n",
                          manifest.roster[static_cast<std::size_t>(i)].id.c_str(),
                          manifest.roster[static_cast<std::size_t>(j)].id.c_str(),
                          before.s.s(i, j), after.s.s(i, j), d);
            deltas << line;
        }
    std::cout << "\nedge probability deltas (" << changed << "):\n";
    if (changed == 0) std::cout << "  none\n";
    else std::cout << deltas.str();

    std::string digest_after = checkpoint_digest(params);
    std::cout << "checkpoint digest before: " << digest_before << '\n';
    std::cout << "checkpoint digest after:  " << digest_after
              << (digest_after == digest_before ? " (unchanged)" : " (CHANGED)") << '\n';
    return 0;
}

int cmd_simulate(const std::string& scenario, const std::string& topology_path, double tau,
                 int k_rounds, const std::string& aggregation_name, int episodes,
                 std::uint64_t seed) {
    if (episodes < 1) throw card::ValidationError("episodes must be >= 1");
    card::AggregationMode mode = card::aggregation_from_string(aggregation_name);
    card::ConfigSet set = card::make_config_set(scenario);
    int n = static_cast<int>(set.roster.size());

    card::CommTopology topology;
    std::string source = "empty";
    if (!topology_path.empty()) {
        std::ifstream tin = open_input(topology_path);
        card::ParsedMatrix parsed = card::parse_matrix(tin);
        if (parsed.matrix.n != n)
            throw card::ShapeMismatch("topology is " + std::to_string(parsed.matrix.n) +
                                      " agents, scenario roster has " + std::to_string(n));
        topology = card::CommTopology::build(
            n, card::break_cycles(card::threshold(parsed.matrix, tau)));
        source = topology_path;
    } else {
        topology = card::CommTopology::build(n, {});
    }

    card::UtilityFn env = card::make_sim_utility(set.roster, k_rounds, mode);
    double total = 0.0;
    for (std::size_t t = 0; t < set.pairs.size(); ++t)
        for (int e = 0; e < episodes; ++e) {
            std::uint64_t episode_seed = card::combine_keys(
                seed, (static_cast<std::uint64_t>(t) << 20) + static_cast<std::uint64_t>(e));
            total += env(set.pairs[t].first, set.pairs[t].second, topology, episode_seed);
        }
    double mean = total / (static_cast<double>(set.pairs.size()) * episodes);

    std::cout << "scenario=" << scenario << " topology=" << source << " ("
              << topology.edges.size() << " edges) k=" << k_rounds
              << " aggregation=" << card::to_string(mode) << " episodes=" << episodes
              << " seed=" << seed << '\n';
    char line[120];
    std::snprintf(line, sizeof(line), "mean_utility=%.4f over %zu tasks x %d episodes\n", mean,
                  set.pairs.size(), episodes);
    std::cout << line;
    return 0;
}

int cmd_report(const std::vector<std::string>& files, double tau, const std::string& selection_name,
               bool machine) {
    card::PairSelection sel;
    if (selection_name == "off-diagonal") sel = card::PairSelection::off_diagonal;
    else if (selection_name == "full-matrix") sel = card::PairSelection::full_matrix;
    else if (selection_name == "upper-no-first") sel = card::PairSelection::upper_no_first;
    else throw card::ValidationError("unknown selection: " + selection_name);

    std::vector<card::NamedMatrix> matrices;
    for (const std::string& path : files) {
        std::ifstream in = open_input(path);
        matrices.push_back({matrix_name(path), card::parse_matrix(in).matrix});
    }
    if (machine) card::write_report_machine(matrices, tau, sel, std::cout);
    else card::write_report_text(matrices, tau, sel, std::cout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"condition-aware communication topology toolkit"};
    app.require_subcommand(1);

    // generate ---------------------------------------------------------------
    auto* gen = app.add_subcommand("generate", "build a topology for one query");
    std::string gen_manifest, gen_checkpoint, gen_query, gen_query_id = "query-0";
    std::string gen_anchor = "fully-connected", gen_out;
    double gen_tau = 0.5;
    std::uint64_t gen_seed = 0;
    gen->add_option("--manifest", gen_manifest, "manifest file")->required();
    gen->add_option("--checkpoint", gen_checkpoint, "generator checkpoint (untrained if absent)");
    gen->add_option("--query", gen_query, "query text")->required();
    gen->add_option("--query-id", gen_query_id, "query identifier");
    gen->add_option("--tau", gen_tau, "edge threshold in (0,1)");
    gen->add_option("--anchor", gen_anchor, "anchor: chain|star|fully-connected");
    gen->add_option("--seed", gen_seed, "init seed when no checkpoint is given")
        ->envname("CARD_SEED");
    gen->add_option("--out", gen_out, "write the probability matrix here");

    // train ------------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "train the generator on a simulated scenario");
    std::string tr_scenario = "mixed", tr_anchor = "fully-connected";
    std::string tr_aggregation = "select-last";
    std::string tr_checkpoint = "checkpoint.txt", tr_metrics = "metrics.csv";
    card::TrainConfig tr_cfg;
    int tr_eval_reps = 8;
    tr->add_option("--scenario", tr_scenario, "weak-model|strong-model|weak-tool|strong-tool|mixed");
    tr->add_option("--steps", tr_cfg.steps, "training steps");
    tr->add_option("--beta", tr_cfg.beta, "cost regularizer weight");
    tr->add_option("--lr", tr_cfg.lr, "learning rate");
    tr->add_option("--samples", tr_cfg.samples_per_step, "graph samples per pair");
    tr->add_option("--batch", tr_cfg.batch_size, "pairs per step");
    tr->add_option("--episodes", tr_cfg.episodes_per_sample, "episodes per sampled graph");
    tr->add_option("--tau", tr_cfg.tau, "edge threshold");
    tr->add_option("--k", tr_cfg.k_rounds, "message rounds");
    tr->add_option("--aggregation", tr_aggregation, "vote|select-last|concat-summary");
    tr->add_option("--anchor", tr_anchor, "anchor kind");
    tr->add_option("--seed", tr_cfg.seed, "training + init seed")->envname("CARD_SEED");
    tr->add_option("--eval-reps", tr_eval_reps, "episodes per pair in the before/after evaluation");
    tr->add_option("--checkpoint-out", tr_checkpoint, "checkpoint output path");
    tr->add_option("--metrics-out", tr_metrics, "metrics CSV output path");

    // adapt ------------------------------------------------------------------
    auto* ad = app.add_subcommand("adapt", "re-generate under changed conditions");
    std::string ad_checkpoint, ad_manifest, ad_query, ad_query_id = "query-0";
    std::string ad_anchor = "fully-connected";
    double ad_tau = 0.5;
    std::vector<std::string> ad_sets;
    ad->add_option("--checkpoint", ad_checkpoint, "generator checkpoint")->required();
    ad->add_option("--manifest", ad_manifest, "manifest file")->required();
    ad->add_option("--query", ad_query, "query text")->required();
    ad->add_option("--query-id", ad_query_id, "query identifier");
    ad->add_option("--tau", ad_tau, "edge threshold");
    ad->add_option("--anchor", ad_anchor, "anchor kind");
    ad->add_option("--set", ad_sets, "condition override key=value (repeatable)");

    // simulate ---------------------------------------------------------------
    auto* si = app.add_subcommand("simulate", "score a fixed topology on a scenario");
    std::string si_scenario = "mixed", si_topology, si_aggregation = "select-last";
    double si_tau = 0.5;
    int si_k = 1, si_episodes = 8;
    std::uint64_t si_seed = 0;
    si->add_option("--scenario", si_scenario, "scenario name");
    si->add_option("--topology", si_topology, "probability matrix file (empty graph if absent)");
    si->add_option("--tau", si_tau, "threshold for the topology file");
    si->add_option("--k", si_k, "message rounds");
    si->add_option("--aggregation", si_aggregation, "aggregation mode");
    si->add_option("--episodes", si_episodes, "episodes per task");
    si->add_option("--seed", si_seed, "episode seed")->envname("CARD_SEED");

    // report -----------------------------------------------------------------
    auto* re = app.add_subcommand("report", "compare saved probability matrices");
    std::vector<std::string> re_files;
    std::string re_selection = "off-diagonal";
    double re_tau = 0.5;
    bool re_machine = false;
    re->add_option("files", re_files, "matrix files (at least two)")->expected(2, -1);
    re->add_option("--tau", re_tau, "density threshold");
    re->add_option("--selection", re_selection, "off-diagonal|full-matrix|upper-no-first");
    re->add_flag("--machine", re_machine, "emit CSV instead of the text table");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed())
            return cmd_generate(gen_manifest, gen_checkpoint, gen_query, gen_query_id, gen_tau,
                                gen_anchor, gen_seed, gen_out);
        if (tr->parsed())
            return cmd_train(tr_scenario, tr_cfg, tr_anchor, tr_aggregation, tr_eval_reps,
                             tr_checkpoint, tr_metrics);
        if (ad->parsed())
            return cmd_adapt(ad_checkpoint, ad_manifest, ad_query, ad_query_id, ad_tau, ad_anchor,
                             ad_sets);
        if (si->parsed())
            return cmd_simulate(si_scenario, si_topology, si_tau, si_k, si_aggregation,
                                si_episodes, si_seed);
        if (re->parsed()) return cmd_report(re_files, re_tau, re_selection, re_machine);
    } catch (const card::ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return 2;
    } catch (const card::ValidationError& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return 3;
    } catch (const card::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
