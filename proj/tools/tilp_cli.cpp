// tilp: batch front end for rule learning, evaluation and the hard-setting scenarios.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tilp/dataset.hpp"
#include "tilp/errors.hpp"
#include "tilp/pipeline.hpp"
#include "tilp/scenarios.hpp"

namespace fs = std::filesystem;
using namespace tilp;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kParse = 2, kContract = 3, kDivergence = 4 };

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::optional<int> max_rule_len;
  std::optional<std::string> output;
  std::optional<std::string> dataset;
  std::optional<std::string> data_dir;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "experiment config (JSON)");
  cmd->add_option("--seed", o.seed, "root seed");
  cmd->add_option("--workers", o.workers, "worker threads");
  cmd->add_option("--max-rule-len", o.max_rule_len, "maximum rule length");
  cmd->add_option("--output", o.output, "parent directory for run outputs");
  cmd->add_option("--dataset", o.dataset, "dataset name (\"planted\" generates a synthetic graph)");
  cmd->add_option("--data-dir", o.data_dir, "directory holding train.txt, valid.txt and test.txt");
}

ExperimentConfig resolve_config(const CommonOptions& o, std::optional<ExperimentConfig> base = {}) {
  ExperimentConfig c = base ? *base : ExperimentConfig{};
  if (!o.config_path.empty()) c = load_config(o.config_path);
  if (o.dataset) c.dataset = *o.dataset;
  if (o.data_dir) {
    const fs::path d = *o.data_dir;
    c.train_path = d / "train.txt";
    c.valid_path = d / "valid.txt";
    c.test_path = d / "test.txt";
  }
  if (o.seed) c.seed = *o.seed;
  if (o.workers) c.workers = *o.workers;
  if (o.max_rule_len) {
    if (*o.max_rule_len < 1) throw ParseError("--max-rule-len must be at least 1");
    c.max_rule_length = *o.max_rule_len;
  }
  if (o.output) c.output = *o.output;
  if (c.dataset.empty() && c.train_path.empty())
    throw ParseError("no dataset: pass --config, --dataset or --data-dir");
  return c;
}

fs::path make_run_dir(const ExperimentConfig& c, const std::string& command) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  fs::path dir = c.output / (command + "-" + stamp);
  for (int k = 1; fs::exists(dir); ++k) dir = c.output / (command + "-" + stamp + "-" + std::to_string(k));
  fs::create_directories(dir);
  auto j = to_json(c);
  j["config_hash"] = config_hash(c);
  std::ofstream(dir / "config.json") << j.dump(2) << '\n';
  return dir;
}

void write_json(const fs::path& path, nlohmann::json j, const ExperimentConfig& c) {
  j["config_hash"] = config_hash(c);
  j["seed"] = c.seed;
  std::ofstream(path) << j.dump(2) << '\n';
}

nlohmann::json metrics_json(const Metrics& m) {
  return {{"mrr", m.mrr}, {"hit1", m.hit1}, {"hit10", m.hit10}, {"queries", m.count}};
}

std::string dataset_label(const ExperimentConfig& c) {
  return c.dataset.empty() ? c.train_path.parent_path().filename().string() : c.dataset;
}

// ---- subcommands ------------------------------------------------------------

int cmd_prepare(const ExperimentConfig& c) {
  const auto data = load_experiment_data(c);
  const auto dir = make_run_dir(c, "prepare");
  const auto train = data.train_graph();
  save_snapshot(dir / "snapshot.json", train, data.entities, data.relations);
  auto meta = metadata_json(data);
  const auto issues = validate_against_reference(dataset_label(c), data);
  meta["reference_mismatches"] = issues;
  meta["stored_train_facts"] = train.size();
  meta["duplicates_removed"] = train.duplicates_removed();
  write_json(dir / "metadata.json", meta, c);

  std::cout << "entities " << data.entities.size() << ", base relations " << data.relations.size() << '\n'
            << "train/valid/test " << data.train.size() << '/' << data.valid.size() << '/' << data.test.size()
            << " (" << train.size() << " stored train facts with inverses)\n";
  for (const auto& m : issues) std::cout << "reference mismatch: " << m << '\n';
  std::cout << "run directory: " << dir.string() << '\n';
  return kOk;
}

int cmd_learn(const ExperimentConfig& c) {
  const auto data = load_experiment_data(c);
  const auto dir = make_run_dir(c, "learn");
  LearnReport report;
  LearnHooks hooks;
  hooks.log = [](const std::string& msg) { std::cerr << "[learn] " << msg << '\n'; };
  const auto model = learn(data, c, &report, hooks);
  save_checkpoint(dir, c, model, data.relations);
  write_loss_csv(dir / "phase1_loss.csv", report.phase1_loss, c);
  write_loss_csv(dir / "phase2_loss.csv", report.phase2_loss, c);
  write_json(dir / "learn_report.json",
             {{"rules", report.rules},
              {"discovery_seconds", report.discovery_seconds},
              {"discovery_paths", report.discovery.paths},
              {"discovery_truncated_examples", report.discovery.truncated_examples},
              {"rules_dropped_by_cap", report.discovery.dropped_rules},
              {"phase1_examples", report.phase1_examples},
              {"phase1_skipped", report.phase1_skipped},
              {"phase2_examples", report.phase2_examples},
              {"gamma_tlr", model.weights.gamma_tlr()},
              {"gamma_tfm", model.weights.gamma_tfm()}},
             c);
  std::cout << "rules " << report.rules << ", phase-1 examples " << report.phase1_examples << " ("
            << report.phase1_skipped << " skipped)\n"
            << "checkpoint: " << (dir / "checkpoint.json").string() << '\n';
  return kOk;
}

int cmd_eval(const ExperimentConfig& c, const Checkpoint& ck, const std::string& split) {
  const auto data = load_experiment_data(c);
  const auto dir = make_run_dir(c, "eval");
  const auto rg = resolve_graphs(data, c.seed);
  const auto imputer = make_imputer(rg.durations, data, c.seed);
  const auto& facts = split == "valid" ? data.valid : data.test;
  const auto queries = evaluation_queries(facts, imputer, data.relations.size());

  std::ofstream rankings(dir / "rankings.jsonl");
  rankings << nlohmann::json{{"meta", {{"config_hash", config_hash(c)}, {"seed", c.seed}, {"split", split}}}}.dump()
           << '\n';
  const auto report = evaluate(rg.train, rg.known, ck.model, queries, scoring_options(c), c.workers,
                               [&](const ScoredQuery& sq, const QueryRank& qr) {
                                 rankings << ranking_json(rg.train, ck.model, sq, qr.rank, data.entities,
                                                          data.relations)
                                                 .dump()
                                          << '\n';
                               });
  write_json(dir / "metrics.json",
             {{"split", split},
              {"all", metrics_json(report.all)},
              {"object", metrics_json(report.object)},
              {"subject", metrics_json(report.subject)},
              {"unfiltered", metrics_json(report.raw)}},
             c);
  std::cout.precision(4);
  std::cout << std::fixed << split << ": MRR " << report.all.mrr << "  hit@1 " << report.all.hit1 << "  hit@10 "
            << report.all.hit10 << "  (" << report.all.count << " queries)\n"
            << "run directory: " << dir.string() << '\n';
  return kOk;
}

struct ExplainQuery {
  std::string subject, relation, answer;
  Year start = 0;
  std::optional<Year> end;
};

int cmd_explain(const ExperimentConfig& c, const Checkpoint& ck, const ExplainQuery& eq, std::size_t top) {
  const auto data = load_experiment_data(c);
  const auto dir = make_run_dir(c, "explain");
  const auto rg = resolve_graphs(data, c.seed);

  const auto subject = data.entities.find(eq.subject);
  if (!subject) throw ParseError("unknown entity '" + eq.subject + "'");
  std::string rel = eq.relation;
  bool inverse = false;
  if (rel.size() > 3 && rel.ends_with("^-1")) {
    rel.resize(rel.size() - 3);
    inverse = true;
  }
  const auto relation = data.relations.find(rel);
  if (!relation) throw ParseError("unknown relation '" + eq.relation + "'");
  Query q;
  q.subject = *subject;
  q.relation = *relation + (inverse ? data.relations.size() : 0);
  q.interval = {eq.start, eq.end.value_or(eq.start)};
  if (q.interval.end < q.interval.start) throw ParseError("query interval ends before it starts");
  if (!eq.answer.empty()) {
    const auto a = data.entities.find(eq.answer);
    if (!a) throw ParseError("unknown entity '" + eq.answer + "'");
    q.answer = *a;
  }

  const auto sq = score_query(rg.train, ck.model, q, scoring_options(c));
  std::optional<double> rank;
  if (q.answer) {
    const auto mask = time_aware_mask(rg.known, q);
    rank = rank_of_truth(sq.dense(rg.train.num_entities()), *q.answer, &mask);
  }
  auto doc = ranking_json(rg.train, ck.model, sq, rank, data.entities, data.relations, top);
  write_json(dir / "explanation.json", doc, c);

  std::cout << "Query: (" << eq.subject << ", " << eq.relation << ", ?, " << to_string(q.interval) << ")\n";
  std::size_t i = 0;
  for (const auto& cand : doc["candidates"]) {
    std::cout << ++i << ". " << cand["entity"].get<std::string>() << "  score " << cand["score"].get<double>()
              << '\n';
    for (const auto& e : cand["explanations"]) {
      std::cout << "   Rule: " << e["rule"].get<std::string>() << "\n";
      if (e.contains("grounding")) std::cout << "   Grounding: " << e["grounding"].get<std::string>() << "\n";
    }
  }
  if (rank) std::cout << "rank of " << eq.answer << ": " << *rank << '\n';
  std::cout << "run directory: " << dir.string() << '\n';
  return kOk;
}

int cmd_scenario(ExperimentConfig c, const std::string& which) {
  const auto data = load_experiment_data(c);
  const auto dir = make_run_dir(c, "scenario-" + which);
  std::vector<ScenarioRow> rows;
  std::string title;
  if (which == "few") {
    rows = scenario_few_samples(data, c, c.scenario.fractions, c.scenario.rounds);
    title = "Few training samples: " + dataset_label(c);
  } else if (which == "biased") {
    std::vector<RelationId> rels;
    if (c.scenario.relations.empty()) {
      for (RelationId r = 0; r < data.relations.size(); ++r) rels.push_back(r);
    } else {
      for (const auto& name : c.scenario.relations) {
        const auto r = data.relations.find(name);
        if (!r) throw ParseError("scenario relation '" + name + "' not in the dataset");
        rels.push_back(*r);
      }
    }
    rows = scenario_biased(data, c, rels, c.scenario.rounds);
    title = "Biased data: " + dataset_label(c);
  } else {
    std::pair<Year, Year> b;
    if (c.scenario.boundaries) {
      b = *c.scenario.boundaries;
    } else if (dataset_label(c) == "WIKIDATA12k") {
      b = {2008, 2012};
    } else if (dataset_label(c) == "YAGO11k") {
      b = {2006, 2011};
    } else {
      throw ParseError("time-shift scenario needs scenario.boundaries in the config");
    }
    rows = scenario_time_shift(data, c, b.first, b.second);
    title = "Time shifting: " + dataset_label(c);
  }
  write_scenario_csv(dir / "report.csv", rows, c);
  write_scenario_svg(dir / "report.svg", rows, title);
  std::cout << "setting,round,MRR,hit1,hit10\n";
  std::cout.precision(4);
  for (const auto& r : rows)
    std::cout << std::fixed << r.setting << ',' << r.round << ',' << r.metrics.mrr << ',' << r.metrics.hit1 << ','
              << r.metrics.hit10 << '\n';
  std::cout << "run directory: " << dir.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal logical rule learning and link prediction over interval knowledge graphs"};
  app.require_subcommand(1);

  CommonOptions prep_o, learn_o, eval_o, explain_o, scen_o;
  auto* prepare = app.add_subcommand("prepare", "load, validate and snapshot a dataset");
  add_common(prepare, prep_o);
  auto* learn_cmd = app.add_subcommand("learn", "discover rules and train both phases");
  add_common(learn_cmd, learn_o);

  auto* eval = app.add_subcommand("eval", "rank object and subject queries of a split");
  add_common(eval, eval_o);
  std::string eval_ckpt, split = "test";
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint.json or its directory")->required();
  eval->add_option("--split", split, "valid or test")->check(CLI::IsMember({"valid", "test"}));

  auto* explain = app.add_subcommand("explain", "rank candidates for one query with rule groundings");
  add_common(explain, explain_o);
  std::string explain_ckpt;
  ExplainQuery eq;
  std::size_t top = 5;
  explain->add_option("--checkpoint", explain_ckpt, "checkpoint.json or its directory")->required();
  explain->add_option("--subject", eq.subject, "known entity")->required();
  explain->add_option("--relation", eq.relation, "query relation (suffix ^-1 for subject prediction)")->required();
  explain->add_option("--start", eq.start, "query start year")->required();
  explain->add_option("--end", eq.end, "query end year (defaults to start)");
  explain->add_option("--answer", eq.answer, "expected answer, to report its rank");
  explain->add_option("--top", top, "candidates to show");

  auto* scenario = app.add_subcommand("scenario", "few-samples, biased-data or time-shift protocol");
  add_common(scenario, scen_o);
  std::string which;
  scenario->add_option("which", which, "few | biased | shift")->required()->check(CLI::IsMember({"few", "biased", "shift"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kParse;
  }

  try {
    if (*prepare) return cmd_prepare(resolve_config(prep_o));
    if (*learn_cmd) return cmd_learn(resolve_config(learn_o));
    if (*eval) {
      const auto ck = load_checkpoint(eval_ckpt);
      return cmd_eval(resolve_config(eval_o, ck.config), ck, split);
    }
    if (*explain) {
      const auto ck = load_checkpoint(explain_ckpt);
      return cmd_explain(resolve_config(explain_o, ck.config), ck, eq, top);
    }
    if (*scenario) return cmd_scenario(resolve_config(scen_o), which);
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kParse;
  } catch (const ContractViolation& e) {
    std::cerr << "contract violation: " << e.what() << '\n';
    return kContract;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
  return kOther;
}
