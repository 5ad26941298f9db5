#include "tilp/scenarios.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "tilp/errors.hpp"

namespace tilp {

namespace {

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << std::fixed << v;
  return os.str();
}

}  // namespace

std::vector<ScenarioRow> scenario_few_samples(const DatasetSplit& data, const ExperimentConfig& config,
                                              std::span<const double> fractions, int rounds) {
  std::vector<ScenarioRow> rows;
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ContractViolation("few-samples fraction must be in (0, 1]");
    for (int k = 0; k < rounds; ++k) {
      ExperimentConfig cfg = config;
      cfg.seed = derive_seed(config.seed, "few/round" + std::to_string(k));
      cfg.training_fraction = f;
      rows.push_back({"fraction=" + fmt(f, 2), k, run_experiment(data, cfg).all});
    }
  }
  return rows;
}

std::vector<Quadruple> balanced_test_set(std::span<const Quadruple> test, std::uint64_t seed) {
  std::map<RelationId, std::vector<Quadruple>> by_rel;
  for (const auto& q : test) by_rel[q.relation].push_back(q);
  if (by_rel.empty()) return {};
  const std::size_t quota = test.size() / by_rel.size();
  std::mt19937_64 rng(seed);
  std::vector<Quadruple> out;
  for (auto& [r, list] : by_rel) {
    std::shuffle(list.begin(), list.end(), rng);
    const std::size_t keep = list.size() >= quota ? quota : list.size() / 2;
    out.insert(out.end(), list.begin(), list.begin() + static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, keep)));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<ScenarioRow> scenario_biased(const DatasetSplit& data, const ExperimentConfig& config,
                                         std::span<const RelationId> relations, int rounds) {
  std::vector<ScenarioRow> rows;
  const RelationId base = data.relations.size();
  for (int k = 0; k < rounds; ++k) {
    const auto round_tag = "biased/round" + std::to_string(k);
    ExperimentConfig cfg = config;
    cfg.seed = derive_seed(config.seed, round_tag);
    DatasetSplit balanced = data;
    balanced.test = balanced_test_set(data.test, derive_seed(config.seed, round_tag + "/balance"));
    const auto full = run_experiment(balanced, cfg);
    for (RelationId r : relations) {
      auto of_r = [&](const QueryRank& q) { return q.relation == r || q.relation == r + base; };
      const auto name = data.relations.name(r);
      rows.push_back({name + "/full", k, metrics_where(full, of_r)});

      DatasetSplit halved = balanced;
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < halved.train.size(); ++i)
        if (halved.train[i].relation == r) idx.push_back(i);
      std::mt19937_64 rng(derive_seed(config.seed, round_tag + "/halve/" + name));
      std::shuffle(idx.begin(), idx.end(), rng);
      std::vector<char> drop(halved.train.size(), 0);
      for (std::size_t i = 0; i < idx.size() / 2; ++i) drop[idx[i]] = 1;
      std::vector<Quadruple> kept;
      for (std::size_t i = 0; i < halved.train.size(); ++i)
        if (!drop[i]) kept.push_back(halved.train[i]);
      halved.train = std::move(kept);
      rows.push_back({name + "/halved", k, metrics_where(run_experiment(halved, cfg), of_r)});
    }
  }
  return rows;
}

std::vector<ScenarioRow> scenario_time_shift(const DatasetSplit& data, const ExperimentConfig& config, Year b1,
                                             Year b2) {
  std::vector<ScenarioRow> rows;
  rows.push_back({"standard", 0, run_experiment(data, config).all});
  rows.push_back({"shift(" + std::to_string(b1) + "," + std::to_string(b2) + ")", 0,
                  run_experiment(time_shift_resplit(data, b1, b2), config).all});
  return rows;
}

void write_scenario_csv(const std::filesystem::path& path, std::span<const ScenarioRow> rows,
                        const ExperimentConfig& config) {
  std::ofstream out(path);
  out << "# config_hash=" << config_hash(config) << " seed=" << config.seed << '\n';
  out << "setting,round,MRR,hit1,hit10\n";
  for (const auto& r : rows)
    out << r.setting << ',' << r.round << ',' << fmt(r.metrics.mrr, 6) << ',' << fmt(r.metrics.hit1, 6) << ','
        << fmt(r.metrics.hit10, 6) << '\n';
}

void write_scenario_svg(const std::filesystem::path& path, std::span<const ScenarioRow> rows,
                        const std::string& title) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> mrr;
  for (const auto& r : rows) {
    if (!mrr.contains(r.setting)) order.push_back(r.setting);
    mrr[r.setting].push_back(r.metrics.mrr);
  }
  const double bar = 48, gap = 24, left = 60, top = 40, height = 240;
  const double width = left + static_cast<double>(order.size()) * (bar + gap) + gap;
  std::ofstream out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << top + height + 90
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  out << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << title << "</text>\n";
  auto y_of = [&](double v) { return top + height * (1.0 - std::clamp(v, 0.0, 1.0)); };
  for (int t = 0; t <= 4; ++t) {
    const double v = t / 4.0;
    out << "<line x1=\"" << left << "\" x2=\"" << width << "\" y1=\"" << y_of(v) << "\" y2=\"" << y_of(v)
        << "\" stroke=\"#ddd\"/>\n";
    out << "<text x=\"" << left - 8 << "\" y=\"" << y_of(v) + 4 << "\" text-anchor=\"end\">" << fmt(v, 2)
        << "</text>\n";
  }
  out << "<text x=\"14\" y=\"" << top + height / 2 << "\" transform=\"rotate(-90 14 " << top + height / 2
      << ")\" text-anchor=\"middle\">MRR</text>\n";
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& v = mrr[order[i]];
    const double n = static_cast<double>(v.size());
    double mean = 0, var = 0;
    for (double x : v) mean += x / n;
    for (double x : v) var += (x - mean) * (x - mean) / n;
    const double sd = std::sqrt(var);
    const double x = left + gap + static_cast<double>(i) * (bar + gap);
    out << "<rect x=\"" << x << "\" y=\"" << y_of(mean) << "\" width=\"" << bar << "\" height=\""
        << top + height - y_of(mean) << "\" fill=\"#4c72b0\"/>\n";
    if (v.size() > 1)
      out << "<line x1=\"" << x + bar / 2 << "\" x2=\"" << x + bar / 2 << "\" y1=\"" << y_of(mean - sd)
          << "\" y2=\"" << y_of(mean + sd) << "\" stroke=\"#222\" stroke-width=\"1.5\"/>\n";
    out << "<text x=\"" << x + bar / 2 << "\" y=\"" << y_of(mean) - 4 << "\" text-anchor=\"middle\">"
        << fmt(mean, 3) << "</text>\n";
    out << "<text x=\"" << x + bar / 2 << "\" y=\"" << top + height + 14 << "\" text-anchor=\"end\" transform=\"rotate(-35 "
        << x + bar / 2 << ' ' << top + height + 14 << ")\">" << order[i] << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace tilp
