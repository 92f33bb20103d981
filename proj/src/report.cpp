#include "ulee/report.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <sstream>

namespace ulee::report {

using nlohmann::json;

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string group_key(const json& r, const std::string& actor) {
  return r.value("protocol", "") + "|" + std::to_string(r.value("seed", std::uint64_t{0})) + "|" +
         std::to_string(r.value("eval_point", -1)) + "|" + actor;
}

struct Recomputed {
  std::vector<double> reached, mean_return;
  double mean = 0, p40 = 0, p20 = 0;
};

Recomputed recompute(const std::vector<json>& tasks) {
  Recomputed out;
  if (tasks.empty()) return out;
  const std::size_t episodes = tasks.front()["returns"].size();
  out.reached.assign(episodes, 0.0);
  out.mean_return.assign(episodes, 0.0);
  std::vector<double> scores;
  for (const auto& t : tasks) {
    const auto returns = t["returns"].get<std::vector<double>>();
    const auto successes = t["successes"].get<std::vector<int>>();
    int first = -1;
    for (std::size_t j = 0; j < successes.size(); ++j)
      if (successes[j] && first < 0) first = static_cast<int>(j);
    for (std::size_t j = 0; j < episodes; ++j) {
      out.reached[j] += (first >= 0 && static_cast<std::size_t>(first) <= j) ? 1.0 : 0.0;
      out.mean_return[j] += returns.at(j);
    }
    scores.push_back(t["score"].get<double>());
  }
  const double n = static_cast<double>(tasks.size());
  for (auto& v : out.reached) v /= n;
  for (auto& v : out.mean_return) v /= n;
  double sum = 0;
  for (double s : scores) sum += s;
  out.mean = sum / n;
  std::sort(scores.begin(), scores.end());
  auto rank = [&](double p) {
    std::size_t k = static_cast<std::size_t>(std::ceil(p * static_cast<double>(scores.size()) / 100.0));
    return scores[std::max<std::size_t>(k, 1) - 1];
  };
  out.p40 = rank(40);
  out.p20 = rank(20);
  return out;
}

bool close(double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)); }

bool close(const std::vector<double>& a, const json& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!close(a[i], b[i].get<double>())) return false;
  return true;
}

}  // namespace

Tables build_tables(std::istream& in) {
  Tables t;
  std::map<std::string, std::vector<json>> tasks;
  std::vector<json> summaries, batches, ppo;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json r;
    try {
      r = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("line " + std::to_string(lineno) + ": " + e.what());
    }
    const std::string type = r.value("type", "");
    if (type == "task")
      tasks[group_key(r, r.value("actor", ""))].push_back(std::move(r));
    else if (type == "eval")
      summaries.push_back(std::move(r));
    else if (type == "batch")
      batches.push_back(std::move(r));
    else if (type == "ppo")
      ppo.push_back(std::move(r));
  }

  std::ostringstream curve, pct;
  curve << "protocol,seed,eval_point,steps,episode,policy_reached,random_reached,policy_mean_return,random_mean_return\n";
  pct << "protocol,seed,eval_point,steps,actor,mean,p40,p20\n";
  for (const auto& s : summaries) {
    const auto& pol = s["policy"];
    const auto& rnd = s["random"];
    const std::string head = s.value("protocol", "") + "," + std::to_string(s.value("seed", std::uint64_t{0})) + "," +
                             std::to_string(s.value("eval_point", -1)) + "," + std::to_string(s.value("steps", 0L));
    const std::size_t episodes = pol["reached"].size();
    for (std::size_t j = 0; j < episodes; ++j) {
      auto at = [&](const json& c, const char* k) {
        return c.contains(k) && c[k].size() > j ? fmt(c[k][j].get<double>()) : std::string();
      };
      curve << head << "," << j + 1 << "," << at(pol, "reached") << "," << at(rnd, "reached") << ","
            << at(pol, "mean_return") << "," << at(rnd, "mean_return") << "\n";
    }
    for (const char* actor : {"policy", "random"}) {
      const auto& c = s[actor];
      pct << head << "," << actor << "," << fmt(c["mean"].get<double>()) << "," << fmt(c["p40"].get<double>()) << ","
          << fmt(c["p20"].get<double>()) << "\n";
      const auto it = tasks.find(group_key(s, actor));
      if (it == tasks.end()) {
        if (!c["reached"].empty()) t.mismatches.push_back(group_key(s, actor) + ": no task records");
        continue;
      }
      ++t.summaries_checked;
      const auto re = recompute(it->second);
      if (!close(re.reached, c["reached"]) || !close(re.mean_return, c["mean_return"]) ||
          !close(re.mean, c["mean"].get<double>()) || !close(re.p40, c["p40"].get<double>()) ||
          !close(re.p20, c["p20"].get<double>()))
        t.mismatches.push_back(group_key(s, actor) + ": aggregates differ from task records");
    }
  }
  t.csv["eval_curves.csv"] = curve.str();
  t.csv["eval_percentiles.csv"] = pct.str();

  std::ostringstream bt;
  bt << "batch,variant,pretrain_steps,goal_search_steps,sed_extra_steps,fallback_fraction,mean_predicted_difficulty,"
        "mean_difficulty,success_rate,predictor_loss\n";
  for (const auto& b : batches) {
    const auto& l = b["ledger"];
    bt << b.value("batch", 0L) << "," << b.value("variant", "") << "," << l.value("pretrain", 0L) << ","
       << l.value("goal_search", 0L) << "," << l.value("sed_extra", 0L) << "," << fmt(b.value("fallback_fraction", 0.0))
       << "," << fmt(b.value("mean_predicted_difficulty", 0.0)) << "," << fmt(b.value("mean_difficulty", 0.0)) << ","
       << fmt(b.value("success_rate", 0.0)) << "," << fmt(b.value("predictor_loss", 0.0)) << "\n";
  }
  t.csv["pretrain_batches.csv"] = bt.str();

  std::ostringstream pt;
  pt << "role,batch,update,steps,policy_loss,value_loss,entropy,approx_kl\n";
  for (const auto& p : ppo) {
    pt << p.value("role", "policy") << "," << p.value("batch", -1L) << "," << p.value("update", -1L) << ","
       << (p.contains("pretrain_steps") ? p["pretrain_steps"].get<long>() : p.value("steps", 0L)) << ","
       << fmt(p.value("policy_loss", 0.0)) << "," << fmt(p.value("value_loss", 0.0)) << ","
       << fmt(p.value("entropy", 0.0)) << "," << fmt(p.value("approx_kl", 0.0)) << "\n";
  }
  t.csv["ppo_updates.csv"] = pt.str();
  return t;
}

}  // namespace ulee::report
