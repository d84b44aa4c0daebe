#include "beamplan/eval.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "beamplan/raw_io.hpp"

namespace beamplan {

std::string method_name(Method m) {
  switch (m) {
    case Method::random: return "random";
    case Method::dqn: return "dqn";
    case Method::text_to_plan: return "text_to_plan";
  }
  return "random";
}

std::optional<Method> parse_method(const std::string& name) {
  if (name == "random") return Method::random;
  if (name == "dqn" || name == "rl") return Method::dqn;
  if (name == "text_to_plan" || name == "text2plan") return Method::text_to_plan;
  return std::nullopt;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Runs body(i) for i in [0, n) on up to `jobs` threads.
void parallel_for(int n, int jobs, const std::function<void(int)>& body) {
  if (jobs <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min(jobs, n); ++w)
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

std::uint64_t trial_seed(std::uint64_t base, Method method, int trial) {
  return splitmix64(splitmix64(base ^ (static_cast<std::uint64_t>(method) + 1) * 0xd1b54a32d192ed03ULL) +
                    static_cast<std::uint64_t>(trial));
}

nlohmann::json StatsReport::to_json() const {
  nlohmann::json j;
  j["note"] =
      "trials_per_method is configurable. The default of 30 gives ANOVA df (2, 87) for three methods and pairwise "
      "df 58; larger batches such as 100 plans per method are a flag away.";
  j["trials_per_method"] = trials_per_method;
  j["methods"] = nlohmann::json::array();
  for (const auto& m : methods) j["methods"].push_back({{"method", m.label}, {"n", m.n}, {"mean", m.mean}, {"sd", m.sd}});
  if (anova) {
    j["anova"] = {{"F", anova->f},
                  {"df_between", anova->df_between},
                  {"df_within", anova->df_within},
                  {"p", anova->p},
                  {"flagged", anova->flagged}};
  } else {
    j["anova"] = nullptr;
  }
  j["pairwise"] = nlohmann::json::array();
  for (const auto& p : pairwise)
    j["pairwise"].push_back({{"pair", {p.a, p.b}}, {"t", p.t.t}, {"df", p.t.df}, {"p", p.t.p}, {"flagged", p.t.flagged}});
  j["notices"] = notices;
  return j;
}

StatsReport make_report(const std::vector<TrialSet>& sets, int trials_per_method) {
  StatsReport r;
  r.trials_per_method = trials_per_method;
  std::vector<std::vector<double>> groups;
  for (const auto& s : sets) {
    if (s.rewards.size() < 2) {
      r.notices.push_back(s.label + ": fewer than two trials, left out of the statistics");
      continue;
    }
    r.methods.push_back({s.label, static_cast<int>(s.rewards.size()), stats::mean(s.rewards),
                         std::sqrt(stats::variance(s.rewards))});
    groups.push_back(s.rewards);
  }
  if (groups.size() >= 2) r.anova = stats::one_way_anova(groups);
  for (std::size_t i = 0; i < groups.size(); ++i)
    for (std::size_t k = i + 1; k < groups.size(); ++k)
      r.pairwise.push_back({r.methods[i].label, r.methods[k].label, stats::two_sample_t(groups[i], groups[k])});
  return r;
}

ComparisonResult run_comparison(const Environment& env, const ComparisonOptions& options) {
  if (options.trials_per_method < 2) throw std::invalid_argument("run_comparison: trials_per_method must be >= 2");
  if (options.methods.empty()) throw std::invalid_argument("run_comparison: no methods");
  const int n = options.trials_per_method;
  const EnvConfig& cfg = env.config();
  ComparisonResult result;
  std::vector<std::string> notices;
  std::map<std::string, int> seen;

  for (const Method method : options.methods) {
    TrialSet set;
    set.method = method;
    set.label = method_name(method);
    if (const int k = ++seen[set.label]; k > 1) set.label += "_" + std::to_string(k);
    std::vector<double> rewards(n);
    std::vector<Plan> plans(n);
    std::vector<std::uint64_t> seeds(n);
    std::vector<bool> ok(n, true);
    for (int i = 0; i < n; ++i) seeds[i] = trial_seed(options.seed, method, i);

    if (method == Method::random) {
      parallel_for(n, options.jobs, [&](int i) {
        std::mt19937_64 rng(seeds[i]);
        plans[i] = random_plan(cfg, rng);
        rewards[i] = env.evaluate(plans[i]).reward.total;
      });
    } else if (method == Method::dqn) {
      if (result.dqn_training.empty()) result.dqn_training.push_back(dqn_train(env, options.dqn));
      const QNetwork& net = result.dqn_training.front().net;
      parallel_for(n, options.jobs, [&](int i) {
        const auto roll = dqn_rollout(env, net, options.dqn_eval_epsilon, seeds[i]);
        plans[i] = roll.plan;
        rewards[i] = roll.final_score;
      });
    } else {
      ClientFactory factory = options.client_factory;
      if (!factory)
        factory = [beams = options.hillclimb_beams](std::uint64_t s) -> std::unique_ptr<ChatClient> {
          return std::make_unique<HillClimbClient>(s, beams);
        };
      std::vector<AgentTranscript> transcripts(n);
      try {
        factory(seeds[0]);
      } catch (const LlmError& e) {
        notices.push_back(set.label + " skipped: " + e.what());
        continue;
      }
      parallel_for(n, options.jobs, [&](int i) {
        auto client = factory(seeds[i]);
        TextToPlanOptions topts = options.text_to_plan;
        topts.image_dir.clear();
        transcripts[i] = text_to_plan_run(env, *client, topts, seeds[i]);
        if (transcripts[i].best_plan) {
          plans[i] = Plan::from_angles(*transcripts[i].best_plan);
          rewards[i] = *transcripts[i].best_score;
        } else {
          ok[i] = false;
        }
      });
      if (options.keep_transcripts) result.transcripts[set.label] = transcripts;
    }

    for (int i = 0; i < n; ++i) {
      if (!ok[i]) {
        notices.push_back(set.label + " trial " + std::to_string(i) + " produced no valid plan");
        continue;
      }
      set.rewards.push_back(rewards[i]);
      set.plans.push_back(plans[i]);
      set.seeds.push_back(seeds[i]);
    }
    result.trials.push_back(std::move(set));
  }

  result.report = make_report(result.trials, n);
  result.report.notices.insert(result.report.notices.begin(), notices.begin(), notices.end());

  const double dvh_max = options.dvh_max_dose_factor * cfg.prescription_gy;
  for (const auto& set : result.trials) {
    if (set.rewards.empty()) continue;
    std::size_t best = 0;
    for (std::size_t i = 1; i < set.rewards.size(); ++i)
      if (set.rewards[i] > set.rewards[best]) best = i;
    const auto scored = env.evaluate(set.plans[best]);
    BestPlan bp{set.label, set.plans[best], scored.reward.total, scored.dose.dose, {}};
    for (const auto& s : env.phantom().structures)
      bp.dvhs.push_back(dvh(bp.dose, s.mask, options.dvh_bins, dvh_max, s.name));
    result.best.push_back(std::move(bp));
  }
  return result;
}

void write_dvh_csv(const DvhCurve& curve, const std::filesystem::path& path) {
  std::string csv = "edge_gy,volume_fraction\n";
  for (std::size_t k = 0; k < curve.dose_edges_gy.size(); ++k)
    csv += fmt(curve.dose_edges_gy[k]) + "," + fmt(curve.volume_fraction[k]) + "\n";
  rawio::write_text(path, csv);
}

void write_comparison(const ComparisonResult& result, const Environment& env, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& set : result.trials) {
    std::string csv = "trial,seed,reward,angles\n";
    for (std::size_t i = 0; i < set.rewards.size(); ++i) {
      std::string angles;
      for (double a : set.plans[i].angles()) angles += (angles.empty() ? "" : ";") + fmt(a);
      csv += std::to_string(i) + "," + std::to_string(set.seeds[i]) + "," + fmt(set.rewards[i]) + "," + angles + "\n";
    }
    rawio::write_text(dir / ("rewards_" + set.label + ".csv"), csv);
  }
  for (const auto& bp : result.best) {
    for (const auto& curve : bp.dvhs) write_dvh_csv(curve, dir / ("dvh_" + bp.label + "_" + curve.structure_name + ".csv"));
    const auto angles = bp.plan.angles();
    save_dose(bp.dose, env.config().prescription_gy, angles, dir / ("dose_" + bp.label + "_best"));
  }
  for (const auto& train : result.dqn_training) {
    std::string csv = "episode,return,final_score,steps,epsilon,angles\n";
    for (std::size_t e = 0; e < train.episodes.size(); ++e) {
      const auto& log = train.episodes[e];
      std::string angles;
      for (double a : log.angles) angles += (angles.empty() ? "" : ";") + fmt(a);
      csv += std::to_string(e) + "," + fmt(log.episode_return) + "," + fmt(log.final_score) + "," +
             std::to_string(log.steps) + "," + fmt(log.epsilon) + "," + angles + "\n";
    }
    rawio::write_text(dir / "dqn_training.csv", csv);
  }
  for (const auto& [label, transcripts] : result.transcripts)
    for (std::size_t i = 0; i < transcripts.size(); ++i)
      save_transcript(transcripts[i], dir / "transcripts" / (label + "_trial" + std::to_string(i) + ".jsonl"));
  rawio::write_json(dir / "stats.json", result.report.to_json());
}

}  // namespace beamplan
