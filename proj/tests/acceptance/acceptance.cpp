// Acceptance runner: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "beamplan/agents.hpp"
#include "beamplan/dqn.hpp"
#include "beamplan/dvh.hpp"
#include "beamplan/eval.hpp"
#include "beamplan/stats.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace beamplan;

namespace {

// Tolerances and budgets.
constexpr double kScoreTol = 1e-12;
constexpr double kAttenuationRelTol = 0.02;
constexpr double kRotationTol = 1e-6;
constexpr double kChordTol = 1e-9;
constexpr double kNormalisationRelTol = 1e-9;
constexpr double kTelescopeRelTol = 1e-9;
constexpr double kGradRelTol = 1e-3;
constexpr double kBetaTol = 1e-10;
constexpr double kAlpha = 0.05;

struct Outcome {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::shared_ptr<const Phantom> water_cube(int n, double spacing, double r_vox) {
  return std::make_shared<const Phantom>(testsupport::uniform_phantom({n, n, n}, spacing, r_vox));
}

// ---------------------------------------------------------------------------

Outcome reward_formula() {
  Outcome out;
  Phantom p;
  p.ct.geometry = testsupport::centred_grid({12, 1, 1}, {1, 1, 1});
  p.ct.hu.assign(12, 0.0f);
  Structure ptv{"prostate", StructureKind::ptv, std::vector<std::uint8_t>(12, 0), std::nullopt, 100.0};
  Structure rectum{"rectum", StructureKind::oar, std::vector<std::uint8_t>(12, 0), 50.0, std::nullopt};
  for (int i = 0; i < 10; ++i) ptv.mask[i] = 1;
  rectum.mask[11] = 1;
  p.structures = {ptv, rectum};
  const EnvConfig cfg;

  DoseGrid d = DoseGrid::zeros(p.geometry());
  for (int i = 0; i < 10; ++i) d.dose_gy[i] = 100.0;
  d.dose_gy[11] = 40.0;
  const double a = score_plan(d, p, cfg).total;
  out.require(std::abs(a - 10.0) <= kScoreTol, "10 voxels at prescription gave " + fmt("%.17g", a));

  d.dose_gy[11] = 55.0;
  const double b = score_plan(d, p, cfg).total;
  out.require(std::abs(b - 5.0) <= kScoreTol, "rectum at 55 Gy gave " + fmt("%.17g", b));

  d.dose_gy[11] = 0.0;
  d.dose_gy[0] = 99.0;
  const double c = score_plan(d, p, cfg).total - 9.0;
  out.require(std::abs(c - std::exp(-1.0)) <= kScoreTol, "99 Gy voxel term " + fmt("%.17g", c));
  if (out.ok) out.detail = "10, 5 and e^-1 reproduced";
  return out;
}

Outcome dose_physics() {
  Outcome out;
  {
    EngineConfig cfg;
    cfg.mu_water_per_mm = 0.02;
    cfg.penumbra_sigma_mm = 0.0;
    const int n = 33;
    const auto ph = water_cube(n, 2.0, 4.0);
    const DoseGrid d = compute_beam_dose(*ph, BeamSpec(0.0), cfg);
    const auto& g = ph->geometry();
    const int c = n / 2;
    const double ref = d.dose_gy[g.index(c, n - 2, c)];
    double worst = 0.0;
    for (int s = 1; s <= 10; ++s) {
      const int j = n - 2 - 3 * s;
      const double expect = std::exp(-cfg.mu_water_per_mm * 3.0 * s * 2.0);
      worst = std::max(worst, std::abs(d.dose_gy[g.index(c, j, c)] / ref / expect - 1.0));
    }
    out.require(worst <= kAttenuationRelTol, "attenuation error " + fmt("%.3g", worst));
    out.detail = "attenuation err " + fmt("%.2e", worst);
  }
  {
    EngineConfig cfg;
    cfg.ray_spacing_mm = 2.0 / 3.0;
    const auto ph = water_cube(21, 2.0, 4.0);
    const DoseEngine engine(ph, cfg);
    const auto& g = ph->geometry();
    double worst = 0.0;
    for (double theta : {0.0, 25.0, 90.0, 200.0, 333.0}) {
      const DoseGrid a = engine.beam_dose(BeamSpec(theta));
      const DoseGrid b = engine.beam_dose(BeamSpec(theta + 90.0));
      for (int k = 0; k < g.dims.z; ++k)
        for (int j = 0; j < g.dims.y; ++j)
          for (int i = 0; i < g.dims.x; ++i)
            worst = std::max(worst, std::abs(a.dose_gy[g.index(i, j, k)] - b.dose_gy[g.index(j, g.dims.x - 1 - i, k)]));
    }
    out.require(worst <= kRotationTol, "rotation mismatch " + fmt("%.3g", worst));
    out.detail += ", rotation err " + fmt("%.2e", worst);
  }
  {
    const auto g = testsupport::centred_grid({9, 7, 5}, {1.5, 2.0, 2.5});
    const Vec3 lo = g.box_min(), hi = g.box_max();
    std::mt19937_64 rng(1234);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double worst = 0.0;
    int rays = 0;
    while (rays < 1000) {
      const Vec3 start{u(rng) * 25.0, u(rng) * 25.0, u(rng) * 25.0};
      Vec3 dir{u(rng), u(rng), u(rng)};
      if (norm(dir) < 1e-3) continue;
      dir = (1.0 / norm(dir)) * dir;
      double total = 0.0;
      for (const auto& s : trace_ray(g, start, dir)) total += s.length_mm;
      const double p[3] = {start.x, start.y, start.z}, dd[3] = {dir.x, dir.y, dir.z};
      const double l[3] = {lo.x, lo.y, lo.z}, h[3] = {hi.x, hi.y, hi.z};
      const double chord = oracle::chord_length(p, dd, l, h);
      worst = std::max(worst, std::abs(total - chord) / std::max(1.0, chord));
      ++rays;
    }
    out.require(worst <= kChordTol, "chord mismatch " + fmt("%.3g", worst));
    out.detail += ", chord err " + fmt("%.2e", worst) + " over 1000 rays";
  }
  return out;
}

Outcome normalisation() {
  Outcome out;
  const Environment env(testsupport::standard_phantom(), EnvConfig{});
  std::mt19937_64 rng(77);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const Plan plan = random_plan(env.config(), rng);
    const auto scored = env.evaluate(plan);
    const double m = mean_over_mask(scored.dose.dose, env.phantom().ptv().mask);
    worst = std::max(worst, std::abs(m - 100.0) / 100.0);
    out.require(!scored.dose.degenerate, "degenerate plan");
  }
  out.require(worst <= kNormalisationRelTol, "PTV mean off by " + fmt("%.3g", worst));
  out.detail += "worst relative error " + fmt("%.2e", worst) + " over 50 plans";
  return out;
}

Outcome environment_algebra() {
  Outcome out;
  const Environment env(testsupport::standard_phantom(), EnvConfig{});
  std::mt19937_64 rng(2024);
  // biased towards repeats so the penalty rule is exercised often
  std::uniform_int_distribution<int> small(0, 5);
  std::uniform_int_distribution<int> coin(0, 9);
  double worst = 0.0;
  int penalties = 0;
  for (int seq = 0; seq < 100; ++seq) {
    auto s = env.reset(seq);
    const double reset_score = s.last_score;
    double ret = 0.0;
    int invalid = 0;
    while (!s.done) {
      const int c = coin(rng);
      const int action = c == 0 ? env.config().stop_action() : small(rng) * 3;
      const auto before = s;
      const bool dup = action != env.config().stop_action() &&
                       std::find(s.chosen_angles.begin(), s.chosen_angles.end(), env.config().bin_angle_deg(action)) !=
                           s.chosen_angles.end();
      const auto r = env.step(s, action);
      if (dup) {
        ++penalties;
        out.require(r.invalid && r.reward_delta == -1.0, "duplicate not penalised");
        out.require(r.state.chosen_angles == before.chosen_angles && r.state.dose == before.dose &&
                        r.state.last_score == before.last_score && r.state.steps_taken == before.steps_taken + 1,
                    "duplicate changed the plan");
      }
      ret += r.reward_delta;
      invalid += r.invalid ? 1 : 0;
      s = r.state;
    }
    const double expect = s.last_score - reset_score - invalid;
    worst = std::max(worst, std::abs(ret - expect) / std::max(1.0, std::abs(expect)));
  }
  out.require(worst <= kTelescopeRelTol, "telescoping off by " + fmt("%.3g", worst));
  out.require(penalties > 20, "too few duplicate actions sampled");
  out.detail = "telescoping rel err " + fmt("%.2e", worst) + ", " + std::to_string(penalties) + " duplicate penalties";
  return out;
}

Outcome dqn_machinery() {
  Outcome out;
  {
    QNetwork net({6, 6, 6}, 4, 17);
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<StateTensor> inputs(3, StateTensor{{6, 6, 6}, 2, std::vector<double>(2 * 216)});
    for (auto& t : inputs)
      for (auto& v : t.data) v = u(rng);
    QNetwork::Batch batch{{&inputs[0], &inputs[1], &inputs[2]}, {0, 3, 1}, {0.5, -0.2, 1.0}};
    std::vector<double> grad;
    net.loss_and_gradient(batch, grad);
    auto p = net.parameters();
    double worst = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double keep = p[i], h = 1e-5;
      p[i] = keep + h;
      const double up = net.loss(batch);
      p[i] = keep - h;
      const double down = net.loss(batch);
      p[i] = keep;
      const double num = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(num - grad[i]) / std::max(1e-6, std::abs(num) + std::abs(grad[i])));
    }
    out.require(worst < kGradRelTol, "gradient check " + fmt("%.3g", worst));
    out.detail = "grad rel err " + fmt("%.2e", worst);
  }
  {
    const std::vector<double> q{4.0, -2.0};
    out.require(td_target(-3.5, true, 0.99, q) == -3.5, "terminal TD target");
  }
  const Environment env(testsupport::standard_phantom(), EnvConfig{});
  {
    DqnHyperparams h;
    h.episodes = 20;
    const auto a = dqn_train(env, h);
    const auto b = dqn_train(env, h);
    bool same = a.net == b.net && a.episodes.size() == b.episodes.size();
    for (std::size_t e = 0; same && e < a.episodes.size(); ++e)
      same = a.episodes[e].episode_return == b.episodes[e].episode_return && a.episodes[e].angles == b.episodes[e].angles;
    out.require(same, "20-episode runs differ");
  }
  {
    const DqnHyperparams h;  // defaults: 300 episodes, seed 0
    const auto run = dqn_train(env, h);
    double first = 0.0, last = 0.0;
    const int n = static_cast<int>(run.episodes.size());
    for (int e = 0; e < 30; ++e) {
      first += run.episodes[e].episode_return / 30.0;
      last += run.episodes[n - 30 + e].episode_return / 30.0;
    }
    out.require(n == 300, "episode count");
    out.require(last > first, "no learning: last-30 " + fmt("%.1f", last) + " vs first-30 " + fmt("%.1f", first));
    out.detail += ", first-30 mean " + fmt("%.1f", first) + " -> last-30 mean " + fmt("%.1f", last);
  }
  return out;
}

Outcome text_to_plan_fidelity() {
  Outcome out;
  std::vector<std::string> replies;
  for (int i = 1; i <= 4; ++i)
    replies.push_back(testsupport::slurp(testsupport::fixture("scripted_replies/reply_" + std::to_string(i) + ".txt")));
  const std::vector<std::vector<double>> expected{{10, 50, 90, 130, 170, 210, 250, 290},
                                                  {30, 80, 130, 180, 230, 280, 330},
                                                  {30, 75, 120, 165, 210, 255, 300, 345},
                                                  {30, 60, 110, 150, 210, 250, 300, 340}};
  EnvConfig cfg;
  cfg.max_beams = 8;
  const Environment env(testsupport::standard_phantom(), cfg);
  ScriptedClient client(replies);
  TextToPlanOptions opts;
  opts.max_iterations = 4;
  const auto t = text_to_plan_run(env, client, opts, 0);
  out.require(t.complete && t.iterations.size() == 4, "transcript incomplete");
  for (std::size_t i = 0; i < t.iterations.size() && i < 4; ++i) {
    const auto& it = t.iterations[i];
    out.require(it.parsed_angles == expected[i], "iteration " + std::to_string(i + 1) + " angles differ");
    out.require(it.score.has_value() && it.images_sent.size() == 3 && it.parse_attempts == 1 && !it.truncated,
                "iteration " + std::to_string(i + 1) + " record malformed");
  }
  testsupport::TempDir dir("acc6");
  save_transcript(t, dir / "t.jsonl");
  out.require(load_transcript(dir / "t.jsonl") == t, "transcript round trip");

  std::mt19937_64 rng(6);
  int mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto angles = random_plan(cfg, rng).angles();
    const auto r = parse_angles(serialize_angles(angles), cfg.max_beams);
    mismatches += !(r.ok && r.angles == angles);
  }
  out.require(mismatches == 0, std::to_string(mismatches) + " parser round-trip mismatches");
  if (out.ok) out.detail = "4 plans match, transcript well-formed, 1000/1000 round trips";
  return out;
}

Outcome directional_ordering() {
  Outcome out;
  const Environment env(testsupport::standard_phantom(), EnvConfig{});
  ComparisonOptions opts;  // 30 trials, three methods, hill-climb mock
  opts.jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const auto res = run_comparison(env, opts);
  const auto& r = res.report;
  out.require(r.anova.has_value() && r.anova->df_between == 2 && r.anova->df_within == 87, "ANOVA dfs");
  const TrialSet* random = nullptr;
  const TrialSet* t2p = nullptr;
  for (const auto& s : res.trials) {
    if (s.method == Method::random) random = &s;
    if (s.method == Method::text_to_plan) t2p = &s;
  }
  if (!random || !t2p) {
    out.require(false, "missing method results");
    return out;
  }
  const double mr = stats::mean(random->rewards), mt = stats::mean(t2p->rewards);
  const auto tt = stats::two_sample_t(t2p->rewards, random->rewards);
  out.require(mt > mr, "text-to-plan mean not above random");
  out.require(tt.p < kAlpha, "t-test p = " + fmt("%.3g", tt.p));
  std::ostringstream s;
  s << "means";
  for (const auto& m : r.methods) s << " " << m.label << "=" << fmt("%.1f", m.mean);
  if (r.anova) s << ", F(" << r.anova->df_between << "," << r.anova->df_within << ")=" << fmt("%.2f", r.anova->f);
  s << ", t(text_to_plan vs random)=" << fmt("%.2f", tt.t) << " p=" << fmt("%.2g", tt.p);
  out.detail = s.str() + (out.ok ? "" : "; " + out.detail);
  return out;
}

Outcome statistics_oracles() {
  Outcome out;
  const auto a = stats::one_way_anova({{1, 2, 3}, {2, 3, 4}, {3, 4, 5}});
  out.require(std::abs(a.f - 3.0) <= 1e-12 && a.df_between == 2 && a.df_within == 6, "ANOVA fixture");
  const std::vector<double> x{1.0, 2.5, 3.0, 4.5, 2.0}, y{3.0, 4.0, 5.5, 6.0};
  const auto xy = stats::two_sample_t(x, y), yx = stats::two_sample_t(y, x);
  out.require(xy.t == -yx.t && xy.p == yx.p, "t antisymmetry");
  out.require(stats::two_sample_t(x, x).t == 0.0, "a == b gives t = 0");
  out.require(std::abs(xy.t - oracle::pooled_t(x, y)) <= 1e-12, "pooled t vs oracle");
  double worst = 0.0;
  for (double pa : {0.5, 1.0, 2.5, 10.0, 43.5})
    for (double pb : {0.5, 1.0, 3.0, 29.0})
      for (double px : {0.001, 0.05, 0.2, 0.5, 0.77, 0.95, 0.999})
        worst = std::max(worst, std::abs(stats::regularized_incomplete_beta(px, pa, pb) -
                                         static_cast<double>(oracle::incbeta_series(px, pa, pb))));
  out.require(worst <= kBetaTol, "incomplete beta err " + fmt("%.3g", worst));
  if (out.ok) out.detail = "F=3 df=(2,6), t antisymmetric, incbeta max err " + fmt("%.2e", worst);
  return out;
}

Outcome dvh_properties() {
  Outcome out;
  std::mt19937_64 rng(99);
  for (int grid = 0; grid < 20; ++grid) {
    std::uniform_int_distribution<int> side(2, 12);
    const Index3 dims{side(rng), side(rng), side(rng)};
    DoseGrid d = DoseGrid::zeros(testsupport::centred_grid(dims, {1, 1, 1}));
    std::vector<std::uint8_t> mask(d.dose_gy.size(), 0);
    std::uniform_real_distribution<double> u(0.0, 130.0);
    std::bernoulli_distribution in(0.6);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      d.dose_gy[i] = grid % 4 == 0 ? std::round(u(rng) / 10.0) * 10.0 : u(rng);
      mask[i] = in(rng);
    }
    mask[0] = 1;
    const auto c = dvh(d, mask, 120, 120.0);
    bool ok = c.volume_fraction.front() == 1.0;
    for (std::size_t k = 0; k < c.volume_fraction.size(); ++k) {
      ok = ok && c.volume_fraction[k] == oracle::dvh_fraction(d.dose_gy, mask, c.dose_edges_gy[k]);
      if (k > 0) ok = ok && c.volume_fraction[k] <= c.volume_fraction[k - 1];
    }
    out.require(ok, "grid " + std::to_string(grid) + " failed");
  }
  if (out.ok) out.detail = "20 random grids match the counting oracle exactly";
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(BEAMPLAN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome reproducibility() {
  Outcome out;
  testsupport::TempDir dir("acc10");
  const auto& ph = *testsupport::standard_phantom();
  save_phantom(ph, dir / "phantom");
  out.require(load_phantom(dir / "phantom") == ph, "phantom round trip");

  EnvConfig cfg;
  cfg.max_beams = 8;
  const Environment env(testsupport::standard_phantom(), cfg);
  HillClimbClient client(5);
  TextToPlanOptions topts;
  topts.max_iterations = 4;
  const auto t = text_to_plan_run(env, client, topts, 5);
  save_transcript(t, dir / "t.jsonl");
  out.require(load_transcript(dir / "t.jsonl") == t, "transcript round trip");

  std::ofstream(dir / "cfg.json") << R"({"eval": {"trials_per_method": 10, "seed": 11}, "dqn": {"episodes": 30}})";
  for (const char* run : {"run_a", "run_b"}) {
    const int rc = run_cli("--config " + (dir / "cfg.json").string() + " evaluate --jobs 2 --out " + (dir / run).string());
    out.require(rc == 0, std::string("evaluate ") + run + " exited " + std::to_string(rc));
  }
  const std::string a = testsupport::slurp(dir / "run_a" / "stats.json");
  const std::string b = testsupport::slurp(dir / "run_b" / "stats.json");
  out.require(!a.empty() && a == b, "stats.json differs between runs");
  if (out.ok) out.detail = "phantom and transcript bit-exact, stats.json identical (" + std::to_string(a.size()) + " bytes)";
  return out;
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "reward formula", 1.0, reward_formula},
      {2, "dose engine physics", 30.0, dose_physics},
      {3, "normalisation contract", 60.0, normalisation},
      {4, "environment algebra", 60.0, environment_algebra},
      {5, "DQN machinery", 1800.0, dqn_machinery},
      {6, "text-to-plan loop", 30.0, text_to_plan_fidelity},
      {7, "method ordering", 600.0, directional_ordering},
      {8, "statistics oracles", 5.0, statistics_oracles},
      {9, "DVH properties", 10.0, dvh_properties},
      {10, "reproducibility and IO", 120.0, reproducibility},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.ok = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_s) {
      o.ok = false;
      o.detail += "; over budget";
    }
    failed += o.ok ? 0 : 1;
    std::printf("criterion %2d %-26s %s  %.1fs/%.0fs  %s\n", c.id, c.name, o.ok ? "PASS" : "FAIL", secs, c.budget_s,
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed;
}
