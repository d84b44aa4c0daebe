// beamplan command-line entry point.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "beamplan/agents.hpp"
#include "beamplan/config.hpp"
#include "beamplan/dose_engine.hpp"
#include "beamplan/dqn.hpp"
#include "beamplan/dvh.hpp"
#include "beamplan/eval.hpp"
#include "beamplan/phantom.hpp"
#include "beamplan/raw_io.hpp"

namespace fs = std::filesystem;
using namespace beamplan;

namespace {

template <class T>
std::vector<T> split_list(const std::string& text, const std::string& flag) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if constexpr (std::is_same_v<T, std::string>) {
      out.push_back(item);
    } else {
      std::size_t used = 0;
      T v{};
      try {
        if constexpr (std::is_integral_v<T>) v = static_cast<T>(std::stoll(item, &used));
        else v = static_cast<T>(std::stod(item, &used));
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != item.size()) throw CLI::ValidationError(flag, "'" + item + "' is not a number");
      out.push_back(v);
    }
  }
  return out;
}

Index3 parse_index3(const std::string& text, const std::string& flag) {
  const auto v = split_list<int>(text, flag);
  if (v.size() != 3) throw CLI::ValidationError(flag, "expected three comma-separated integers");
  return {v[0], v[1], v[2]};
}

Vec3 parse_vec3(const std::string& text, const std::string& flag) {
  const auto v = split_list<double>(text, flag);
  if (v.size() != 3) throw CLI::ValidationError(flag, "expected three comma-separated numbers");
  return {v[0], v[1], v[2]};
}

std::shared_ptr<const Phantom> make_phantom(const RunConfig& cfg) {
  if (!cfg.phantom.path.empty()) return std::make_shared<const Phantom>(load_phantom(cfg.phantom.path));
  return std::make_shared<const Phantom>(
      generate_prostate_phantom(cfg.phantom.dims, cfg.phantom.spacing_mm, cfg.phantom.seed));
}

void write_config(const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  rawio::write_json(dir / "config.json", cfg.to_json());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ClientFactory make_client_factory(const RunConfig& cfg) {
  const std::string& backend = cfg.agent.backend;
  if (backend == "mock-hillclimb")
    return [beams = cfg.agent.hillclimb_beams](std::uint64_t seed) -> std::unique_ptr<ChatClient> {
      return std::make_unique<HillClimbClient>(seed, beams);
    };
  if (backend == "mock-script")
    return [responses = cfg.agent.script_responses](std::uint64_t) -> std::unique_ptr<ChatClient> {
      return std::make_unique<ScriptedClient>(responses);
    };
  if (backend == "http")
    return [client = cfg.client](std::uint64_t) -> std::unique_ptr<ChatClient> {
      return std::make_unique<HttpChatClient>(client);
    };
  throw std::invalid_argument("unknown backend '" + backend + "' (expected mock-script, mock-hillclimb or http)");
}

TextToPlanOptions agent_options(const RunConfig& cfg) {
  TextToPlanOptions o;
  o.max_iterations = cfg.agent.max_iterations;
  o.max_parse_retries = cfg.agent.max_parse_retries;
  o.attach_images = cfg.agent.attach_images;
  o.meta = {cfg.agent.target_name, cfg.env.prescription_gy};
  return o;
}

nlohmann::json breakdown_json(const RewardBreakdown& r) {
  return {{"ptv_term", r.ptv_term}, {"oar_terms", r.oar_terms}, {"total", r.total}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gantry-angle planning on a synthetic prostate phantom"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);

  RunConfig cfg;
  auto load_config = [&] {
    if (!config_path.empty()) cfg = RunConfig::load(config_path);
  };

  // phantom gen
  auto* phantom_cmd = app.add_subcommand("phantom", "Phantom utilities");
  phantom_cmd->require_subcommand(1);
  auto* gen = phantom_cmd->add_subcommand("gen", "Generate a synthetic prostate phantom");
  std::string gen_dims, gen_spacing, gen_out;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--dims", gen_dims, "Grid size x,y,z");
  gen->add_option("--spacing", gen_spacing, "Voxel spacing in mm x,y,z");
  gen->add_option("--seed", gen_seed, "Anatomy seed");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->callback([&] {
    load_config();
    if (!gen_dims.empty()) cfg.phantom.dims = parse_index3(gen_dims, "--dims");
    if (!gen_spacing.empty()) cfg.phantom.spacing_mm = parse_vec3(gen_spacing, "--spacing");
    if (gen_seed) cfg.phantom.seed = *gen_seed;
    cfg.phantom.path.clear();
    const Phantom ph = generate_prostate_phantom(cfg.phantom.dims, cfg.phantom.spacing_mm, cfg.phantom.seed);
    save_phantom(ph, gen_out);
    write_config(cfg, gen_out);
    std::cout << "wrote phantom " << ph.label << " (" << to_string(ph.geometry().dims) << ") to " << gen_out << "\n";
  });

  // score
  auto* score = app.add_subcommand("score", "Score a plan given as gantry angles");
  std::string score_phantom, score_angles, score_out;
  score->add_option("--phantom", score_phantom, "Phantom directory (default: generated from config)");
  score->add_option("--angles", score_angles, "Gantry angles in degrees, comma-separated")->required();
  score->add_option("--out", score_out, "Directory for the dose grid and score");
  score->callback([&] {
    load_config();
    if (!score_phantom.empty()) cfg.phantom.path = score_phantom;
    const auto angles = split_list<double>(score_angles, "--angles");
    if (angles.empty()) throw CLI::ValidationError("--angles", "at least one angle is required");
    const Environment env(make_phantom(cfg), cfg.env);
    const auto plan = Plan::from_angles(angles);
    plan.validate(std::max<int>(cfg.env.max_beams, static_cast<int>(angles.size())));
    auto dose = env.engine().plan_dose(plan, cfg.env.prescription_gy, cfg.env.normalize_dose);
    const auto breakdown = score_plan(dose.dose, env.phantom(), cfg.env);
    nlohmann::json out = breakdown_json(breakdown);
    out["angles"] = plan.angles();
    out["normalisation_scale"] = dose.scale;
    out["degenerate"] = dose.degenerate;
    std::cout << out.dump(2) << "\n";
    if (!score_out.empty()) {
      save_dose(dose.dose, cfg.env.prescription_gy, plan.angles(), fs::path(score_out) / "dose");
      rawio::write_json(fs::path(score_out) / "score.json", out);
      write_config(cfg, score_out);
    }
  });

  // train-dqn
  auto* train = app.add_subcommand("train-dqn", "Train the deep-Q agent");
  std::optional<int> train_episodes;
  std::optional<std::uint64_t> train_seed;
  std::string train_out, train_phantom;
  train->add_option("--episodes", train_episodes, "Training episodes");
  train->add_option("--seed", train_seed, "Training seed");
  train->add_option("--phantom", train_phantom, "Phantom directory (default: generated from config)");
  train->add_option("--out", train_out, "Output directory")->required();
  train->callback([&] {
    load_config();
    if (train_episodes) cfg.dqn.episodes = *train_episodes;
    if (train_seed) cfg.dqn.seed = *train_seed;
    if (!train_phantom.empty()) cfg.phantom.path = train_phantom;
    const Environment env(make_phantom(cfg), cfg.env);
    const auto result = dqn_train(env, cfg.dqn);
    fs::create_directories(train_out);
    result.net.save(fs::path(train_out) / "qnet");
    std::string csv = "episode,return,final_score,steps,epsilon\n";
    char buf[160];
    for (std::size_t e = 0; e < result.episodes.size(); ++e) {
      const auto& log = result.episodes[e];
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%d,%.17g\n", e, log.episode_return, log.final_score, log.steps,
                    log.epsilon);
      csv += buf;
    }
    rawio::write_text(fs::path(train_out) / "returns.csv", csv);
    write_config(cfg, train_out);
    std::cout << "trained " << result.episodes.size() << " episodes (" << result.optimizer_steps
              << " optimiser steps); weights in " << (fs::path(train_out) / "qnet").string() << "\n";
  });

  // agent run
  auto* agent = app.add_subcommand("agent", "Language-model planning agent");
  agent->require_subcommand(1);
  auto* run = agent->add_subcommand("run", "Run the text-to-plan loop");
  std::string run_backend, run_out, run_phantom;
  std::vector<std::string> run_responses;
  std::optional<int> run_iterations, run_max_beams;
  std::optional<std::uint64_t> run_seed;
  run->add_option("--backend", run_backend, "mock-script | mock-hillclimb | http");
  run->add_option("--response-file", run_responses, "Scripted reply, one file per call (mock-script)")
      ->check(CLI::ExistingFile);
  run->add_option("--iterations", run_iterations, "Refinement iterations");
  run->add_option("--max-beams", run_max_beams, "Beam cap applied to parsed plans");
  run->add_option("--seed", run_seed, "Seed for the mock client");
  run->add_option("--phantom", run_phantom, "Phantom directory (default: generated from config)");
  run->add_option("--out", run_out, "Output directory")->required();
  run->callback([&] {
    load_config();
    if (!run_backend.empty()) cfg.agent.backend = run_backend;
    if (run_iterations) cfg.agent.max_iterations = *run_iterations;
    if (run_max_beams) cfg.env.max_beams = *run_max_beams;
    if (run_seed) cfg.agent.seed = *run_seed;
    if (!run_phantom.empty()) cfg.phantom.path = run_phantom;
    if (!run_responses.empty()) {
      cfg.agent.script_responses.clear();
      for (const auto& f : run_responses) cfg.agent.script_responses.push_back(read_file(f));
    }
    auto client = make_client_factory(cfg)(cfg.agent.seed);
    const Environment env(make_phantom(cfg), cfg.env);
    auto options = agent_options(cfg);
    if (options.attach_images) options.image_dir = fs::path(run_out) / "images";
    const auto transcript = text_to_plan_run(env, *client, options, cfg.agent.seed);
    save_transcript(transcript, fs::path(run_out) / "transcript.jsonl");
    write_config(cfg, run_out);
    std::cout << transcript.iterations.size() << " iterations";
    if (transcript.best_score) std::cout << ", best score " << *transcript.best_score;
    if (!transcript.complete) std::cout << ", stopped early: " << transcript.failure;
    std::cout << "\n";
    if (!transcript.complete) throw std::runtime_error("agent run incomplete: " + transcript.failure);
  });

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Compare planning methods over repeated trials");
  std::string eval_methods, eval_backend, eval_out, eval_phantom;
  std::optional<int> eval_trials, eval_jobs, eval_episodes;
  std::optional<std::uint64_t> eval_seed;
  evaluate->add_option("--methods", eval_methods, "Comma-separated: random, dqn (rl), text_to_plan (text2plan)");
  evaluate->add_option("--backend", eval_backend, "Chat backend for text_to_plan");
  evaluate->add_option("--trials", eval_trials, "Trials per method");
  evaluate->add_option("--seed", eval_seed, "Base seed");
  evaluate->add_option("--jobs", eval_jobs, "Worker threads for the trial loops");
  evaluate->add_option("--episodes", eval_episodes, "DQN training episodes");
  evaluate->add_option("--phantom", eval_phantom, "Phantom directory (default: generated from config)");
  evaluate->add_option("--out", eval_out, "Run directory")->required();
  evaluate->callback([&] {
    load_config();
    if (!eval_methods.empty()) cfg.eval.methods = split_list<std::string>(eval_methods, "--methods");
    if (!eval_backend.empty()) cfg.agent.backend = eval_backend;
    if (eval_trials) cfg.eval.trials_per_method = *eval_trials;
    if (eval_seed) cfg.eval.seed = *eval_seed;
    if (eval_jobs) cfg.eval.jobs = *eval_jobs;
    if (eval_episodes) cfg.dqn.episodes = *eval_episodes;
    if (!eval_phantom.empty()) cfg.phantom.path = eval_phantom;

    ComparisonOptions o;
    o.methods.clear();
    for (const auto& name : cfg.eval.methods) {
      const auto m = parse_method(name);
      if (!m) throw CLI::ValidationError("--methods", "unknown method '" + name + "'");
      o.methods.push_back(*m);
    }
    o.trials_per_method = cfg.eval.trials_per_method;
    o.seed = cfg.eval.seed;
    o.jobs = cfg.eval.jobs;
    o.dqn = cfg.dqn;
    o.dqn_eval_epsilon = cfg.eval.dqn_eval_epsilon;
    o.text_to_plan = agent_options(cfg);
    o.client_factory = make_client_factory(cfg);
    o.hillclimb_beams = cfg.agent.hillclimb_beams;
    o.dvh_bins = cfg.eval.dvh_bins;
    o.dvh_max_dose_factor = cfg.eval.dvh_max_dose_factor;

    const Environment env(make_phantom(cfg), cfg.env);
    const auto result = run_comparison(env, o);
    write_comparison(result, env, eval_out);
    write_config(cfg, eval_out);
    for (const auto& m : result.report.methods)
      std::cout << m.label << ": n=" << m.n << " mean=" << m.mean << " sd=" << m.sd << "\n";
    if (result.report.anova)
      std::cout << "ANOVA F(" << result.report.anova->df_between << ", " << result.report.anova->df_within
                << ") = " << result.report.anova->f << ", p = " << result.report.anova->p << "\n";
    for (const auto& n : result.report.notices) std::cout << "notice: " << n << "\n";
  });

  // dvh
  auto* dvh_cmd = app.add_subcommand("dvh", "Dose-volume histograms of a saved dose grid");
  std::string dvh_dose, dvh_phantom, dvh_out;
  int dvh_bins = 120;
  std::optional<double> dvh_max;
  dvh_cmd->add_option("--dose", dvh_dose, "Dose directory")->required();
  dvh_cmd->add_option("--phantom", dvh_phantom, "Phantom directory (default: generated from config)");
  dvh_cmd->add_option("--bins", dvh_bins, "Histogram bins")->check(CLI::PositiveNumber);
  dvh_cmd->add_option("--max-dose", dvh_max, "Upper dose edge in Gy (default 1.2 x prescription)");
  dvh_cmd->add_option("--out", dvh_out, "Output directory")->required();
  dvh_cmd->callback([&] {
    load_config();
    if (!dvh_phantom.empty()) cfg.phantom.path = dvh_phantom;
    const auto phantom = make_phantom(cfg);
    const DoseGrid dose = load_dose(dvh_dose);
    if (!(dose.geometry == phantom->geometry()))
      throw std::invalid_argument("dose grid geometry does not match the phantom");
    const double max_dose = dvh_max.value_or(cfg.eval.dvh_max_dose_factor * cfg.env.prescription_gy);
    fs::create_directories(dvh_out);
    for (const auto& s : phantom->structures)
      write_dvh_csv(dvh(dose, s.mask, dvh_bins, max_dose, s.name), fs::path(dvh_out) / ("dvh_" + s.name + ".csv"));
    write_config(cfg, dvh_out);
    std::cout << "wrote " << phantom->structures.size() << " DVH curves to " << dvh_out << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "beamplan: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
