// gerea: staged generate-and-reason VQA pipeline driver.
//
//   gerea <command> --config FILE [--force] [--seed INT] [--workers INT]
//                   [--profile default|test]
//
// Commands run one stage each (regions, captions, exemplars, train, predict,
// ensemble, evaluate, analyze); `run` executes them all in order. `fixture`
// writes a small synthetic dataset for demos and smoke tests.

#include "gerea/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <optional>

namespace {

using StageFn = void (*)(const gerea::RunConfig&, bool);

const std::map<std::string, StageFn>& stages() {
  static const std::map<std::string, StageFn> s = {
      {"regions", gerea::cmd_regions},   {"captions", gerea::cmd_captions},
      {"exemplars", gerea::cmd_exemplars}, {"train", gerea::cmd_train},
      {"predict", gerea::cmd_predict},   {"ensemble", gerea::cmd_ensemble},
      {"evaluate", gerea::cmd_evaluate}, {"analyze", gerea::cmd_analyze},
      {"run", gerea::run_all}};
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"generate-and-reason VQA pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  bool force = false;
  std::optional<uint64_t> seed_override;
  std::optional<std::string> profile_override;
  int workers = 1;

  std::vector<CLI::App*> stage_cmds;
  for (auto& [name, fn] : stages()) {
    CLI::App* cmd = app.add_subcommand(name);
    cmd->add_option("--config", config_path, "run configuration JSON")
        ->required();
    cmd->add_flag("--force", force, "rebuild even if outputs are up to date");
    cmd->add_option("--seed", seed_override, "override the pipeline seed");
    cmd->add_option("--workers", workers, "worker count (reserved; stages run serially)");
    cmd->add_option("--profile", profile_override, "default|test")
        ->check(CLI::IsMember({"default", "test"}));
    stage_cmds.push_back(cmd);
  }

  CLI::App* fixture = app.add_subcommand("fixture", "write a synthetic demo dataset");
  std::string fixture_out;
  int fixture_train = 8, fixture_eval = 8;
  uint64_t fixture_seed = 0;
  fixture->add_option("--out", fixture_out, "dataset root directory")->required();
  fixture->add_option("--train", fixture_train, "training sample count");
  fixture->add_option("--eval", fixture_eval, "eval sample count");
  fixture->add_option("--seed", fixture_seed, "generation seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (fixture->parsed()) {
      gerea::write_fixture_dataset(fixture_out, fixture_train, fixture_eval,
                                   fixture_seed);
      std::cout << "wrote fixture dataset (" << fixture_train << " train, "
                << fixture_eval << " eval) to " << fixture_out << "\n";
      return 0;
    }
    for (auto& [name, fn] : stages()) {
      CLI::App* cmd = app.get_subcommand(name);
      if (!cmd->parsed()) continue;
      gerea::RunConfig cfg = gerea::load_run_config(config_path);
      if (seed_override) cfg.seed = *seed_override;
      if (profile_override) cfg.profile = *profile_override;
      fn(cfg, force);
      return 0;
    }
  } catch (const gerea::UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
