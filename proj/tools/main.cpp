#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "flood/pipeline.hpp"

namespace {

std::string flag_name(std::string key) {
  for (char& c : key)
    if (c == '_') c = '-';
  return "--" + key;
}

}  // namespace

int main(int argc, char** argv) {
  using flood::pipeline::RunConfig;
  CLI::App app{"Raster flood simulation and neural surrogate toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::map<std::string, std::string> globals;
  app.add_option("--config", config_path, "key: value settings file");
  app.add_option("--seed", globals["seed"], "master seed");
  app.add_option("--threads", globals["threads"], "worker threads (0 = available cores)");
  app.add_option("--out", globals["out"], "output directory");

  std::map<std::string, std::map<std::string, std::string>> flags;
  for (const auto& name : flood::pipeline::command_names()) {
    CLI::App* sub = app.add_subcommand(name);
    auto& store = flags[name];
    for (const auto& key : flood::pipeline::command_schema(name)) {
      if (key.name == "seed" || key.name == "threads" || key.name == "out") continue;
      std::string help = key.help;
      if (!key.default_value.empty()) help += " [" + key.default_value + "]";
      sub->add_option(flag_name(key.name), store[key.name], help);
    }
  }

  CLI11_PARSE(app, argc, argv);

  CLI::App* chosen = app.get_subcommands().front();
  const std::string command = chosen->get_name();
  try {
    RunConfig cfg(command);
    if (!config_path.empty()) cfg.load_file(config_path);
    for (const auto& [key, value] : globals)
      if (app.count(flag_name(key))) cfg.set(key, value);
    for (const auto& [key, value] : flags[command])
      if (chosen->count(flag_name(key))) cfg.set(key, value);
    return flood::pipeline::run_command(cfg, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << command << ": error: " << e.what() << '\n';
    return 1;
  }
}
