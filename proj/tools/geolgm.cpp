#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "geolgm/cli/commands.hpp"

int main(int argc, char** argv) {
  using geolgm::cli::Invocation;

  CLI::App app{"Space-time latent Gaussian models on the sphere"};
  app.require_subcommand(1);
  app.fallthrough();

  Invocation inv;
  std::string out;
  std::uint64_t seed = 0;
  app.add_option("--config", inv.config_path, "JSON run configuration")->required();
  auto* out_opt = app.add_option("--out", out, "Output directory (overrides output.directory)");
  auto* seed_opt = app.add_option("--seed", seed, "Seed (overrides the config seed)");
  app.add_option("--threads", inv.threads, "Worker threads; results do not depend on it")
      ->check(CLI::PositiveNumber);

  const char* help[] = {
      "Build the mesh and write mesh.txt",
      "Load events and rasters, write the modeling dataset",
      "Simulate a dataset from the simulate section",
      "Fit the model and write summary, field and fit records",
      "Write posterior surfaces for the prediction years",
      "Write hot-spot GeoJSON for the prediction years",
      "Fit under both prior modes and write sensitivity.csv",
  };
  const auto& names = geolgm::cli::command_names();
  for (std::size_t i = 0; i < names.size(); ++i) app.add_subcommand(names[i], help[i]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error config.arguments: " << e.what() << '\n';
    return static_cast<int>(geolgm::ErrorKind::kConfig);
  }

  inv.command = app.get_subcommands().front()->get_name();
  if (*out_opt) inv.out = out;
  if (*seed_opt) inv.seed = seed;
  return geolgm::cli::run(inv);
}
