#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "haptstart/cli.hpp"

namespace cli = haptstart::cli;

int main(int argc, char** argv) {
  CLI::App app{"haptstart: start-signal reaction-time sessions"};
  app.require_subcommand(1);

  std::string config_path, out_path, log_path, report_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> bind, serve_config;
  std::string log_dir = ".";

  auto* sim = app.add_subcommand("simulate", "run a simulated study into a session log");
  sim->add_option("--config", config_path, "session config (JSON)")->required()->check(CLI::ExistingFile);
  sim->add_option("--seed", seed, "override the config seed");
  sim->add_option("--out", out_path, "log path (JSONL)")->required();

  auto* an = app.add_subcommand("analyze", "analyze a session log");
  an->add_option("log", log_path, "session log")->required();
  an->add_option("--report", report_path, "report path (JSON); CSV exports are written beside it")->required();

  auto* rep = app.add_subcommand("replay", "print the event stream reconstructed from a log");
  rep->add_option("log", log_path, "session log")->required();

  auto* srv = app.add_subcommand("serve", "run the control service");
  srv->add_option("--config", serve_config, "create a session from this config at startup");
  srv->add_option("--bind", bind, "host:port (default 127.0.0.1:8787, env HAPTSTART_BIND)");
  srv->add_option("--log-dir", log_dir, "directory for session logs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? cli::kOk : cli::kUsage;
  }

  try {
    if (*sim) {
      const auto r = cli::cmd_simulate(config_path, seed, out_path);
      std::cout << "wrote " << r.records << " records (" << r.planned << " planned) to " << r.log_path << "\n";
    } else if (*an) {
      cli::cmd_analyze(log_path, report_path);
      std::cout << "report " << report_path << "\n";
      for (const auto& p : cli::export_paths(report_path)) std::cout << "export " << p << "\n";
    } else if (*rep) {
      cli::cmd_replay(log_path, std::cout);
    } else if (*srv) {
      cli::ServeOptions opts;
      opts.config_path = serve_config;
      opts.bind = cli::resolve_bind(bind, serve_config);
      opts.log_dir = log_dir;
      return cli::cmd_serve(opts, std::cout);
    }
  } catch (const haptstart::CorruptLineError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kDataError;
  } catch (const haptstart::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kDataError;
  }
  return cli::kOk;
}
