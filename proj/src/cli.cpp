#include "imgforge/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "imgforge/dry_run_executor.hpp"
#include "imgforge/errors.hpp"
#include "imgforge/mounts.hpp"
#include "imgforge/parser.hpp"
#include "imgforge/plan.hpp"
#include "imgforge/real_executor.hpp"

namespace imgforge {

namespace fs = std::filesystem;

std::string render_log(const PipelineEvent& event) {
  using Type = PipelineEvent::Type;
  if (event.type == Type::Output) return "    " + event.message;

  std::string line = "[" + std::string(stage_name(event.stage)) + "]";
  if (event.origin && event.origin->line_no > 0) {
    line += " " + event.origin->file.filename().string() + ":" +
            std::to_string(event.origin->line_no);
  }
  switch (event.type) {
    case Type::Warning: line += " warning:"; break;
    case Type::Failure:
      line += " failed";
      if (event.status) line += " (exit status " + std::to_string(*event.status) + ")";
      line += ":";
      break;
    default: break;
  }
  return line + " " + event.message;
}

namespace {

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

CliConfig parse_args(CLI::App& app, std::vector<std::string> args) {
  CliConfig config;
  std::string pifile;
  std::string dry_run, cache, fstab;
  std::vector<std::string> env_pairs, emulators;
  bool verbose = false, quiet = false;

  app.add_option("pifile", pifile, "Pifile to apply")->required();
  app.add_option("--dry-run", dry_run, "record actions to FILE instead of performing them");
  app.add_option("--cache", cache, "download cache directory");
  app.add_option("--env", env_pairs, "set a Pifile variable (K=V, repeatable)");
  app.add_flag("--refresh", config.refresh, "download again even when cached");
  app.add_flag("--offline", config.offline, "only use cached downloads");
  app.add_flag("-v,--verbose", verbose, "more output");
  app.add_flag("-q,--quiet", quiet, "only warnings and errors");
  app.add_flag("--inplace-device", config.inplace_device, "allow writing to block devices");
  app.add_option("--guest-fstab", fstab, "guest /etc/fstab to assume in dry runs");
  app.add_option("--emulator", emulators, "static emulator to copy into the guest (repeatable)");

  std::reverse(args.begin(), args.end());
  app.parse(args);

  config.pifile = pifile;
  if (!dry_run.empty()) config.dry_run = dry_run;
  if (!cache.empty()) config.cache_dir = cache;
  if (!fstab.empty()) config.guest_fstab = fstab;
  for (const auto& e : emulators) config.emulators.emplace_back(e);
  for (const auto& pair : env_pairs) {
    auto eq = pair.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw Error(ErrorCode::MalformedArgs, "--env expects NAME=VALUE, got '" + pair + "'");
    }
    config.env_overrides[pair.substr(0, eq)] = pair.substr(eq + 1);
  }
  config.verbosity = quiet ? -1 : verbose ? 1 : 0;
  return config;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::PifileNotFound, "cannot read " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

std::string lookup(const std::map<std::string, std::string>& env, const std::string& key,
                   std::string fallback = {}) {
  auto it = env.find(key);
  return it == env.end() ? fallback : it->second;
}

bool shown(const PipelineEvent& event, int verbosity) {
  using Type = PipelineEvent::Type;
  if (event.type == Type::Warning || event.type == Type::Failure) return true;
  if (verbosity < 0) return false;
  if (event.type == Type::Info) return verbosity > 0;
  return true;
}

int run(const CliConfig& config, const std::map<std::string, std::string>& env,
        const CliHooks& hooks, Streams io) {
  auto pifile_path = fs::absolute(config.pifile).lexically_normal();

  Environment pifile_env(env.begin(), env.end());
  for (const auto& [k, v] : config.env_overrides) pifile_env[k] = v;

  auto pifile = parse_pifile(pifile_path, pifile_env);
  auto plan = build_plan(pifile);
  for (const auto& w : validate_plan(plan)) plan.warnings.push_back(w);

  if (plan.destination.is_device && !config.dry_run && !config.inplace_device) {
    throw Error(ErrorCode::DeviceWriteNotConfirmed,
                "refusing to write to block device " + plan.destination.path.string() +
                    " without --inplace-device");
  }

  std::unique_ptr<Executor> executor;
  if (hooks.make_executor) {
    executor = hooks.make_executor(config);
  } else if (config.dry_run) {
    auto dry = std::make_unique<DryRunExecutor>();
    if (config.guest_fstab) dry->set_guest_file("/etc/fstab", read_text(*config.guest_fstab));
    executor = std::move(dry);
  } else {
    RealExecutorOptions real;
    real.host_path = lookup(env, "PATH", real.host_path);
    for (const auto& [k, v] : env) real.host_env.push_back(k + "=" + v);
    executor = std::make_unique<RealExecutor>(std::move(real));
  }

  ExecuteOptions options;
  options.host_path = lookup(env, "PATH", options.host_path);
  options.emulators = config.emulators;
  if (options.emulators.empty()) options.emulators = discover_emulators(options.host_path);
  options.source.cache_dir = config.cache_dir
                                 ? *config.cache_dir
                                 : default_cache_dir(pifile_path, env.count("PIMOD_CACHE")
                                                                      ? env.at("PIMOD_CACHE").c_str()
                                                                      : nullptr);
  options.source.fetcher = hooks.fetcher;
  options.source.cache = {config.refresh, config.offline};
  options.on_event = [&](const PipelineEvent& event) {
    if (shown(event, config.verbosity)) io.out << render_log(event) << '\n';
  };

  auto write_log = [&] {
    if (!config.dry_run) return;
    std::ofstream log(*config.dry_run, std::ios::binary | std::ios::trunc);
    log << executor->log_text();
    if (!log) io.err << "imgforge: cannot write " << config.dry_run->string() << '\n';
  };

  BuildReport report;
  try {
    report = execute(plan, *executor, options);
  } catch (...) {
    write_log();
    throw;
  }
  write_log();

  if (config.verbosity > 0) {
    for (const auto& [stage, elapsed] : report.durations) {
      io.out << "[" << stage_name(stage) << "] took "
             << std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count() << " ms\n";
    }
    io.out << "actions: " << report.action_count << ", guest commands: " << report.guest_actions
           << '\n';
    if (report.image_digest) io.out << "sha256 " << *report.image_digest << '\n';
  }
  if (!config.dry_run && config.verbosity >= 0) io.out << "image " << report.image.string() << '\n';
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, const std::map<std::string, std::string>& env,
            const CliHooks& hooks) {
  Streams io{hooks.out ? *hooks.out : std::cout, hooks.err ? *hooks.err : std::cerr};
  CLI::App app{"Apply a Pifile to a single-board-computer OS image", "imgforge"};
  CliConfig config;
  try {
    config = parse_args(app, args);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      io.out << app.help();
      return 0;
    }
    io.err << "imgforge: " << e.what() << '\n' << "run 'imgforge --help' for usage\n";
    return static_cast<int>(ErrorClass::Static);
  } catch (const Error& e) {
    io.err << "imgforge: " << e.describe() << '\n';
    return static_cast<int>(e.error_class());
  }

  try {
    return run(config, env, hooks, io);
  } catch (const Error& e) {
    io.err << "imgforge: " << e.describe() << '\n';
    return static_cast<int>(e.error_class());
  } catch (const std::exception& e) {
    io.err << "imgforge: " << e.what() << '\n';
    return static_cast<int>(ErrorClass::Dynamic);
  }
}

}  // namespace imgforge
