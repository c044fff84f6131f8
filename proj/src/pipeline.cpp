#include "imgforge/pipeline.hpp"

#include <algorithm>
#include <exception>

#include "imgforge/mounts.hpp"

namespace imgforge {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

std::string command_text(const Command& cmd) {
  auto text = cmd.origin.text;
  auto first = text.find_first_not_of(" \t");
  if (first == std::string::npos) return std::string(command_keyword(cmd.kind));
  text.erase(0, first);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\\')) {
    text.pop_back();
  }
  return text;
}

class Runner {
 public:
  Runner(const ExecutionPlan& plan, Executor& exec, const ExecuteOptions& options)
      : plan_(plan), exec_(exec), options_(options) {
    exec_.set_output_sink([this](std::string_view line) {
      emit(PipelineEvent::Type::Output, std::string(line));
    });
  }
  ~Runner() { exec_.set_output_sink({}); }

  BuildReport run() {
    for (const auto& w : plan_.warnings) emit(PipelineEvent::Type::Warning, w);

    timed(Stage::Setup, [&] { setup(); });
    timed(Stage::Prepare, [&] { prepare(); });
    if (!plan_.commands(Stage::Chroot).empty()) timed(Stage::Chroot, [&] { chroot(); });

    report_.image = image_;
    report_.action_count = exec_.actions().size();
    report_.guest_actions = static_cast<std::size_t>(
        std::count_if(exec_.actions().begin(), exec_.actions().end(),
                      [](const Action& a) { return a.kind == ActionKind::GuestExec; }));
    report_.image_digest = exec_.image_digest(image_);
    return report_;
  }

 private:
  void emit(PipelineEvent::Type type, std::string message, std::optional<int> status = {}) {
    if (!options_.on_event) return;
    PipelineEvent event{type, stage_, origin_, std::move(message), status};
    options_.on_event(event);
  }

  void announce(const Command& cmd) {
    origin_ = cmd.origin;
    emit(PipelineEvent::Type::Command, command_text(cmd));
  }

  void fail(Error& e) {
    if (reported_) return;
    reported_ = true;
    if (origin_) e.with_origin(*origin_);
    if (e.origin()) origin_ = e.origin();
    emit(PipelineEvent::Type::Failure, e.what(), e.status());
  }

  template <typename F>
  void timed(Stage stage, F&& body) {
    stage_ = stage;
    origin_.reset();
    emit(PipelineEvent::Type::StageBegin, "begin");
    auto start = Clock::now();
    try {
      body();
    } catch (Error& e) {
      report_.durations[stage] = Clock::now() - start;
      fail(e);
      throw;
    }
    report_.durations[stage] = Clock::now() - start;
  }

  void setup() {
    for (const auto& cmd : plan_.commands(Stage::Setup)) announce(cmd);
    // errors while resolving belong to FROM/INPLACE
    const auto& cmds = plan_.commands(Stage::Setup);
    auto root = std::find_if(cmds.begin(), cmds.end(), [](const Command& c) {
      return c.kind == CommandKind::From || c.kind == CommandKind::Inplace;
    });
    if (root != cmds.end()) origin_ = root->origin;
    auto source = resolve_source_image(plan_, exec_, options_.source);
    image_ = materialize_destination(plan_, source, exec_);
  }

  void prepare() {
    for (const auto& cmd : plan_.commands(Stage::Prepare)) announce(cmd);
    if (!plan_.commands(Stage::Prepare).empty()) origin_ = plan_.commands(Stage::Prepare).front().origin;
    pump(plan_, exec_);
  }

  void chroot() {
    std::exception_ptr failure;
    try {
      mount_all();
      run_commands();
    } catch (Error& e) {
      fail(e);
      failure = std::current_exception();
    } catch (...) {
      failure = std::current_exception();
    }
    teardown();
    if (failure) std::rethrow_exception(failure);
  }

  void apply(const MountAction& m) {
    int status = exec_.run(to_action(m));
    if (status != 0) {
      throw Error(ErrorCode::CommandFailed, std::string(action_kind_name(to_action(m).kind)) +
                                                " " + m.target + " failed with exit status " +
                                                std::to_string(status))
          .with_status(status);
    }
    applied_.push_back(m);
  }

  void mount_all() {
    auto table = exec_.read_partition_table(image_);
    // the guest fstab is only readable once the root partition is mounted
    auto early = build_mount_plan(plan_, table, std::nullopt, options_.emulators);
    std::size_t head = 0;
    for (; head < early.setup.size() && head < 2; ++head) apply(early.setup[head]);

    auto fstab = exec_.read_guest_file(plan_.chroot_root(), "/etc/fstab");
    auto full = build_mount_plan(plan_, table, fstab, options_.emulators);
    for (const auto& w : full.warnings) emit(PipelineEvent::Type::Warning, w);
    for (std::size_t i = head; i < full.setup.size(); ++i) apply(full.setup[i]);
  }

  void run_commands() {
    GuestEnv env;
    env.root = plan_.chroot_root();
    env.extra_env = options_.guest_env;
    std::vector<std::string> extensions;
    env.path_var = compose_guest_path(extensions, options_.host_path);

    for (const auto& cmd : plan_.commands(Stage::Chroot)) {
      announce(cmd);
      switch (cmd.kind) {
        case CommandKind::Path:
          extensions.push_back(cmd.args.front());
          env.path_var = compose_guest_path(extensions, options_.host_path);
          break;
        case CommandKind::Run:
          run_guest(cmd.args.front(), cmd.heredoc, env, exec_);
          break;
        case CommandKind::Host:
          run_host(cmd.args.front(), cmd.heredoc, plan_.pifile_dir(), exec_);
          break;
        case CommandKind::Install: {
          std::optional<std::string> mode;
          if (cmd.args.size() == 3) mode = cmd.args[0];
          fs::path source(cmd.args[cmd.args.size() - 2]);
          if (source.is_relative()) source = plan_.pifile_dir() / source;
          install_file(source.lexically_normal(), cmd.args.back(), mode, env, exec_);
          break;
        }
        default:
          break;
      }
    }
  }

  void teardown() {
    origin_.reset();
    emit(PipelineEvent::Type::Info, "teardown");
    for (const auto& m : teardown_for(applied_)) {
      try {
        int status = exec_.run(to_action(m));
        if (status != 0) {
          emit(PipelineEvent::Type::Warning,
               std::string("teardown of ") + m.target + " failed", status);
        }
      } catch (const Error& e) {
        emit(PipelineEvent::Type::Warning, std::string("teardown: ") + e.what(), e.status());
      }
    }
    applied_.clear();
  }

  const ExecutionPlan& plan_;
  Executor& exec_;
  const ExecuteOptions& options_;
  Stage stage_ = Stage::Setup;
  std::optional<SourceLine> origin_;
  fs::path image_;
  std::vector<MountAction> applied_;
  BuildReport report_;
  bool reported_ = false;
};

}  // namespace

BuildReport execute(const ExecutionPlan& plan, Executor& executor, const ExecuteOptions& options) {
  Runner runner(plan, executor, options);
  return runner.run();
}

}  // namespace imgforge
