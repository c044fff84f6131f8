#include "imgforge/real_executor.hpp"

#include <fcntl.h>
#include <linux/fs.h>
#include <sys/ioctl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "imgforge/digest.hpp"
#include "imgforge/errors.hpp"
#include "imgforge/source.hpp"
#include "imgforge/subprocess.hpp"

namespace imgforge {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kCopyBlock = 1 << 20;

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == ' ' || s.back() == '\r')) s.pop_back();
  return s;
}

Error io_error(const std::string& what) {
  return Error(ErrorCode::IoFailure, what + ": " + std::strerror(errno));
}

class UniqueFd {
 public:
  explicit UniqueFd(int fd) : fd_(fd) {}
  UniqueFd(const UniqueFd&) = delete;
  UniqueFd& operator=(const UniqueFd&) = delete;
  ~UniqueFd() {
    if (fd_ >= 0) ::close(fd_);
  }
  int get() const { return fd_; }

 private:
  int fd_;
};

bool all_zero(const char* p, std::size_t n) {
  return std::all_of(p, p + n, [](char c) { return c == 0; });
}

}  // namespace

RealExecutor::RealExecutor(RealExecutorOptions options) : options_(std::move(options)) {}

RealExecutor::~RealExecutor() {
  // Loops are normally detached by teardown; this only catches aborts.
  auto losetup = find_program("losetup", options_.host_path);
  if (!losetup) return;
  for (const auto& [target, device] : partition_loops_) {
    run_process({{losetup->string(), "-d", device}, {}, std::nullopt, std::nullopt});
  }
  for (const auto& [handle, loop] : loops_) {
    run_process({{losetup->string(), "-d", loop.device}, {}, std::nullopt, std::nullopt});
  }
}

fs::path RealExecutor::tool(std::string_view name) const {
  if (auto found = find_program(name, options_.host_path)) return *found;
  auto code = name == "chroot" ? ErrorCode::ChrootUnavailable : ErrorCode::ShellUnavailable;
  throw Error(code, "required host tool '" + std::string(name) + "' was not found on PATH");
}

void RealExecutor::require_root(std::string_view what) const {
  if (::geteuid() != 0) {
    throw Error(ErrorCode::ChrootUnavailable,
                std::string(what) +
                    " needs root privileges; run imgforge as root or use --dry-run to "
                    "inspect the plan");
  }
}

int RealExecutor::exec(std::vector<std::string> argv, std::optional<std::string> input,
                       const fs::path& cwd, std::optional<std::vector<std::string>> env,
                       std::string* captured) {
  ProcessSpec spec{std::move(argv), cwd, std::move(env), std::move(input)};
  return run_process(spec, [&](std::string_view line) {
    if (captured) {
      captured->append(line);
      captured->push_back('\n');
    } else {
      emit_output(line);
    }
  });
}

PartitionTable RealExecutor::read_partition_table(const fs::path& image) {
  return imgforge::read_partition_table(image);
}

std::uint64_t RealExecutor::image_size(const fs::path& image) {
  if (probe_path(image) == PathStatus::BlockDevice) {
    UniqueFd fd(::open(image.c_str(), O_RDONLY | O_CLOEXEC));
    std::uint64_t size = 0;
    if (fd.get() < 0 || ::ioctl(fd.get(), BLKGETSIZE64, &size) != 0) {
      throw io_error("cannot query size of " + image.string());
    }
    return size;
  }
  std::error_code ec;
  auto size = fs::file_size(image, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot read image " + image.string());
  return size;
}

std::optional<std::string> RealExecutor::read_guest_file(const fs::path& root,
                                                         const fs::path& guest_path) {
  std::ifstream in(guest_path_on_host(root, guest_path), std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

bool RealExecutor::host_path_available(const fs::path& path) {
  std::error_code ec;
  return fs::exists(path, ec);
}

std::optional<std::string> RealExecutor::image_digest(const fs::path& image) {
  return sha256_file(image);
}

int RealExecutor::perform(const Action& a) {
  switch (a.kind) {
    case ActionKind::Copy: return copy_file(a, false);
    case ActionKind::DeviceWrite: return copy_file(a, true);
    case ActionKind::Fetch: return 0;  // already in the cache when recorded
    case ActionKind::Grow:
      grow_image_file(fs::path(a.at("image")), ByteSize{std::stoull(a.at("bytes"))});
      return 0;
    case ActionKind::TableWrite: {
      fs::path image(a.at("image"));
      auto table = imgforge::read_partition_table(image);
      auto& entry = table.entry(std::stoi(a.at("partition")));
      entry.lba_start = static_cast<std::uint32_t>(std::stoul(a.at("lba_start")));
      entry.lba_size = static_cast<std::uint32_t>(std::stoul(a.at("lba_size")));
      write_partition_table(image, table);
      return 0;
    }
    case ActionKind::FsResize: return fs_resize(a);
    case ActionKind::LoopAttach: return loop_attach(a);
    case ActionKind::MountPartition: return mount_partition(a);
    case ActionKind::BindMount: return bind_mount(a);
    case ActionKind::CopyEmulator: return copy_emulator(a);
    case ActionKind::RemoveEmulator: {
      std::error_code ec;
      fs::remove(a.at("target"), ec);
      return ec ? 1 : 0;
    }
    case ActionKind::Unmount: return unmount(a);
    case ActionKind::LoopDetach: return loop_detach(a);
    case ActionKind::HostExec: return host_exec(a);
    case ActionKind::GuestExec: return guest_exec(a);
    case ActionKind::CopyIn: return copy_in(a);
  }
  throw Error(ErrorCode::IoFailure, "unknown action kind");
}

int RealExecutor::copy_file(const Action& a, bool device) {
  fs::path src(a.at("src"));
  fs::path dst(device ? a.at("device") : a.at("dst"));
  UniqueFd in(::open(src.c_str(), O_RDONLY | O_CLOEXEC));
  if (in.get() < 0) throw io_error("cannot open " + src.string());
  int flags = O_WRONLY | O_CLOEXEC | (device ? 0 : O_CREAT | O_TRUNC);
  UniqueFd out(::open(dst.c_str(), flags, 0644));
  if (out.get() < 0) throw io_error("cannot open " + dst.string());

  std::vector<char> buffer(kCopyBlock);
  std::uint64_t total = 0;
  while (true) {
    auto n = ::read(in.get(), buffer.data(), buffer.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw io_error("read " + src.string());
    }
    if (n == 0) break;
    auto len = static_cast<std::size_t>(n);
    // holes keep sparse images sparse; devices need every byte written
    if (!device && all_zero(buffer.data(), len)) {
      if (::lseek(out.get(), n, SEEK_CUR) < 0) throw io_error("seek " + dst.string());
    } else {
      std::size_t done = 0;
      while (done < len) {
        auto w = ::write(out.get(), buffer.data() + done, len - done);
        if (w < 0) {
          if (errno == EINTR) continue;
          throw io_error("write " + dst.string());
        }
        done += static_cast<std::size_t>(w);
      }
    }
    total += len;
  }
  if (!device && ::ftruncate(out.get(), static_cast<off_t>(total)) != 0) {
    throw io_error("truncate " + dst.string());
  }
  if (::fsync(out.get()) != 0 && device) throw io_error("sync " + dst.string());
  return 0;
}

int RealExecutor::fs_resize(const Action& a) {
  require_root("resizing a filesystem");
  auto losetup = tool("losetup").string();
  std::string device;
  int status = exec({losetup, "--find", "--show", "--offset", a.at("offset"), "--sizelimit",
                     a.at("size"), a.at("image")},
                    std::nullopt, {}, std::nullopt, &device);
  device = trim(device);
  if (status != 0) {
    emit_output(device);
    return status;
  }
  // resize2fs insists on a recent check; e2fsck exits 1 after fixing things
  status = exec({tool("e2fsck").string(), "-f", "-y", device});
  if (status <= 1) status = exec({tool(a.at("tool")).string(), device});
  exec({losetup, "-d", device});
  return status;
}

int RealExecutor::loop_attach(const Action& a) {
  require_root("attaching a loop device");
  std::string device;
  int status = exec({tool("losetup").string(), "--find", "--show", "--partscan", a.at("image")},
                    std::nullopt, {}, std::nullopt, &device);
  device = trim(device);
  if (status != 0) {
    emit_output(device);
    return status;
  }
  loops_[a.at("handle")] = {device, a.at("image")};
  return 0;
}

int RealExecutor::mount_partition(const Action& a) {
  require_root("mounting the image");
  fs::path target(a.at("target"));
  if (a.at("mkdir") == "1") fs::create_directories(target);

  const auto& source = a.at("source");
  auto sep = source.find(":p");
  auto it = loops_.find(source.substr(0, sep));
  if (sep == std::string::npos || it == loops_.end()) {
    return exec({tool("mount").string(), source, target.string()});
  }
  auto partition_node = it->second.device + "p" + source.substr(sep + 2);
  if (probe_path(partition_node) == PathStatus::BlockDevice) {
    return exec({tool("mount").string(), partition_node, target.string()});
  }
  // No partition nodes without udev. mount -o loop,offset refuses to overlap
  // the attached image, so stack a loop on the whole-disk device instead.
  auto losetup = tool("losetup").string();
  std::string part;
  int status = exec({losetup, "--find", "--show", "--offset", a.at("offset"), "--sizelimit",
                     a.at("size"), it->second.device},
                    std::nullopt, {}, std::nullopt, &part);
  part = trim(part);
  if (status != 0) {
    emit_output(part);
    return status;
  }
  status = exec({tool("mount").string(), part, target.string()});
  if (status != 0) {
    exec({losetup, "-d", part});
    return status;
  }
  partition_loops_[target.string()] = part;
  return 0;
}

int RealExecutor::bind_mount(const Action& a) {
  require_root("bind mounting");
  fs::path source(a.at("source"));
  fs::path target(a.at("target"));
  std::error_code ec;
  if (fs::is_directory(source, ec)) {
    if (a.at("mkdir") == "1") fs::create_directories(target);
  } else if (!fs::exists(fs::symlink_status(target))) {
    fs::create_directories(target.parent_path(), ec);
    std::ofstream touch(target);
  } else if (fs::is_symlink(target)) {
    // a dangling guest symlink (systemd-resolved) cannot be a mount point
    fs::remove(target);
    std::ofstream touch(target);
  }
  return exec({tool("mount").string(), "--bind", source.string(), target.string()});
}

int RealExecutor::copy_emulator(const Action& a) {
  fs::path source(a.at("source"));
  fs::path target(a.at("target"));
  auto name = source.filename().string();
  // qemu-<arch>-static is dispatched by the kernel entry qemu-<arch>
  auto arch = name.substr(5, name.size() - 5 - 7);
  fs::path binfmt = fs::path("/proc/sys/fs/binfmt_misc") / ("qemu-" + arch);
  std::error_code ec;
  if (!fs::exists(binfmt, ec)) {
    throw Error(ErrorCode::EmulationUnavailable,
                "no binfmt_misc registration for " + name +
                    "; register it on the host (e.g. install qemu-user-static or "
                    "binfmt-support) or pass --emulator for a registered one");
  }
  fs::create_directories(target.parent_path());
  fs::copy_file(source, target, fs::copy_options::overwrite_existing);
  fs::permissions(target, fs::perms(0755));
  return 0;
}

int RealExecutor::unmount(const Action& a) {
  auto umount = tool("umount").string();
  std::string output;
  int status = exec({umount, a.at("target")}, std::nullopt, {}, std::nullopt, &output);
  // busy mounts (lingering guest daemons) are detached lazily
  if (status != 0) status = exec({umount, "-l", a.at("target")});
  auto part = partition_loops_.find(a.at("target"));
  if (status == 0 && part != partition_loops_.end()) {
    status = exec({tool("losetup").string(), "-d", part->second});
    partition_loops_.erase(part);
  }
  return status;
}

int RealExecutor::loop_detach(const Action& a) {
  auto it = loops_.find(a.at("handle"));
  if (it == loops_.end()) return 0;
  int status = exec({tool("losetup").string(), "-d", it->second.device});
  loops_.erase(it);
  return status;
}

int RealExecutor::host_exec(const Action& a) {
  if (::access("/bin/sh", X_OK) != 0) {
    throw Error(ErrorCode::ShellUnavailable, "/bin/sh is not available on the host");
  }
  std::optional<std::string> input;
  if (auto* in = a.find("stdin")) input = *in;
  std::optional<std::vector<std::string>> env;
  if (!options_.host_env.empty()) env = options_.host_env;
  return exec({"/bin/sh", "-c", a.at("command")}, input, fs::path(a.at("cwd")), env);
}

int RealExecutor::guest_exec(const Action& a) {
  require_root("running commands in the guest (chroot)");
  fs::path root(a.at("root"));
  std::string shell;
  for (const char* candidate : {"/bin/sh", "/bin/bash"}) {
    std::error_code ec;
    if (fs::exists(fs::symlink_status(guest_path_on_host(root, candidate), ec))) {
      shell = candidate;
      break;
    }
  }
  if (shell.empty()) {
    throw Error(ErrorCode::ShellUnavailable,
                "guest image has neither /bin/sh nor /bin/bash under " + root.string());
  }

  std::vector<std::string> env{"PATH=" + a.at("path"), "HOME=/root", "LC_ALL=C"};
  for (const auto& [key, value] : a.fields) {
    if (key.rfind("env.", 0) == 0) env.push_back(key.substr(4) + "=" + value);
  }
  std::optional<std::string> input;
  if (auto* in = a.find("stdin")) input = *in;
  return exec({tool("chroot").string(), root.string(), shell, "-c", a.at("command")}, input, {},
              env);
}

int RealExecutor::copy_in(const Action& a) {
  fs::path src(a.at("src"));
  fs::path dst(a.at("dst"));
  std::error_code ec;
  if (!fs::exists(src, ec)) {
    throw Error(ErrorCode::SourceMissing, "INSTALL source " + src.string() + " does not exist");
  }
  if (fs::is_directory(dst, ec) && !fs::is_directory(src, ec)) dst /= src.filename();
  fs::create_directories(dst.parent_path(), ec);
  fs::copy(src, dst,
           fs::copy_options::recursive | fs::copy_options::overwrite_existing |
               fs::copy_options::copy_symlinks);

  if (auto* mode = a.find("mode")) {
    auto bits = static_cast<fs::perms>(parse_mode(*mode));
    fs::permissions(dst, bits);
    if (fs::is_directory(dst)) {
      for (const auto& entry : fs::recursive_directory_iterator(dst)) {
        if (!entry.is_symlink()) fs::permissions(entry.path(), bits);
      }
    }
  }
  return 0;
}

}  // namespace imgforge
