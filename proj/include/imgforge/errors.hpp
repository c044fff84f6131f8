#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace imgforge {

enum class ErrorCode {
  // Pifile parsing
  PifileNotFound,
  UnknownCommand,
  MalformedArgs,
  UnterminatedHeredoc,
  IncludeCycle,
  IncludeNotFound,
  // planning
  MissingSource,
  ConflictingSource,
  InvalidPartitionIndex,
  DeviceWriteNotConfirmed,
  // image
  MalformedSize,
  MissingBootSignature,
  ShortImage,
  InvalidTable,
  UnsupportedGpt,
  IsBlockDevice,
  PartitionNotLast,
  EmptyPartitionSlot,
  ExtendedPartition,
  IoFailure,
  // source
  SourceNotFound,
  FetchFailed,
  CacheUnwritable,
  CacheMiss,
  UnsupportedArchive,
  MultipleImagesInArchive,
  CorruptArchive,
  DestinationIsDirectory,
  // mounts
  RootPartitionUnmountable,
  // executor
  CommandFailed,
  ShellUnavailable,
  ChrootUnavailable,
  EmulationUnavailable,
  SourceMissing,
  InvalidMode,
};

/// Outcome classes, each mapped to exactly one process exit code.
enum class ErrorClass {
  Static = 1,       // Pifile or plan problems detectable before touching anything
  Dynamic = 2,      // failures while executing the pipeline
  Environment = 3,  // host privileges, missing tools, unusable cache
};

std::string_view error_code_name(ErrorCode code);
ErrorClass classify(ErrorCode code);

/// Location of a Pifile line, used as error and log context.
struct SourceLine {
  std::filesystem::path file;
  int line_no = 0;
  std::string text;

  bool operator==(const SourceLine&) const = default;
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message,
        std::optional<SourceLine> origin = std::nullopt);

  ErrorCode code() const noexcept { return code_; }
  ErrorClass error_class() const noexcept { return classify(code_); }
  const std::optional<SourceLine>& origin() const noexcept { return origin_; }

  /// Exit status of a failed command, when the error came from one.
  std::optional<int> status() const noexcept { return status_; }
  Error& with_status(int status) {
    status_ = status;
    return *this;
  }
  Error& with_origin(SourceLine origin) {
    if (!origin_) origin_ = std::move(origin);
    return *this;
  }

  /// `file:line: message` when an origin is attached, else the bare message.
  std::string describe() const;

 private:
  ErrorCode code_;
  std::optional<SourceLine> origin_;
  std::optional<int> status_;
};

}  // namespace imgforge
