#include "imgforge/errors.hpp"

namespace imgforge {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::PifileNotFound: return "PifileNotFound";
    case ErrorCode::UnknownCommand: return "UnknownCommand";
    case ErrorCode::MalformedArgs: return "MalformedArgs";
    case ErrorCode::UnterminatedHeredoc: return "UnterminatedHeredoc";
    case ErrorCode::IncludeCycle: return "IncludeCycle";
    case ErrorCode::IncludeNotFound: return "IncludeNotFound";
    case ErrorCode::MissingSource: return "MissingSource";
    case ErrorCode::ConflictingSource: return "ConflictingSource";
    case ErrorCode::InvalidPartitionIndex: return "InvalidPartitionIndex";
    case ErrorCode::DeviceWriteNotConfirmed: return "DeviceWriteNotConfirmed";
    case ErrorCode::MalformedSize: return "MalformedSize";
    case ErrorCode::MissingBootSignature: return "MissingBootSignature";
    case ErrorCode::ShortImage: return "ShortImage";
    case ErrorCode::InvalidTable: return "InvalidTable";
    case ErrorCode::UnsupportedGpt: return "UnsupportedGpt";
    case ErrorCode::IsBlockDevice: return "IsBlockDevice";
    case ErrorCode::PartitionNotLast: return "PartitionNotLast";
    case ErrorCode::EmptyPartitionSlot: return "EmptyPartitionSlot";
    case ErrorCode::ExtendedPartition: return "ExtendedPartition";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::SourceNotFound: return "SourceNotFound";
    case ErrorCode::FetchFailed: return "FetchFailed";
    case ErrorCode::CacheUnwritable: return "CacheUnwritable";
    case ErrorCode::CacheMiss: return "CacheMiss";
    case ErrorCode::UnsupportedArchive: return "UnsupportedArchive";
    case ErrorCode::MultipleImagesInArchive: return "MultipleImagesInArchive";
    case ErrorCode::CorruptArchive: return "CorruptArchive";
    case ErrorCode::DestinationIsDirectory: return "DestinationIsDirectory";
    case ErrorCode::RootPartitionUnmountable: return "RootPartitionUnmountable";
    case ErrorCode::CommandFailed: return "CommandFailed";
    case ErrorCode::ShellUnavailable: return "ShellUnavailable";
    case ErrorCode::ChrootUnavailable: return "ChrootUnavailable";
    case ErrorCode::EmulationUnavailable: return "EmulationUnavailable";
    case ErrorCode::SourceMissing: return "SourceMissing";
    case ErrorCode::InvalidMode: return "InvalidMode";
  }
  return "Unknown";
}

ErrorClass classify(ErrorCode code) {
  switch (code) {
    case ErrorCode::PifileNotFound:
    case ErrorCode::UnknownCommand:
    case ErrorCode::MalformedArgs:
    case ErrorCode::UnterminatedHeredoc:
    case ErrorCode::IncludeCycle:
    case ErrorCode::IncludeNotFound:
    case ErrorCode::MissingSource:
    case ErrorCode::ConflictingSource:
    case ErrorCode::InvalidPartitionIndex:
    case ErrorCode::DeviceWriteNotConfirmed:
    case ErrorCode::MalformedSize:
    case ErrorCode::SourceNotFound:
    case ErrorCode::InvalidMode:
      return ErrorClass::Static;
    case ErrorCode::ShellUnavailable:
    case ErrorCode::ChrootUnavailable:
    case ErrorCode::EmulationUnavailable:
    case ErrorCode::CacheUnwritable:
    case ErrorCode::CacheMiss:
      return ErrorClass::Environment;
    default:
      return ErrorClass::Dynamic;
  }
}

Error::Error(ErrorCode code, std::string message, std::optional<SourceLine> origin)
    : std::runtime_error(std::move(message)), code_(code), origin_(std::move(origin)) {}

std::string Error::describe() const {
  if (!origin_) return what();
  return origin_->file.filename().string() + ":" + std::to_string(origin_->line_no) + ": " +
         what();
}

}  // namespace imgforge
