#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hamil {

// Root of every error raised by the library. kind() is a stable
// machine-readable tag used by the CLI's stderr error line.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual std::string_view kind() const noexcept = 0;
};

#define HAMIL_DECLARE_ERROR(Name, Base, tag)                        \
  class Name : public Base {                                        \
   public:                                                          \
    using Base::Base;                                               \
    std::string_view kind() const noexcept override { return tag; } \
  }

HAMIL_DECLARE_ERROR(ContractViolation, Error, "contract_violation");
HAMIL_DECLARE_ERROR(InvalidInput, Error, "invalid_input");
HAMIL_DECLARE_ERROR(ConfigError, Error, "configuration_error");
HAMIL_DECLARE_ERROR(SamplingError, Error, "sampling_error");
HAMIL_DECLARE_ERROR(UndefinedMetric, Error, "undefined_metric");
HAMIL_DECLARE_ERROR(NotFound, Error, "not_found");
HAMIL_DECLARE_ERROR(DescriptorError, Error, "descriptor_error");

// Raised when a loss or gradient stops being finite. `where` names the
// offending parameter, or the epoch/volume for a loss failure.
class NumericFailure : public Error {
 public:
  NumericFailure(const std::string& where, const std::string& what)
      : Error(what + " (" + where + ")"), where_(where) {}
  std::string_view kind() const noexcept override { return "numeric_failure"; }
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

class IoError : public Error {
 public:
  using Error::Error;
  std::string_view kind() const noexcept override { return "io_error"; }
};

HAMIL_DECLARE_ERROR(CorruptHeader, IoError, "corrupt_header");
HAMIL_DECLARE_ERROR(TruncatedPayload, IoError, "truncated_payload");
HAMIL_DECLARE_ERROR(ConsistencyError, IoError, "consistency_error");
HAMIL_DECLARE_ERROR(ChecksumMismatch, IoError, "checksum_mismatch");
HAMIL_DECLARE_ERROR(VersionMismatch, IoError, "version_mismatch");
HAMIL_DECLARE_ERROR(DigestMismatch, IoError, "digest_mismatch");
HAMIL_DECLARE_ERROR(IncompatibleArchitecture, IoError, "incompatible_architecture");

#undef HAMIL_DECLARE_ERROR

[[noreturn]] void throw_contract(const std::string& what);

inline void require(bool ok, const char* what) {
  if (!ok) throw_contract(what);
}

}  // namespace hamil
