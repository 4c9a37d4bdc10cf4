#pragma once

#include <stdexcept>
#include <string>

namespace edge {

// Errors fall in two buckets that map onto CLI exit codes: validation
// failures (bad input, missing files, inconsistent assets) and runtime
// failures (numerical blow-ups, I/O during a run).
enum class ErrorKind { kValidation, kRuntime };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

#define EDGE_DEFINE_ERROR(Name, Kind)                         \
  class Name : public Error {                                 \
   public:                                                    \
    explicit Name(const std::string& what)                    \
        : Error(ErrorKind::Kind, #Name ": " + what) {}        \
  };

// knowledge
EDGE_DEFINE_ERROR(ParseError, kValidation)
EDGE_DEFINE_ERROR(CycleError, kValidation)
EDGE_DEFINE_ERROR(OrphanError, kValidation)
EDGE_DEFINE_ERROR(UnknownDrugError, kValidation)
EDGE_DEFINE_ERROR(UnknownCodeError, kValidation)
EDGE_DEFINE_ERROR(IoError, kValidation)

// data
EDGE_DEFINE_ERROR(MissingYearError, kValidation)
EDGE_DEFINE_ERROR(InsufficientPositivesError, kRuntime)
EDGE_DEFINE_ERROR(InsufficientNegativesError, kRuntime)

// model / training
EDGE_DEFINE_ERROR(EmptyRecordError, kValidation)
EDGE_DEFINE_ERROR(EmptySupportError, kValidation)
EDGE_DEFINE_ERROR(DimensionMismatchError, kValidation)
EDGE_DEFINE_ERROR(NonFiniteError, kRuntime)
EDGE_DEFINE_ERROR(NonFiniteLossError, kRuntime)
EDGE_DEFINE_ERROR(CheckpointError, kRuntime)

// evaluation
EDGE_DEFINE_ERROR(DegenerateLabelsError, kValidation)
EDGE_DEFINE_ERROR(KTooLargeError, kValidation)
EDGE_DEFINE_ERROR(InsufficientEpisodesError, kValidation)

// synthgen / cli
EDGE_DEFINE_ERROR(SpecError, kValidation)
EDGE_DEFINE_ERROR(ConfigError, kValidation)

#undef EDGE_DEFINE_ERROR

}  // namespace edge
