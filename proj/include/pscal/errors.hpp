#pragma once

#include <stdexcept>
#include <string>

namespace pscal {

// Exit-code categories used by the CLI: numerical failures map to 1,
// usage errors to 2, I/O errors to 3.
enum class ErrorKind { numerical, usage, io };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define PSCAL_DEFINE_ERROR(Name, Kind)                          \
  class Name : public Error {                                   \
   public:                                                      \
    explicit Name(const std::string& what)                      \
        : Error(ErrorKind::Kind, std::string(#Name) + ": " + what) {} \
  }

// data model
PSCAL_DEFINE_ERROR(MissingObservedOutcome, numerical);
PSCAL_DEFINE_ERROR(EmptyRespondents, numerical);
PSCAL_DEFINE_ERROR(RankDeficient, numerical);
PSCAL_DEFINE_ERROR(NoCompleteCases, numerical);

// solvers
PSCAL_DEFINE_ERROR(Infeasible, numerical);
PSCAL_DEFINE_ERROR(SingularJacobian, numerical);
PSCAL_DEFINE_ERROR(MaxIterations, numerical);
PSCAL_DEFINE_ERROR(NoRoot, numerical);
PSCAL_DEFINE_ERROR(Separation, numerical);
PSCAL_DEFINE_ERROR(NonPositiveWeight, numerical);
PSCAL_DEFINE_ERROR(SingularTau, numerical);
PSCAL_DEFINE_ERROR(NoConvergence, numerical);
PSCAL_DEFINE_ERROR(TooManyFailures, numerical);

// cli / io
PSCAL_DEFINE_ERROR(UnknownFlag, usage);
PSCAL_DEFINE_ERROR(MissingRequired, usage);
PSCAL_DEFINE_ERROR(BadColumn, usage);
PSCAL_DEFINE_ERROR(ParseError, io);
PSCAL_DEFINE_ERROR(NonNumeric, io);
PSCAL_DEFINE_ERROR(IoError, io);

#undef PSCAL_DEFINE_ERROR

}  // namespace pscal
