#pragma once

#include <stdexcept>
#include <string>

namespace pme {

/// Base class for every error raised by the library. `kind()` is a stable
/// machine-readable tag used by the CLI to pick an exit code and by reports.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define PME_DEFINE_ERROR(Name)                                    \
  class Name : public Error {                                     \
   public:                                                        \
    explicit Name(const std::string& what) : Error(#Name, what) {} \
  }

PME_DEFINE_ERROR(InvalidArgument);
PME_DEFINE_ERROR(EmptyCylinder);
PME_DEFINE_ERROR(NewtonDivergence);
PME_DEFINE_ERROR(NegativeBoundary);
PME_DEFINE_ERROR(MissingSmoothness);
PME_DEFINE_ERROR(SandwichFailure);
PME_DEFINE_ERROR(NotRegular);
PME_DEFINE_ERROR(EmptyClass);
PME_DEFINE_ERROR(MismatchedGrids);
PME_DEFINE_ERROR(ConfigError);
PME_DEFINE_ERROR(IOError);
PME_DEFINE_ERROR(BoundaryOrderingViolated);

#undef PME_DEFINE_ERROR

}  // namespace pme
