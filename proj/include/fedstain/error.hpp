#pragma once

#include <stdexcept>
#include <string>

namespace fedstain {

// Base of every error raised by the library. `invalid_input()` separates
// caller mistakes (bad config, infeasible spec, missing file) from runtime
// failures; the CLI maps them to exit codes 2 and 1.
class Error : public std::runtime_error {
 public:
  Error(const std::string& what, bool invalid_input)
      : std::runtime_error(what), invalid_input_(invalid_input) {}
  bool invalid_input() const noexcept { return invalid_input_; }

 private:
  bool invalid_input_;
};

#define FEDSTAIN_DECLARE_ERROR(Name, is_input)                         \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(what, is_input) {}  \
  }

FEDSTAIN_DECLARE_ERROR(InvalidArgument, true);
FEDSTAIN_DECLARE_ERROR(ShapeMismatch, true);
FEDSTAIN_DECLARE_ERROR(ConstantChannel, false);
FEDSTAIN_DECLARE_ERROR(InvalidWindow, true);
FEDSTAIN_DECLARE_ERROR(DegenerateInput, true);
FEDSTAIN_DECLARE_ERROR(UnknownClient, true);
FEDSTAIN_DECLARE_ERROR(EmptyPool, false);
FEDSTAIN_DECLARE_ERROR(NoPositives, false);
FEDSTAIN_DECLARE_ERROR(NonFiniteLoss, false);
FEDSTAIN_DECLARE_ERROR(PartitionInfeasible, true);
FEDSTAIN_DECLARE_ERROR(StaleMessage, false);
FEDSTAIN_DECLARE_ERROR(ProtocolViolation, false);
FEDSTAIN_DECLARE_ERROR(EmptyRound, false);
FEDSTAIN_DECLARE_ERROR(InfeasibleShape, true);
FEDSTAIN_DECLARE_ERROR(ImageTooSmall, true);
FEDSTAIN_DECLARE_ERROR(FormatError, true);
FEDSTAIN_DECLARE_ERROR(IoError, true);

#undef FEDSTAIN_DECLARE_ERROR

}  // namespace fedstain
