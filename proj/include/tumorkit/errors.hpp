#ifndef TUMORKIT_ERRORS_HPP
#define TUMORKIT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace tumorkit {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

#define TUMORKIT_DEFINE_ERROR(Name)                                            \
  class Name : public Error {                                                  \
  public:                                                                      \
    using Error::Error;                                                        \
  }

TUMORKIT_DEFINE_ERROR(FormatError);      // malformed file contents
TUMORKIT_DEFINE_ERROR(UnsupportedError); // valid but unsupported file variant
TUMORKIT_DEFINE_ERROR(IoError);
TUMORKIT_DEFINE_ERROR(ShapeError);       // dims/spacing/shape mismatch
TUMORKIT_DEFINE_ERROR(EmptyMaskError);
TUMORKIT_DEFINE_ERROR(LabelError);       // label outside {0,1,2,3}
TUMORKIT_DEFINE_ERROR(RangeError);       // probability outside [0,1]
TUMORKIT_DEFINE_ERROR(ArityError);
TUMORKIT_DEFINE_ERROR(ConfigError);
TUMORKIT_DEFINE_ERROR(InfeasibleError);
TUMORKIT_DEFINE_ERROR(DegenerateError);
TUMORKIT_DEFINE_ERROR(IncompleteError);

#undef TUMORKIT_DEFINE_ERROR

} // namespace tumorkit

#endif // TUMORKIT_ERRORS_HPP
