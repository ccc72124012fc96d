#ifndef ANCHORFUSE_ERRORS_HPP_
#define ANCHORFUSE_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace anchorfuse {

// Base class for all library errors. Subclasses name the failure mode so
// callers can catch precisely.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidInput : Error { using Error::Error; };
struct DimensionError : Error { using Error::Error; };
struct SingularMatrix : Error { using Error::Error; };
struct DegenerateVariance : Error { using Error::Error; };
struct DegenerateEstimates : Error { using Error::Error; };
struct InsufficientEstimates : Error { using Error::Error; };
struct EmptyDataset : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct ConsistencyError : Error { using Error::Error; };
struct InvalidConfig : Error { using Error::Error; };
struct DegenerateLabels : Error { using Error::Error; };
struct TrainingDiverged : Error { using Error::Error; };
struct EmptyInput : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct IncompleteRun : Error { using Error::Error; };
struct InvalidSpec : Error { using Error::Error; };

}  // namespace anchorfuse

#endif  // ANCHORFUSE_ERRORS_HPP_
