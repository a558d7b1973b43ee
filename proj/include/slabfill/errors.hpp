#ifndef SLABFILL_ERRORS_HPP
#define SLABFILL_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace slabfill {

struct SlabfillError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// volgrid
struct MalformedHeader : SlabfillError { using SlabfillError::SlabfillError; };
struct UnsupportedDatatype : SlabfillError { using SlabfillError::SlabfillError; };
struct TruncatedData : SlabfillError { using SlabfillError::SlabfillError; };
struct IoFailure : SlabfillError { using SlabfillError::SlabfillError; };
struct OutOfBounds : SlabfillError { using SlabfillError::SlabfillError; };

// synthgen
struct VolumeTooSmall : SlabfillError { using SlabfillError::SlabfillError; };

// unet
struct ShapeNotDivisible : SlabfillError { using SlabfillError::SlabfillError; };
struct ShapeMismatch : SlabfillError { using SlabfillError::SlabfillError; };
struct DegenerateDistances : SlabfillError { using SlabfillError::SlabfillError; };
struct StaleCache : SlabfillError { using SlabfillError::SlabfillError; };

// model files
struct BadMagic : SlabfillError { using SlabfillError::SlabfillError; };
struct VersionMismatch : SlabfillError { using SlabfillError::SlabfillError; };
struct ShapeMismatchWithConfig : SlabfillError { using SlabfillError::SlabfillError; };

// imputer
struct OutOfRange : SlabfillError { using SlabfillError::SlabfillError; };
struct ChannelMismatch : SlabfillError { using SlabfillError::SlabfillError; };
struct InvalidStack : SlabfillError { using SlabfillError::SlabfillError; };

// config / CLI
struct ConfigError : SlabfillError { using SlabfillError::SlabfillError; };

} // namespace slabfill

#endif
