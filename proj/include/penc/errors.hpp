#pragma once

#include <stdexcept>
#include <string>

namespace penc {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define PENC_DEFINE_ERROR(name)                    \
    class name : public Error {                    \
    public:                                        \
        using Error::Error;                        \
    }

PENC_DEFINE_ERROR(InvalidArgument);
PENC_DEFINE_ERROR(DimensionMismatch);
PENC_DEFINE_ERROR(ShapeMismatch);
PENC_DEFINE_ERROR(IndexOutOfRange);
PENC_DEFINE_ERROR(NonFiniteObjective);
PENC_DEFINE_ERROR(SingularSystem);
PENC_DEFINE_ERROR(MissingNeighbor);
PENC_DEFINE_ERROR(NoMissingFrame);
PENC_DEFINE_ERROR(MultipleMissingFrames);
PENC_DEFINE_ERROR(EmptyDataset);
PENC_DEFINE_ERROR(InconsistentShapes);
PENC_DEFINE_ERROR(PatchOutOfBounds);
PENC_DEFINE_ERROR(EmptyImageBank);
PENC_DEFINE_ERROR(SingleClass);
PENC_DEFINE_ERROR(DegenerateDesign);
PENC_DEFINE_ERROR(ConfigError);
PENC_DEFINE_ERROR(IoError);

#undef PENC_DEFINE_ERROR

} // namespace penc
