#pragma once

#include <stdexcept>
#include <string>

namespace unmask {

/// Base of every exception thrown by the library. Each subclass names the
/// failure category; callers that only care about "something in unmask failed"
/// catch this.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define UNMASK_DEFINE_ERROR(Name)              \
    class Name : public Error {                \
    public:                                    \
        using Error::Error;                    \
    }

UNMASK_DEFINE_ERROR(IoError);
UNMASK_DEFINE_ERROR(FormatError);
UNMASK_DEFINE_ERROR(DimensionError);
UNMASK_DEFINE_ERROR(ParameterError);
UNMASK_DEFINE_ERROR(ConfigError);
UNMASK_DEFINE_ERROR(AnnotationError);
UNMASK_DEFINE_ERROR(TemplateError);
UNMASK_DEFINE_ERROR(DatasetError);
UNMASK_DEFINE_ERROR(TrainingError);
UNMASK_DEFINE_ERROR(NumericError);
UNMASK_DEFINE_ERROR(DegenerateMaskError);
UNMASK_DEFINE_ERROR(CheckpointError);
UNMASK_DEFINE_ERROR(EvaluationError);

#undef UNMASK_DEFINE_ERROR

}  // namespace unmask
