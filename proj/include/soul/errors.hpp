#pragma once

#include <stdexcept>
#include <string>

namespace soul {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define SOUL_DEFINE_ERROR(Name)                  \
  struct Name : Error {                          \
    using Error::Error;                          \
  }

SOUL_DEFINE_ERROR(InvalidMatrix);
SOUL_DEFINE_ERROR(DimMismatch);
SOUL_DEFINE_ERROR(ZeroVector);
SOUL_DEFINE_ERROR(EmptyInput);
SOUL_DEFINE_ERROR(EmptyBatch);
SOUL_DEFINE_ERROR(EmptyMemory);
SOUL_DEFINE_ERROR(EmptyTask);
SOUL_DEFINE_ERROR(NoLabels);
SOUL_DEFINE_ERROR(NoExemplars);
SOUL_DEFINE_ERROR(SchemaError);
SOUL_DEFINE_ERROR(TaskError);
SOUL_DEFINE_ERROR(SpecError);
SOUL_DEFINE_ERROR(DegenerateLabels);
SOUL_DEFINE_ERROR(InsufficientPoints);
SOUL_DEFINE_ERROR(IoError);

#undef SOUL_DEFINE_ERROR

}  // namespace soul
