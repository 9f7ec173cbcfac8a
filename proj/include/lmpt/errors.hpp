#pragma once

#include <stdexcept>
#include <string>

namespace lmpt {

// Broad classes used to map failures onto process exit codes.
enum class ErrorClass { Config, Schema, Numerical, Io };

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), class_(cls) {}
  ErrorClass error_class() const noexcept { return class_; }

 private:
  ErrorClass class_;
};

#define LMPT_DEFINE_ERROR(Name, Class)                                      \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& what) : Error(ErrorClass::Class, what) {} \
  };

LMPT_DEFINE_ERROR(DegenerateCloud, Numerical)
LMPT_DEFINE_ERROR(DegenerateMesh, Numerical)
LMPT_DEFINE_ERROR(InsufficientPoints, Config)
LMPT_DEFINE_ERROR(EmptySet, Schema)
LMPT_DEFINE_ERROR(InvalidInput, Numerical)
LMPT_DEFINE_ERROR(ShapeError, Numerical)
LMPT_DEFINE_ERROR(IndexError, Numerical)
LMPT_DEFINE_ERROR(ConfigError, Config)
LMPT_DEFINE_ERROR(KTooLarge, Config)
LMPT_DEFINE_ERROR(ConditionError, Schema)
LMPT_DEFINE_ERROR(SchemaError, Schema)
LMPT_DEFINE_ERROR(RangeError, Config)
LMPT_DEFINE_ERROR(CheckpointError, Io)
LMPT_DEFINE_ERROR(FormatError, Io)
LMPT_DEFINE_ERROR(EmptyEval, Schema)
LMPT_DEFINE_ERROR(IoError, Io)

#undef LMPT_DEFINE_ERROR

}  // namespace lmpt
