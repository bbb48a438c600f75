#pragma once

#include <stdexcept>
#include <string>

namespace translico {

// Base of every error the library throws. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define TRANSLICO_DEFINE_ERROR(Name, Base)   \
  class Name : public Base {                 \
   public:                                   \
    using Base::Base;                        \
  };

// romanizer
TRANSLICO_DEFINE_ERROR(RuleTableInvalid, Error)
TRANSLICO_DEFINE_ERROR(DuplicateRule, RuleTableInvalid)
TRANSLICO_DEFINE_ERROR(NonAsciiReplacement, RuleTableInvalid)

class ParseError : public RuleTableInvalid {
 public:
  ParseError(const std::string& what, std::size_t line)
      : RuleTableInvalid("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// corpus
TRANSLICO_DEFINE_ERROR(EmptyCorpus, Error)
TRANSLICO_DEFINE_ERROR(InsufficientData, Error)
TRANSLICO_DEFINE_ERROR(FormatError, Error)

// tensor / encoder
TRANSLICO_DEFINE_ERROR(ShapeMismatch, Error)
TRANSLICO_DEFINE_ERROR(DegenerateNorm, Error)
TRANSLICO_DEFINE_ERROR(NonScalarLoss, Error)
TRANSLICO_DEFINE_ERROR(IdOutOfRange, Error)
TRANSLICO_DEFINE_ERROR(EmptyPool, Error)
TRANSLICO_DEFINE_ERROR(ConfigError, Error)

// objectives / trainer
TRANSLICO_DEFINE_ERROR(NoContent, Error)
TRANSLICO_DEFINE_ERROR(EmptyMaskSet, Error)
TRANSLICO_DEFINE_ERROR(NonFinite, Error)
TRANSLICO_DEFINE_ERROR(StreamExhausted, Error)
TRANSLICO_DEFINE_ERROR(IoError, Error)

// eval
TRANSLICO_DEFINE_ERROR(InsufficientGroups, Error)

#undef TRANSLICO_DEFINE_ERROR

}  // namespace translico
