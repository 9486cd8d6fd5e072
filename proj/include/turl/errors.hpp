#pragma once

#include <stdexcept>
#include <string>

namespace turl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define TURL_DEFINE_ERROR(Name)                                          \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
  }

TURL_DEFINE_ERROR(ParseError);
TURL_DEFINE_ERROR(ShapeMismatch);
TURL_DEFINE_ERROR(IndexOutOfRange);
TURL_DEFINE_ERROR(AllMaskedRow);
TURL_DEFINE_ERROR(UnknownId);
TURL_DEFINE_ERROR(TableTooSmall);
TURL_DEFINE_ERROR(GoldNotInCandidates);
TURL_DEFINE_ERROR(EmptyCandidateSet);
TURL_DEFINE_ERROR(EmptyColumn);
TURL_DEFINE_ERROR(MissingSideData);
TURL_DEFINE_ERROR(CorruptCheckpoint);
TURL_DEFINE_ERROR(VersionMismatch);
TURL_DEFINE_ERROR(ConfigError);
TURL_DEFINE_ERROR(IoError);

#undef TURL_DEFINE_ERROR

}  // namespace turl
