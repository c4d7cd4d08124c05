#pragma once

#include <stdexcept>
#include <string>

namespace cbr {

/// Base class for every domain error raised by the engine. The CLI maps
/// these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CBR_DECLARE_ERROR(Name)          \
  class Name : public Error {            \
   public:                               \
    using Error::Error;                  \
  }

CBR_DECLARE_ERROR(LabelParseError);
CBR_DECLARE_ERROR(RowError);
CBR_DECLARE_ERROR(AugmentationError);
CBR_DECLARE_ERROR(MissingRepresentationError);
CBR_DECLARE_ERROR(UnsupportedKindError);
CBR_DECLARE_ERROR(ClientError);
CBR_DECLARE_ERROR(OfflineCacheMissError);
CBR_DECLARE_ERROR(DemoError);
CBR_DECLARE_ERROR(EncodeError);
CBR_DECLARE_ERROR(MissingEmbeddingError);
CBR_DECLARE_ERROR(FormatError);
CBR_DECLARE_ERROR(DegenerateVectorError);
CBR_DECLARE_ERROR(DimError);
CBR_DECLARE_ERROR(IndexMissingError);
CBR_DECLARE_ERROR(MaskError);
CBR_DECLARE_ERROR(CacheError);
CBR_DECLARE_ERROR(NumericsError);
CBR_DECLARE_ERROR(ShapeError);
CBR_DECLARE_ERROR(IoError);

#undef CBR_DECLARE_ERROR

/// Invalid configuration or arguments. The CLI maps this to exit code 2
/// when it originates from option resolution.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace cbr
