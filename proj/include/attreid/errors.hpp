#pragma once

#include <stdexcept>
#include <string>

namespace attreid {

// Base class for every error thrown by the library.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeMismatch : Error {
    using Error::Error;
};
struct SchemaMismatch : Error {
    using Error::Error;
};
struct IndexOutOfRange : Error {
    using Error::Error;
};
struct InvalidParam : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct ParseError : Error {
    using Error::Error;
};
struct MissingAttributes : Error {
    using Error::Error;
};
struct TooFewIdentities : Error {
    using Error::Error;
};
struct DegeneratePair : Error {
    using Error::Error;
};
struct ZeroDistance : Error {
    using Error::Error;
};
struct BatchTooSmall : Error {
    using Error::Error;
};
struct NonFinite : Error {
    using Error::Error;
};
struct NonFiniteLoss : Error {
    using Error::Error;
};
struct EmptyGallery : Error {
    using Error::Error;
};
struct NoValidQueries : Error {
    using Error::Error;
};
struct UnknownImage : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

}  // namespace attreid
