#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace prosum {

using Index = std::int64_t;

// Error hierarchy. CLI maps these onto exit codes:
//   ConfigError/usage -> 1, data & integrity -> 2, divergence -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidArgument : Error {
    using Error::Error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct InvalidDescriptor : Error {
    using Error::Error;
};

struct ParseError : Error {
    using Error::Error;
};

struct IntegrityError : Error {
    using Error::Error;
};

struct FetchError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct DivergenceError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace prosum
