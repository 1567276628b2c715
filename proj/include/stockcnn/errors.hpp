#pragma once

#include <stdexcept>
#include <string>

namespace stockcnn {

// Error taxonomy. Every throw site attaches enough context (line number,
// date, field, path) for the message to stand alone.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : Error {
    using Error::Error;
};
struct ValidationError : Error {
    using Error::Error;
};
struct DomainError : Error {
    using Error::Error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct FormatError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct CapacityError : Error {
    using Error::Error;
};
struct EncodingError : Error {
    using Error::Error;
};
struct FeatureError : Error {
    using Error::Error;
};
struct TrainError : Error {
    using Error::Error;
};

}  // namespace stockcnn
