#pragma once

#include <stdexcept>
#include <string>

namespace fgpfe {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class FormatError : public IoError {
public:
    using IoError::IoError;
};

// Carries the dotted config key that failed validation, e.g. "model.c_p".
class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& what)
        : Error(key + ": " + what), key_(std::move(key)) {}

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace fgpfe
