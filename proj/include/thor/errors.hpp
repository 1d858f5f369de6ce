#pragma once

#include <stdexcept>
#include <string>

namespace thor {

/// Invalid parameters: schedule bounds, plan ordering, structuring elements.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Two grids that must agree in shape do not.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A checkpoint was trained under a different schedule or noise source.
class CompatibilityError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File could not be read, written, or parsed.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An anomaly could not be placed or a dataset could not be built.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace thor
