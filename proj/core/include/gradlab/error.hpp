#pragma once

#include <stdexcept>
#include <string>

namespace gradlab {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvalidInput : Error {
    using Error::Error;
};
struct InvalidSpec : Error {
    using Error::Error;
};
struct InvalidMask : Error {
    using Error::Error;
};
struct NumericalFailure : Error {
    using Error::Error;
};
struct DegenerateGradient : Error {
    using Error::Error;
};
struct AmbiguousLabel : Error {
    using Error::Error;
};
struct NoUsableRow : Error {
    using Error::Error;
};
struct NoBias : Error {
    using Error::Error;
};
struct CorruptDataset : Error {
    using Error::Error;
};

}  // namespace gradlab
