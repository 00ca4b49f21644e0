#pragma once

#include <stdexcept>

namespace sctopic {

// Bad input data: unparseable files, inconsistent shapes, unknown names.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace sctopic
