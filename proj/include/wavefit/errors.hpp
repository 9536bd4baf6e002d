#ifndef WAVEFIT_ERRORS_HPP
#define WAVEFIT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace wavefit {

/// Bad or inconsistent run configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input data that cannot be parsed or violates a series invariant.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Singular systems, divergence, invalid parameter regions.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace wavefit

#endif // WAVEFIT_ERRORS_HPP
