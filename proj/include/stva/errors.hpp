#pragma once

#include <stdexcept>
#include <string>

namespace stva {

// Bad or inconsistent input (files, configs, argument ranges). CLI exit code 1.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical breakdown (divergence, failed factorization). CLI exit code 2.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace stva
