#pragma once

#include <stdexcept>
#include <string>

namespace rndkit {

/// Base of every error raised by the library. The exit code is what the CLI
/// returns when the error escapes a subcommand.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    [[nodiscard]] virtual int exit_code() const noexcept { return 4; }
};

/// Invalid parameter or configuration value.
class ParameterError : public Error {
public:
    using Error::Error;
    [[nodiscard]] int exit_code() const noexcept override { return 2; }
};

/// Malformed or missing input data.
class DataError : public Error {
public:
    using Error::Error;
    [[nodiscard]] int exit_code() const noexcept override { return 3; }
};

/// A numerical procedure failed (non-convergence, singular system, ...).
class NumericError : public Error {
public:
    using Error::Error;
};

/// A price lies outside the static no-arbitrage band of the instrument.
class OutOfBand : public NumericError {
public:
    enum class Bound { Lower, Upper };

    OutOfBand(Bound violated, double bound, double price)
        : NumericError(std::string("price ") + std::to_string(price) + " outside no-arbitrage band ("
                       + (violated == Bound::Lower ? "below lower" : "above upper") + " bound "
                       + std::to_string(bound) + ")"),
          violated_(violated), bound_(bound), price_(price) {}

    [[nodiscard]] Bound violated() const noexcept { return violated_; }
    [[nodiscard]] double bound() const noexcept { return bound_; }
    [[nodiscard]] double price() const noexcept { return price_; }

private:
    Bound violated_;
    double bound_;
    double price_;
};

}  // namespace rndkit
