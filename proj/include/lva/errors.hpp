#pragma once

#include <stdexcept>
#include <string>

namespace lva {

/// Dimension mismatch between operands.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite or otherwise invalid numeric input.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Out-of-range index or invalid parameter.
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed model/dataset document. The message carries line or field context.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Model structure not supported by the requested operation
/// (e.g. closed-form adaptation with a nonlinear output layer).
class UnsupportedModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class TrainingError : public std::runtime_error {
public:
    TrainingError(const std::string& what, int last_finite_epoch, double last_finite_loss)
        : std::runtime_error(what), last_finite_epoch_(last_finite_epoch), last_finite_loss_(last_finite_loss) {}

    int last_finite_epoch() const noexcept { return last_finite_epoch_; }
    double last_finite_loss() const noexcept { return last_finite_loss_; }

private:
    int last_finite_epoch_;
    double last_finite_loss_;
};

}  // namespace lva
