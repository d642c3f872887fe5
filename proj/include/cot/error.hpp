#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cot {

enum class Errc {
    ShapeMismatch,
    DivisionByNearZero,
    NonFiniteDisparity,
    NonScalarLoss,
    DoubleBackward,
    InvalidArch,
    ThresholdOutOfRange,
    EmptyNormalizer,
    NegativeInput,
    DegenerateCrop,
    NonFiniteLoss,
    InvalidSpec,
    InvalidConfig,
    MalformedHeader,
    TruncatedData,
    UnsupportedFormat,
    WrongBitDepth,
    EmptyMask,
    MissingOcclusionTruth,
    Io,
    AlreadyExists,
};

std::string_view errc_name(Errc code) noexcept;

// All failures surfaced by the library carry a machine-checkable code.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

}  // namespace cot
