#pragma once

#include <stdexcept>
#include <string>

namespace rvqlab {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Precondition or argument violations.
struct InvalidArgument : Error {
    using Error::Error;
};

// Malformed files: WAV headers, parameter blobs, codebook blobs, manifests.
struct FormatError : Error {
    using Error::Error;
};

// CTC target cannot be aligned within the available frames.
struct InfeasibleAlignment : Error {
    using Error::Error;
};

// Optimization produced a non-finite loss.
struct TrainingFailure : Error {
    TrainingFailure(const std::string& msg, int epoch_index)
        : Error(msg), epoch(epoch_index) {}
    int epoch;
};

// Token grid refers to centroids that do not exist.
struct CorruptTokens : Error {
    using Error::Error;
};

// No clean (eps=0) row for the requested configuration.
struct MissingBaseline : Error {
    using Error::Error;
};

// Rank correlation of a constant sequence.
struct UndefinedCorrelation : Error {
    using Error::Error;
};

// Report asked for defense rows the table does not contain.
struct MissingConfig : Error {
    using Error::Error;
};

}  // namespace rvqlab
