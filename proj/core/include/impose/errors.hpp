#pragma once

#include <stdexcept>
#include <string>

namespace impose {

/// File missing, unreadable, or a read/write stopped short.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed content: bad magic, unsupported version, unparsable row.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shapes that should chain do not (layer dims, feature widths, batch sizes).
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A pose arrived in the wrong coordinate frame.
struct FrameError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Degenerate numeric input: zero-norm vector, all-zero weights, too few samples.
struct DegenerateError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Non-finite value surfaced where the computation cannot continue.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace impose
