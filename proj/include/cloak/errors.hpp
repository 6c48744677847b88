#pragma once

#include <stdexcept>
#include <string>

namespace cloak {

// Precondition violated by a caller-supplied value.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A scene specification cannot be rendered (shapes off-canvas or overlapping).
class GenerationError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

// The attack cannot proceed (e.g. every category was pre-detected).
class AttackError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A metric is undefined on the given outcomes.
class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or unreadable on-disk data (images, manifests, checkpoints, reports).
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A persisted artifact was written by an incompatible format version.
class VersionError : public LoadError {
 public:
  using LoadError::LoadError;
};

}  // namespace cloak
