// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace treesr {

// Base for every error the library raises. Subclasses distinguish the
// category so the CLI can map them onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration values, unknown keys, bad CLI usage.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Mismatched dimensions, prediction counts or tree structure.
class ShapeError : public Error {
public:
    using Error::Error;
};

// File system and codec failures (PNG, manifest).
class IoError : public Error {
public:
    using Error::Error;
};

// Checkpoint version/config-hash/truncation failures.
class CheckpointError : public Error {
public:
    using Error::Error;
};

// Training diverged (non-finite loss).
class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace treesr
