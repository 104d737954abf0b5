/*
 * Copyright 2026 The pgekit Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace pge {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes disagree with what a primitive expects.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A NaN or infinity surfaced in a computation.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& what, std::size_t index = 0)
        : Error(what), index_(index) {}

    /// Batch, restart or step index the failure is attributed to.
    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

/// Malformed input file (IDX, CSV, binary artifacts).
class ParseError : public Error {
public:
    using Error::Error;
};

/// Arguments violate an operation's preconditions.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Run configuration failed validation. `path()` names the offending field.
class ConfigError : public Error {
public:
    ConfigError(std::string path, const std::string& message)
        : Error(path + ": " + message), path_(std::move(path)) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

}  // namespace pge
