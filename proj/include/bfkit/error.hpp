// Copyright 2026 The bfkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace bfkit {

// Base class for every error thrown by the library. The CLI maps the
// concrete subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A value violates a documented invariant (trace schema, probability range).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Input bytes could not be parsed. `line` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// A caller-supplied parameter is out of its domain (T <= 0, alpha > 1, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// The requested estimate cannot be computed from the given data.
class EstimationError : public Error {
 public:
  using Error::Error;
};

// A run configuration or command-line value is malformed or incomplete.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Transport or HTTP failure that survived the retry policy.
class EndpointError : public Error {
 public:
  using Error::Error;
};

// The server answered but does not provide what we need (no logprobs).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

}  // namespace bfkit
