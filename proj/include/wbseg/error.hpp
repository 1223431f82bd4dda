/*
 * wbseg : weakly-supervised soft-label segmentation for whole-body DWI
 *
 * Copyright 2026 the wbseg contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <iostream>
#include <stdexcept>
#include <string>

namespace wbseg {

/// Base class for all wbseg failures.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable, malformed, or unsupported file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration, manifest, or command-line input.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Violated operation precondition (degenerate grids, empty inputs, ...).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or numerically impossible state mid-computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

inline void log_warn(const std::string& msg) {
  std::cerr << "[wbseg] warning: " << msg << std::endl;
}

inline void log_info(const std::string& msg) {
  std::cerr << "[wbseg] " << msg << std::endl;
}

}  // namespace wbseg
