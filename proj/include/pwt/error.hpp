// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace pwt {

/// Error with a stable machine-readable code ("solver-diverged", ...) plus a
/// human-readable detail string. CLI maps validation codes to exit code 1 and
/// runtime codes to exit code 2.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& detail)
      : std::runtime_error(code + ": " + detail), code_(std::move(code)) {}

  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

}  // namespace pwt
