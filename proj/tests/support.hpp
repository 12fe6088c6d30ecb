// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <doctest.h>

#include <functional>

#include "rppg/error.hpp"

namespace rppg::testing {

/// Runs f and returns the code of the rppg::Error it throws.
inline ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an rppg::Error");
  return ErrorCode::InvalidConfig;
}

}  // namespace rppg::testing
