#pragma once

#include <gtest/gtest.h>

#include <functional>

#include "bonenet/error.hpp"

namespace testing_support {

// Code of the bonenet::Error thrown by f; records a failure if none is.
inline bonenet::ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const bonenet::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no bonenet::Error thrown";
  return bonenet::ErrorCode::Undefined;
}

}  // namespace testing_support
