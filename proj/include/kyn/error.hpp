// Copyright 2026 The KYN Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef KYN_ERROR_HPP
#define KYN_ERROR_HPP

#include <stdexcept>
#include <string>

namespace kyn {

// Values mirror kyn_status in kyn.h.
enum class ErrorCode {
  kInvalidArgument = 1,
  kParse = 2,
  kValidation = 3,
  kNotFound = 4,
  kStageOrder = 5,
  kUnsupportedFormat = 6,
  kIo = 7,
  kStructural = 8,
  kNumeric = 9,
  kInternal = 10,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace kyn

#endif  // KYN_ERROR_HPP
