// Copyright (c) the SDVC Project Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SDVC_TOOLS_CLI_H_
#define SDVC_TOOLS_CLI_H_

#include <ostream>
#include <string>
#include <vector>

#include "sdvc/common.h"

namespace sdvc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUnexpected = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitModel = 3;
inline constexpr int kExitCorruption = 4;
inline constexpr int kExitDivergence = 5;

int ExitCodeFor(ErrorCode code);

// Runs one invocation. `args` excludes the program name.
int RunCli(const std::vector<std::string>& args, std::ostream& out,
           std::ostream& err);

}  // namespace sdvc

#endif  // SDVC_TOOLS_CLI_H_
