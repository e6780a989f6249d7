// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string_view>

namespace chirploc {

inline constexpr std::string_view kVersion = "0.1.0";
/// Bumped whenever the on-disk layout of generated or trained outputs changes.
inline constexpr int kLayoutVersion = 1;

}  // namespace chirploc
