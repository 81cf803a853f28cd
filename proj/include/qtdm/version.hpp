/**
 * This code is part of QTDM.
 *
 * This code is licensed under the Apache License, Version 2.0. You may
 * obtain a copy of this license at http://www.apache.org/licenses/LICENSE-2.0.
 */

#pragma once

namespace qtdm {

inline constexpr const char* kVersion = "0.1.0";

} // namespace qtdm
