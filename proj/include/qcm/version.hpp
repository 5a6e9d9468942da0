#pragma once

namespace qcm {

inline constexpr const char* kVersion = "0.1.0";

}
